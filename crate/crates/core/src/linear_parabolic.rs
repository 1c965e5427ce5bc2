//! Backward linear parabolic solves `d_s u + Lap u + b . grad u + f = 0`, `u(T) = 0`.
//!
//! The spatial operator at node `i` along one axis is
//! `lower * u[i-1] + upper * u[i+1] - (lower + upper) * u[i]` with
//! `lower = 1/dx^2 + b^-/dx`, `upper = 1/dx^2 + b^+/dx` (upwind) or
//! `1/dx^2 -+ b/(2 dx)` (central). With nonnegative `lower`/`upper` the level
//! matrix `I - theta dt L` is an M-matrix.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{Coeff, Coefficients};
use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, DomainKind, Field, Grid, VectorField};
use crate::scalar::{Point, Real};
use crate::tridiag;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStepping {
    #[default]
    ImplicitEuler,
    CrankNicolson,
}

impl TimeStepping {
    pub fn theta<S: Real>(self) -> S {
        match self {
            TimeStepping::ImplicitEuler => S::one(),
            TimeStepping::CrankNicolson => S::lit(0.5),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Advection {
    #[default]
    Upwind,
    Central,
}

/// How two-dimensional level systems are solved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    /// `(I - theta dt L_x)(I - theta dt L_y) u = rhs`, one tridiagonal solve per line.
    #[default]
    Split,
    /// Alternating line relaxation of the unsplit system to `iterative_tol`.
    Iterative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParabolicScheme {
    pub time_stepping: TimeStepping,
    pub advection: Advection,
    pub splitting: Splitting,
    pub iterative_tol: f64,
    pub max_sweeps: usize,
}

impl Default for ParabolicScheme {
    fn default() -> Self {
        Self {
            time_stepping: TimeStepping::ImplicitEuler,
            advection: Advection::Upwind,
            splitting: Splitting::Split,
            iterative_tol: 1e-13,
            max_sweeps: 500,
        }
    }
}

impl ParabolicScheme {
    pub fn with_advection(advection: Advection) -> Self {
        Self {
            advection,
            ..Self::default()
        }
    }
}

/// Off-diagonal weights `(lower, upper)` for drift component `b`.
#[inline]
pub fn stencil<S: Real>(advection: Advection, b: S, dx: S) -> (S, S) {
    let diff = S::one() / (dx * dx);
    match advection {
        Advection::Upwind => {
            let plus = b.max(S::zero());
            let minus = (-b).max(S::zero());
            (diff + minus / dx, diff + plus / dx)
        }
        Advection::Central => {
            let half = b / (S::lit(2.0) * dx);
            (diff - half, diff + half)
        }
    }
}

/// `L u` along one axis at node `j`; zero at box edge nodes.
#[inline]
fn axis_operator<S: Real>(
    grid: &Grid<S>,
    u: &[S],
    j: usize,
    axis: usize,
    b: S,
    advection: Advection,
) -> S {
    match (grid.neighbor(j, axis, -1), grid.neighbor(j, axis, 1)) {
        (Some(l), Some(r)) => {
            let (lo, up) = stencil(advection, b, grid.dx(axis));
            lo * (u[l] - u[j]) + up * (u[r] - u[j])
        }
        _ => S::zero(),
    }
}

/// Applies `L = Lap + b . grad` at every non-boundary node of one level.
pub fn apply_operator<S: Real>(
    grid: &Grid<S>,
    u: &[S],
    drift: &[Point<S>],
    advection: Advection,
    out: &mut [S],
) {
    for j in 0..grid.space_len() {
        out[j] = if grid.is_boundary(j) {
            S::zero()
        } else {
            (0..grid.dim())
                .map(|axis| axis_operator(grid, u, j, axis, drift[j][axis], advection))
                .sum()
        };
    }
}

/// True when the level update is order preserving: nonnegative off-diagonals and,
/// for Crank-Nicolson, a nonnegative explicit half step.
pub fn is_monotone<S: Real>(
    grid: &Grid<S>,
    drift: &[Point<S>],
    scheme: &ParabolicScheme,
) -> bool {
    let theta: S = scheme.time_stepping.theta();
    let explicit = (S::one() - theta) * grid.dt();
    drift.iter().all(|b| {
        let mut total = S::zero();
        for axis in 0..grid.dim() {
            let (lo, up) = stencil(scheme.advection, b[axis], grid.dx(axis));
            if lo < S::zero() || up < S::zero() {
                return false;
            }
            total += lo + up;
        }
        S::one() - explicit * total >= S::zero()
    })
}

/// Reusable buffers for one-level solves `(I - theta dt L) u = rhs`.
pub(crate) struct LevelSolver<S> {
    sub: Vec<S>,
    diag: Vec<S>,
    sup: Vec<S>,
    line: Vec<S>,
    scratch: Vec<S>,
    work: Vec<S>,
    pub(crate) last_sweeps: usize,
}

impl<S: Real> LevelSolver<S> {
    pub(crate) fn new(grid: &Grid<S>) -> Self {
        let n = grid.nx(0).max(grid.nx(1));
        Self {
            sub: vec![S::zero(); n],
            diag: vec![S::zero(); n],
            sup: vec![S::zero(); n],
            line: vec![S::zero(); n],
            scratch: vec![S::zero(); n],
            work: vec![S::zero(); grid.space_len()],
            last_sweeps: 0,
        }
    }

    /// Solves in place: `u` holds the right-hand side on entry, the solution on exit.
    /// Box edge nodes are set to the boundary data at time `t`.
    pub(crate) fn solve(
        &mut self,
        grid: &Grid<S>,
        scheme: &ParabolicScheme,
        theta_dt: S,
        t: S,
        boundary: &BoundaryCondition<S>,
        drift: &[Point<S>],
        u: &mut [S],
    ) -> Result<()> {
        if let BoundaryCondition::DirichletExact(g) = boundary {
            for j in 0..grid.space_len() {
                if grid.is_boundary(j) {
                    u[j] = g(t, &grid.point(j));
                }
            }
        }
        if grid.dim() == 1 {
            self.solve_lines(grid, scheme.advection, theta_dt, drift, u, 0, None);
            self.last_sweeps = 1;
            return Ok(());
        }
        match scheme.splitting {
            Splitting::Split => {
                self.solve_lines(grid, scheme.advection, theta_dt, drift, u, 0, None);
                self.solve_lines(grid, scheme.advection, theta_dt, drift, u, 1, None);
                self.last_sweeps = 1;
                Ok(())
            }
            Splitting::Iterative => self.relax(grid, scheme, theta_dt, drift, u),
        }
    }

    /// Tridiagonal solves along `axis` for every line that is not a box edge line.
    /// With `coupled = Some(rhs)`, the other axis enters the diagonal implicitly and
    /// its neighbours explicitly from the current iterate (line relaxation).
    #[allow(clippy::too_many_arguments)]
    fn solve_lines(
        &mut self,
        grid: &Grid<S>,
        advection: Advection,
        theta_dt: S,
        drift: &[Point<S>],
        u: &mut [S],
        axis: usize,
        coupled: Option<&[S]>,
    ) {
        let other = 1 - axis;
        let n = grid.nx(axis);
        let lines = if grid.dim() == 1 { 1 } else { grid.nx(other) };
        let is_box = grid.kind() == DomainKind::Box;
        for k in 0..lines {
            if is_box && grid.dim() == 2 && (k == 0 || k + 1 == lines) {
                continue;
            }
            let node = |i: usize| {
                let mut idx = [0usize; 2];
                idx[axis] = i;
                idx[other] = k;
                grid.flatten(idx)
            };
            for i in 0..n {
                let j = node(i);
                if is_box && (i == 0 || i + 1 == n) {
                    self.sub[i] = S::zero();
                    self.sup[i] = S::zero();
                    self.diag[i] = S::one();
                    self.line[i] = u[j];
                    continue;
                }
                let (lo, up) = stencil(advection, drift[j][axis], grid.dx(axis));
                self.sub[i] = -theta_dt * lo;
                self.sup[i] = -theta_dt * up;
                let mut d = S::one() + theta_dt * (lo + up);
                let mut r = u[j];
                if let Some(rhs) = coupled {
                    let (olo, oup) = stencil(advection, drift[j][other], grid.dx(other));
                    d += theta_dt * (olo + oup);
                    let below = grid.neighbor(j, other, -1).expect("interior line");
                    let above = grid.neighbor(j, other, 1).expect("interior line");
                    r = rhs[j] + theta_dt * (olo * u[below] + oup * u[above]);
                }
                self.diag[i] = d;
                self.line[i] = r;
            }
            if is_box {
                tridiag::solve(
                    &self.sub[..n],
                    &self.diag[..n],
                    &self.sup[..n],
                    &mut self.line[..n],
                    &mut self.scratch[..n],
                );
            } else {
                tridiag::solve_cyclic(
                    &self.sub[..n],
                    &self.diag[..n],
                    &self.sup[..n],
                    &mut self.line[..n],
                );
            }
            for i in 0..n {
                u[node(i)] = self.line[i];
            }
        }
    }

    fn relax(
        &mut self,
        grid: &Grid<S>,
        scheme: &ParabolicScheme,
        theta_dt: S,
        drift: &[Point<S>],
        u: &mut [S],
    ) -> Result<()> {
        let rhs = u.to_vec();
        let tol = S::lit(scheme.iterative_tol) * (S::one() + sup_abs(&rhs));
        for sweep in 1..=scheme.max_sweeps {
            self.solve_lines(grid, scheme.advection, theta_dt, drift, u, 0, Some(&rhs));
            self.solve_lines(grid, scheme.advection, theta_dt, drift, u, 1, Some(&rhs));
            apply_operator(grid, u, drift, scheme.advection, &mut self.work);
            let mut res = S::zero();
            for j in 0..grid.space_len() {
                if !grid.is_boundary(j) {
                    res = res.max((rhs[j] - u[j] + theta_dt * self.work[j]).abs());
                }
            }
            if res <= tol {
                self.last_sweeps = sweep;
                return Ok(());
            }
        }
        Err(Error::Numerical(format!(
            "line relaxation did not reach {} in {} sweeps",
            scheme.iterative_tol, scheme.max_sweeps
        )))
    }
}

fn sup_abs<S: Real>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |m, x| m.max(x.abs()))
}

/// `M u` for the level matrix the solver inverts (factored in split mode).
pub(crate) fn apply_level_matrix<S: Real>(
    grid: &Grid<S>,
    scheme: &ParabolicScheme,
    theta_dt: S,
    drift: &[Point<S>],
    u: &[S],
) -> Vec<S> {
    let ns = grid.space_len();
    // every line solve keeps box edge nodes as identity rows
    let axis_pass = |input: &[S], axis: usize| -> Vec<S> {
        (0..ns)
            .map(|j| {
                if grid.is_boundary(j) {
                    input[j]
                } else {
                    let b = drift[j][axis];
                    input[j] - theta_dt * axis_operator(grid, input, j, axis, b, scheme.advection)
                }
            })
            .collect()
    };
    if grid.dim() == 2 && scheme.splitting == Splitting::Split {
        let v = axis_pass(u, 1);
        axis_pass(&v, 0)
    } else {
        let mut lu = vec![S::zero(); ns];
        apply_operator(grid, u, drift, scheme.advection, &mut lu);
        (0..ns).map(|j| u[j] - theta_dt * lu[j]).collect()
    }
}

/// Backward march with per-level coefficients supplied by `coeffs(n, drift, cost)`.
pub(crate) fn march<S: Real>(
    grid: &Grid<S>,
    boundary: &BoundaryCondition<S>,
    scheme: &ParabolicScheme,
    mut coeffs: impl FnMut(usize, &mut [Point<S>], &mut [S]),
) -> Result<Field<S>> {
    boundary.validate(grid)?;
    let ns = grid.space_len();
    let theta: S = scheme.time_stepping.theta();
    let dt = grid.dt();
    let mut values = vec![S::zero(); grid.len()];
    let mut solver = LevelSolver::new(grid);
    let mut drift = vec![[S::zero(); 2]; ns];
    let mut cost = vec![S::zero(); ns];
    let mut drift_next = vec![[S::zero(); 2]; ns];
    let mut cost_next = vec![S::zero(); ns];
    let mut lu = vec![S::zero(); ns];
    if theta < S::one() {
        coeffs(grid.nt(), &mut drift_next, &mut cost_next);
    }
    for n in (0..grid.nt()).rev() {
        coeffs(n, &mut drift, &mut cost);
        let (head, tail) = values.split_at_mut((n + 1) * ns);
        let next = &tail[..ns];
        let cur = &mut head[n * ns..];
        for j in 0..ns {
            cur[j] = next[j] + dt * theta * cost[j];
        }
        if theta < S::one() {
            apply_operator(grid, next, &drift_next, scheme.advection, &mut lu);
            let w = (S::one() - theta) * dt;
            for j in 0..ns {
                cur[j] += w * (lu[j] + cost_next[j]);
            }
        }
        solver.solve(grid, scheme, theta * dt, grid.time(n), boundary, &drift, cur)?;
        if theta < S::one() {
            std::mem::swap(&mut drift, &mut drift_next);
            std::mem::swap(&mut cost, &mut cost_next);
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite value at time level {n}")));
        }
    }
    Ok(Field::from_values_unchecked(grid, values))
}

/// Solves the frozen linear problem with sampled drift and cost fields.
pub fn solve_frozen<S: Real>(
    drift: &VectorField<S>,
    cost: &Field<S>,
    boundary: &BoundaryCondition<S>,
    scheme: &ParabolicScheme,
) -> Result<Field<S>> {
    let grid = cost.grid();
    check_inputs(drift, cost)?;
    if scheme.advection == Advection::Upwind && scheme.time_stepping == TimeStepping::ImplicitEuler
    {
        // M-matrix by construction; checked on the first level as a guard against sign slips
        let level0: Vec<Point<S>> = (0..grid.space_len()).map(|j| drift.at(0, j)).collect();
        debug_assert!(is_monotone(grid, &level0, scheme));
    }
    march(grid, boundary, scheme, |n, b, f| {
        for j in 0..grid.space_len() {
            b[j] = drift.at(n, j);
            f[j] = cost.at(n, j);
        }
    })
}

/// Solves with coefficients evaluated from an oracle under one fixed action.
pub fn solve_frozen_oracle<S: Real>(
    oracle: &dyn Coefficients<S>,
    action: &Point<S>,
    grid: &Grid<S>,
    boundary: &BoundaryCondition<S>,
    scheme: &ParabolicScheme,
) -> Result<Field<S>> {
    let (b, f) = crate::coefficients::sample_to_grid(oracle, grid, action)?;
    solve_frozen(&b, &f, boundary, scheme)
}

fn check_inputs<S: Real>(drift: &VectorField<S>, cost: &Field<S>) -> Result<()> {
    if drift.arity() != cost.grid().dim() || drift.component(0).values().len() != cost.values().len()
    {
        return Err(Error::ShapeMismatch("drift and cost fields differ in shape".into()));
    }
    Ok(())
}

/// Discrete residual `(rhs - M u^n) / dt` of the solver's level equations.
///
/// In one dimension (and for unsplit 2-d solves) with implicit Euler this is
/// `(u^{n+1} - u^n)/dt + L^n u^n + f^n`. Box edge nodes and the terminal
/// level carry zero.
pub fn pde_residual<S: Real>(
    u: &Field<S>,
    drift: &VectorField<S>,
    cost: &Field<S>,
    scheme: &ParabolicScheme,
) -> Result<Field<S>> {
    check_inputs(drift, cost)?;
    let grid = u.grid();
    if cost.values().len() != u.values().len() {
        return Err(Error::ShapeMismatch("value and cost fields differ in shape".into()));
    }
    level_residuals(grid, scheme, u, |n, b, f| {
        for j in 0..grid.space_len() {
            b[j] = drift.at(n, j);
            f[j] = cost.at(n, j);
        }
    })
}

pub(crate) fn level_residuals<S: Real>(
    grid: &Grid<S>,
    scheme: &ParabolicScheme,
    u: &Field<S>,
    mut coeffs: impl FnMut(usize, &mut [Point<S>], &mut [S]),
) -> Result<Field<S>> {
    let ns = grid.space_len();
    let theta: S = scheme.time_stepping.theta();
    let dt = grid.dt();
    let mut out = vec![S::zero(); grid.len()];
    let mut drift = vec![[S::zero(); 2]; ns];
    let mut cost = vec![S::zero(); ns];
    let mut drift_next = vec![[S::zero(); 2]; ns];
    let mut cost_next = vec![S::zero(); ns];
    let mut lu = vec![S::zero(); ns];
    for n in 0..grid.nt() {
        coeffs(n, &mut drift, &mut cost);
        let next = u.level(n + 1);
        let mut rhs: Vec<S> = (0..ns).map(|j| next[j] + dt * theta * cost[j]).collect();
        if theta < S::one() {
            coeffs(n + 1, &mut drift_next, &mut cost_next);
            apply_operator(grid, next, &drift_next, scheme.advection, &mut lu);
            for j in 0..ns {
                rhs[j] += (S::one() - theta) * dt * (lu[j] + cost_next[j]);
            }
        }
        let mu = apply_level_matrix(grid, scheme, theta * dt, &drift, u.level(n));
        for j in 0..ns {
            if !grid.is_boundary(j) {
                out[n * ns + j] = (rhs[j] - mu[j]) / dt;
            }
        }
    }
    Ok(Field::from_values_unchecked(grid, out))
}

/// Largest residual over non-boundary nodes.
pub fn sup_interior<S: Real>(residual: &Field<S>) -> S {
    let g = residual.grid();
    let mut m = S::zero();
    for n in 0..g.time_levels() {
        for j in 0..g.space_len() {
            if !g.is_boundary(j) {
                m = m.max(residual.at(n, j).abs());
            }
        }
    }
    m
}

pub type ExactFn<S> = Arc<dyn Fn(S, &Point<S>) -> S + Send + Sync>;

/// A single-action problem with a closed-form solution, used for order studies.
#[derive(Clone)]
pub struct ClosedFormProblem<S> {
    pub oracle: Arc<dyn Coefficients<S>>,
    pub action: Point<S>,
    pub exact: ExactFn<S>,
    pub kind: DomainKind,
    pub extent: Vec<(S, S)>,
    pub t_final: S,
}

impl<S: Real> ClosedFormProblem<S> {
    pub fn grid(&self, nx: usize, nt: usize) -> Result<Grid<S>> {
        let nxs = vec![nx; self.extent.len()];
        Grid::new(self.kind, self.extent.len(), &self.extent, &nxs, self.t_final, nt)
    }

    pub fn boundary(&self) -> BoundaryCondition<S> {
        match self.kind {
            DomainKind::Torus => BoundaryCondition::Periodic,
            DomainKind::Box => {
                let exact = self.exact.clone();
                BoundaryCondition::DirichletExact(Arc::new(move |t, x| exact(t, x)))
            }
        }
    }

    pub fn solve(&self, nx: usize, nt: usize, scheme: &ParabolicScheme) -> Result<Field<S>> {
        let grid = self.grid(nx, nt)?;
        let oracle = self.oracle.clone();
        let action = self.action;
        march(&grid, &self.boundary(), scheme, |n, b, f| {
            let t = grid.time(n);
            for j in 0..grid.space_len() {
                let Coeff { drift, cost } = oracle.eval(t, &grid.point(j), &action);
                b[j] = drift;
                f[j] = cost;
            }
        })
    }

    pub fn error(&self, u: &Field<S>) -> S {
        let g = u.grid();
        let mut m = S::zero();
        for n in 0..g.time_levels() {
            let t = g.time(n);
            for j in 0..g.space_len() {
                m = m.max((u.at(n, j) - (self.exact)(t, &g.point(j))).abs());
            }
        }
        m
    }
}

/// Refinement ladders for [`convergence_order`].
#[derive(Clone, Debug, PartialEq)]
pub struct OrderStudy {
    pub nx_ladder: Vec<usize>,
    pub nt_ladder: Vec<usize>,
    /// Time steps for the spatial ladder (Richardson-extrapolated in time).
    pub nt_for_space: usize,
    /// Spatial nodes for the temporal ladder.
    pub nx_for_time: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservedOrders {
    /// `None` when every error is at rounding level.
    pub space: Option<f64>,
    pub time: Option<f64>,
    pub space_errors: Vec<(f64, f64)>,
    pub time_errors: Vec<(f64, f64)>,
}

/// Least-squares slope of `log err` against `log h`.
pub fn fitted_order(errors: &[(f64, f64)]) -> Option<f64> {
    if errors.len() < 2 || errors.iter().all(|&(_, e)| e < 1e-12) {
        return None;
    }
    let pts: Vec<(f64, f64)> = errors.iter().map(|&(h, e)| (h.ln(), e.max(1e-300).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

/// Observed orders in space and time.
///
/// Spatial errors are measured against the closed form after removing the
/// first-order time error by Richardson extrapolation (`2 u(2N) - u(N)` at the
/// common levels). Temporal errors are measured on one spatial grid against a
/// Richardson-extrapolated reference with eight times the finest step count,
/// so the spatial error cancels.
pub fn convergence_order<S: Real>(
    problem: &ClosedFormProblem<S>,
    study: &OrderStudy,
    scheme: &ParabolicScheme,
) -> Result<ObservedOrders> {
    if study.nx_ladder.len() < 3 || study.nt_ladder.len() < 3 {
        return Err(Error::InvalidArgument("order study needs at least three grids per ladder".into()));
    }
    let two = S::lit(2.0);
    let mut space_errors = Vec::new();
    for &nx in &study.nx_ladder {
        let coarse = problem.solve(nx, study.nt_for_space, scheme)?;
        let fine = problem.solve(nx, 2 * study.nt_for_space, scheme)?;
        let g = coarse.grid();
        let mut err = S::zero();
        for n in 0..g.time_levels() {
            let t = g.time(n);
            for j in 0..g.space_len() {
                let extrap = two * fine.at(2 * n, j) - coarse.at(n, j);
                err = err.max((extrap - (problem.exact)(t, &g.point(j))).abs());
            }
        }
        space_errors.push((g.dx(0).as_f64(), err.as_f64()));
    }

    let nt_max = *study.nt_ladder.iter().max().unwrap();
    let m = 8 * nt_max;
    let r1 = problem.solve(study.nx_for_time, m, scheme)?;
    let r2 = problem.solve(study.nx_for_time, 2 * m, scheme)?;
    let mut time_errors = Vec::new();
    for &nt in &study.nt_ladder {
        if m % nt != 0 {
            return Err(Error::InvalidArgument(format!(
                "nt ladder entry {nt} must divide {m}"
            )));
        }
        let u = problem.solve(study.nx_for_time, nt, scheme)?;
        let g = u.grid();
        let stride = m / nt;
        let mut err = S::zero();
        for n in 0..g.time_levels() {
            for j in 0..g.space_len() {
                let reference = two * r2.at(2 * stride * n, j) - r1.at(stride * n, j);
                err = err.max((u.at(n, j) - reference).abs());
            }
        }
        time_errors.push((g.dt().as_f64(), err.as_f64()));
    }
    Ok(ObservedOrders {
        space: fitted_order(&space_errors),
        time: fitted_order(&time_errors),
        space_errors,
        time_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{sample_to_grid, AdditiveDrift, CostModel, SmoothBaseline};
    use proptest::prelude::*;

    fn box_grid(nx: usize, nt: usize) -> Grid<f64> {
        Grid::new(DomainKind::Box, 1, &[(-6.0, 6.0)], &[nx], 1.0, nt).unwrap()
    }

    #[test]
    fn zero_drift_unit_cost_gives_time_to_go() {
        let g = Grid::new(DomainKind::Torus, 1, &[(0.0, 1.0)], &[16], 1.0, 10).unwrap();
        let b = VectorField::new(vec![Field::zeros(&g)]).unwrap();
        let f = Field::constant(&g, 1.0);
        let u = solve_frozen(&b, &f, &BoundaryCondition::Periodic, &ParabolicScheme::default()).unwrap();
        for n in 0..=10 {
            let expected: f64 = 1.0 - g.time(n);
            for &v in u.level(n) {
                assert!((v - expected).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn quadratic_cost_matches_closed_form() {
        let g = box_grid(241, 512);
        let exact = |t: f64, x: &Point<f64>| x[0] * x[0] * (1.0 - t) + (1.0 - t).powi(2);
        let oracle = AdditiveDrift::constant(1, 0.0, 1.0, CostModel::Quadratic);
        let u = solve_frozen_oracle(
            &oracle,
            &[0.0, 0.0],
            &g,
            &BoundaryCondition::dirichlet(exact),
            &ParabolicScheme::default(),
        )
        .unwrap();
        let err = u.sup_distance(&Field::from_fn(&g, exact)).unwrap();
        assert!(err < 5.0 * (g.dx(0).powi(2) + g.dt()), "err {err}");
    }

    #[test]
    fn unit_drift_matches_closed_form() {
        let exact = |t: f64, x: &Point<f64>| {
            let tau = 1.0 - t;
            ((x[0] + tau).powi(3) - x[0].powi(3)) / 3.0 + tau * tau
        };
        let oracle = AdditiveDrift::constant(1, 1.0, 1.0, CostModel::Quadratic);
        for adv in [Advection::Upwind, Advection::Central] {
            let g = box_grid(241, 512);
            let u = solve_frozen_oracle(
                &oracle,
                &[0.0, 0.0],
                &g,
                &BoundaryCondition::dirichlet(exact),
                &ParabolicScheme::with_advection(adv),
            )
            .unwrap();
            let err = u.sup_distance(&Field::from_fn(&g, exact)).unwrap();
            let tol = match adv {
                Advection::Upwind => 5.0 * (g.dx(0) + g.dt()),
                Advection::Central => 5.0 * (g.dx(0).powi(2) + g.dt()),
            };
            assert!(err < tol, "{adv:?}: err {err}");
        }
    }

    #[test]
    fn residual_of_solution_vanishes() {
        let g = Grid::new(DomainKind::Torus, 1, &[(-1.0, 1.0)], &[32], 1.0, 40).unwrap();
        let oracle = AdditiveDrift::step(1, 0.7, 1.0, CostModel::Quadratic);
        for scheme in [
            ParabolicScheme::default(),
            ParabolicScheme {
                time_stepping: TimeStepping::CrankNicolson,
                advection: Advection::Central,
                ..ParabolicScheme::default()
            },
        ] {
            let (b, f) = sample_to_grid(&oracle, &g, &[0.3, 0.0]).unwrap();
            let u = solve_frozen(&b, &f, &BoundaryCondition::Periodic, &scheme).unwrap();
            let r = pde_residual(&u, &b, &f, &scheme).unwrap();
            assert!(sup_interior(&r) < 1e-10, "{:?}", sup_interior(&r));
        }
    }

    #[test]
    fn residual_of_zero_with_unit_cost_is_one() {
        let g = Grid::new(DomainKind::Torus, 1, &[(0.0, 1.0)], &[8], 1.0, 4).unwrap();
        let b = VectorField::new(vec![Field::zeros(&g)]).unwrap();
        let f = Field::constant(&g, 1.0);
        let r = pde_residual(&Field::zeros(&g), &b, &f, &ParabolicScheme::default()).unwrap();
        for n in 0..4 {
            assert!(r.level(n).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn residual_of_exact_solution_shrinks_with_refinement() {
        let exact = |t: f64, x: &Point<f64>| x[0] * x[0] * (1.0 - t) + (1.0 - t).powi(2);
        let oracle = AdditiveDrift::constant(1, 0.0, 1.0, CostModel::Quadratic);
        let res = |nx: usize, nt: usize| {
            let g = Grid::new(DomainKind::Box, 1, &[(-2.0, 2.0)], &[nx], 1.0, nt).unwrap();
            let (b, f) = sample_to_grid(&oracle, &g, &[0.0, 0.0]).unwrap();
            let u = Field::from_fn(&g, exact);
            sup_interior(&pde_residual(&u, &b, &f, &ParabolicScheme::default()).unwrap())
        };
        let r1 = res(41, 20);
        let r2 = res(81, 40);
        // pure time truncation: u_ss = 2, so the residual is dt exactly
        assert!((r1 - 0.05).abs() < 1e-9 && (r2 - 0.025).abs() < 1e-9, "{r1} {r2}");
    }

    fn smooth_problem() -> ClosedFormProblem<f64> {
        let sb = Arc::new(SmoothBaseline::new(1, 1.0, 1.0, 0.5, 0.5, 1.0));
        let exact_src = sb.clone();
        ClosedFormProblem {
            oracle: sb,
            action: [0.0, 0.0],
            exact: Arc::new(move |t, x| exact_src.exact_value(t, x)),
            kind: DomainKind::Torus,
            extent: vec![(0.0, 1.0)],
            t_final: 1.0,
        }
    }

    #[test]
    fn smooth_orders_central_and_upwind() {
        let p = smooth_problem();
        let study = OrderStudy {
            nx_ladder: vec![16, 32, 64, 128],
            nt_ladder: vec![8, 16, 32, 64],
            nt_for_space: 1024,
            nx_for_time: 64,
        };
        let c = convergence_order(&p, &study, &ParabolicScheme::with_advection(Advection::Central)).unwrap();
        assert!((c.space.unwrap() - 2.0).abs() < 0.25, "{c:?}");
        assert!((c.time.unwrap() - 1.0).abs() < 0.25, "{c:?}");
        // upwind is diffusion dominated on coarse grids; start the ladder later
        let fine = OrderStudy {
            nx_ladder: vec![32, 64, 128, 256],
            ..study
        };
        let u = convergence_order(&p, &fine, &ParabolicScheme::default()).unwrap();
        assert!((u.space.unwrap() - 1.0).abs() < 0.25, "{u:?}");
        assert!((u.time.unwrap() - 1.0).abs() < 0.25, "{u:?}");
    }

    #[test]
    fn constant_cost_order_study_is_skipped() {
        let oracle = Arc::new(AdditiveDrift::constant(1, 0.3, 1.0, CostModel::Constant(1.0)));
        let p = ClosedFormProblem {
            oracle,
            action: [0.0, 0.0],
            exact: Arc::new(|t: f64, _: &Point<f64>| 1.0 - t),
            kind: DomainKind::Torus,
            extent: vec![(0.0, 1.0)],
            t_final: 1.0,
        };
        let study = OrderStudy {
            nx_ladder: vec![8, 16, 32],
            nt_ladder: vec![4, 8, 16],
            nt_for_space: 16,
            nx_for_time: 8,
        };
        let o = convergence_order(&p, &study, &ParabolicScheme::default()).unwrap();
        assert_eq!((o.space, o.time), (None, None));
        let short = OrderStudy {
            nx_ladder: vec![8, 16],
            ..study
        };
        assert!(convergence_order(&p, &short, &ParabolicScheme::default()).is_err());
    }

    #[test]
    fn two_dimensional_split_and_iterative_solves() {
        // u = (T - s)(1 + x^2 + y^2) / (1) has Lap u = 4 (T - s); f chosen accordingly
        let exact = |t: f64, x: &Point<f64>| (1.0 - t) * (1.0 + x[0] * x[0] + x[1] * x[1]);
        let g = Grid::new(DomainKind::Box, 2, &[(-1.0, 1.0), (-1.0, 1.0)], &[21, 21], 1.0, 40).unwrap();
        let b = VectorField::new(vec![Field::zeros(&g), Field::zeros(&g)]).unwrap();
        let f = Field::from_fn(&g, |t, x| (1.0 + x[0] * x[0] + x[1] * x[1]) - 4.0 * (1.0 - t));
        for splitting in [Splitting::Split, Splitting::Iterative] {
            let scheme = ParabolicScheme {
                splitting,
                ..ParabolicScheme::default()
            };
            let u = solve_frozen(&b, &f, &BoundaryCondition::dirichlet(exact), &scheme).unwrap();
            let err = u.sup_distance(&Field::from_fn(&g, exact)).unwrap();
            assert!(err < 0.05, "{splitting:?}: {err}");
            let r = pde_residual(&u, &b, &f, &scheme).unwrap();
            assert!(sup_interior(&r) < 1e-9, "{splitting:?}: residual {}", sup_interior(&r));
        }
    }

    #[test]
    fn monotonicity_flag() {
        let g = Grid::new(DomainKind::Torus, 1, &[(0.0, 1.0)], &[10], 1.0, 10).unwrap();
        let fast = vec![[100.0, 0.0]; 10];
        let slow = vec![[1.0, 0.0]; 10];
        assert!(is_monotone(&g, &fast, &ParabolicScheme::default()));
        assert!(!is_monotone(&g, &fast, &ParabolicScheme::with_advection(Advection::Central)));
        assert!(is_monotone(&g, &slow, &ParabolicScheme::with_advection(Advection::Central)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn linearity_and_boundedness(
            seed in proptest::collection::vec(-1.0f64..1.0, 3 * 12 * 9),
        ) {
            let g = Grid::new(DomainKind::Torus, 1, &[(0.0, 1.0)], &[12], 1.0, 8).unwrap();
            let n = g.len();
            let b = VectorField::new(vec![Field::from_values(&g, seed[..n].iter().map(|v| 3.0 * v).collect()).unwrap()]).unwrap();
            let f1 = Field::from_values(&g, seed[n..2 * n].to_vec()).unwrap();
            let f2 = Field::from_values(&g, seed[2 * n..].to_vec()).unwrap();
            let sum = f1.zip_with(&f2, |a, c| a + c).unwrap();
            let s = ParabolicScheme::default();
            let bc = BoundaryCondition::Periodic;
            let u1 = solve_frozen(&b, &f1, &bc, &s).unwrap();
            let u2 = solve_frozen(&b, &f2, &bc, &s).unwrap();
            let u12 = solve_frozen(&b, &sum, &bc, &s).unwrap();
            let lin = u12.sup_distance(&u1.zip_with(&u2, |a, c| a + c).unwrap()).unwrap();
            prop_assert!(lin < 1e-12);
            // comparison: adding a nonnegative source never lowers the solution
            let bump = f1.zip_with(&f2, |a, c| a + c.abs()).unwrap();
            let ub = solve_frozen(&b, &bump, &bc, &s).unwrap();
            let worst = u1.values().iter().zip(ub.values()).fold(f64::NEG_INFINITY, |m, (x, y)| m.max(x - y));
            prop_assert!(worst <= 1e-12, "comparison violated by {worst}");
            let fmax = f1.sup_norm();
            for level in 0..g.time_levels() {
                let bound = (1.0 - g.time(level)) * fmax + 1e-12;
                prop_assert!(u1.level(level).iter().all(|v| v.abs() <= bound));
            }
        }
    }
}
