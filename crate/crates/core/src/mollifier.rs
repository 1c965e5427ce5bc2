//! Space-time mollification of coefficient fields.
//!
//! The kernel is the radial bump `exp(-1/(1 - r^2))` on the unit ball of
//! `R^{1+d}`, scaled to radius `epsilon`. Fields are extended by zero outside
//! `[0, T]`; space wraps on the torus and is zero-extended on a box.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{sample_to_grid, ActionSet, Coefficients};
use crate::error::{Error, Result};
use crate::grid::{lp_norm_where, DomainKind, Field, Grid, VectorField};
use crate::hamiltonian::GridTable;
use crate::scalar::{Point, Real};

fn bump(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

fn bump_derivative(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        let q = 1.0 - r * r;
        -2.0 * r / (q * q) * bump(r)
    }
}

/// Composite Simpson rule on `[0, 1]`.
fn simpson(f: impl Fn(f64) -> f64) -> f64 {
    const N: usize = 20_000;
    let h = 1.0 / N as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..N {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

/// Surface measure of the unit sphere in `R^{1+d}`.
fn sphere_area(space_dim: usize) -> f64 {
    match space_dim {
        1 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MollifierKernel<S> {
    epsilon: S,
    dim: usize,
    /// Integral of the unscaled bump over `R^{1+d}`.
    mass: f64,
}

impl<S: Real> MollifierKernel<S> {
    pub fn new(epsilon: S, dim: usize) -> Result<Self> {
        if !(epsilon > S::zero()) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidArgument(format!("dimension must be 1 or 2, got {dim}")));
        }
        let power = dim as i32;
        let mass = sphere_area(dim) * simpson(|r| r.powi(power) * bump(r));
        Ok(Self { epsilon, dim, mass })
    }

    pub fn epsilon(&self) -> S {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unscaled normalized kernel at radius `r`.
    fn profile(&self, r: f64) -> f64 {
        bump(r) / self.mass
    }

    /// `zeta_eps(t, x) = eps^{-(d+1)} zeta(t / eps, x / eps)`.
    pub fn value(&self, t: S, x: &Point<S>) -> S {
        let eps = self.epsilon.as_f64();
        let mut r2 = t.as_f64() * t.as_f64();
        for v in &x[..self.dim] {
            r2 += v.as_f64() * v.as_f64();
        }
        let r = r2.sqrt() / eps;
        S::lit(self.profile(r) / eps.powi(self.dim as i32 + 1))
    }

    /// `C` with `|d/dx_i (zeta_eps * g)| <= C / eps * sup|g|`, i.e. the `L^1` norm
    /// of one partial derivative of the unscaled kernel.
    pub fn derivative_constant(&self) -> f64 {
        // average of |cos| over the sphere times its area
        let angular = match self.dim {
            1 => 4.0,
            _ => 2.0 * std::f64::consts::PI,
        };
        let power = self.dim as i32;
        angular * simpson(|r| r.powi(power) * bump_derivative(r).abs()) / self.mass
    }

    /// Discrete weights on offsets `(p dt, q dx)` strictly inside the support,
    /// renormalized to sum to one.
    fn stencil(&self, dt: S, dx: &[S]) -> Vec<(isize, [isize; 2], S)> {
        let eps = self.epsilon.as_f64();
        let reach = |h: S| (eps / h.as_f64()).floor() as isize;
        let pt = reach(dt);
        let q0 = reach(dx[0]);
        let q1 = if self.dim == 2 { reach(dx[1]) } else { 0 };
        let mut raw = Vec::new();
        for p in -pt..=pt {
            for a in -q0..=q0 {
                for b in -q1..=q1 {
                    let t = p as f64 * dt.as_f64();
                    let x0 = a as f64 * dx[0].as_f64();
                    let x1 = if self.dim == 2 { b as f64 * dx[1].as_f64() } else { 0.0 };
                    let r = (t * t + x0 * x0 + x1 * x1).sqrt() / eps;
                    let w = self.profile(r);
                    if w > 0.0 {
                        raw.push((p, [a, b], w));
                    }
                }
            }
        }
        let total: f64 = raw.iter().map(|e| e.2).sum();
        raw.into_iter().map(|(p, q, w)| (p, q, S::lit(w / total))).collect()
    }

    /// Midpoint-rule integral of `zeta_eps` over its support cube, `2 m` cells per axis.
    pub fn quadrature_integral(&self, m: usize) -> f64 {
        let eps = self.epsilon.as_f64();
        let h = eps / m as f64;
        let m = m as isize;
        let c = |i: isize| S::lit((i as f64 + 0.5) * h);
        let mut total = 0.0;
        for p in -m..m {
            for a in -m..m {
                if self.dim == 1 {
                    total += self.value(c(p), &[c(a), S::zero()]).as_f64();
                } else {
                    for b in -m..m {
                        total += self.value(c(p), &[c(a), c(b)]).as_f64();
                    }
                }
            }
        }
        total * h.powi(self.dim as i32 + 1)
    }

    /// Sum of the discrete convolution weights used on `grid`.
    pub fn discrete_mass(&self, grid: &Grid<S>) -> f64 {
        let dx: Vec<S> = (0..grid.dim()).map(|a| grid.dx(a)).collect();
        let w: Vec<f64> = self.stencil(grid.dt(), &dx).iter().map(|e| e.2.as_f64()).collect();
        crate::scalar::pairwise_sum(&w)
    }

    pub fn resolved_by(&self, grid: &Grid<S>) -> bool {
        self.epsilon >= grid.dx_max().max(grid.dt())
    }
}

/// Discrete convolution `zeta_eps * g` of a grid field.
pub fn mollify_field<S: Real>(field: &Field<S>, kernel: &MollifierKernel<S>) -> Field<S> {
    let grid = field.grid();
    if !kernel.resolved_by(grid) {
        log::warn!(
            "epsilon {} is below the grid resolution {}; mollification is close to the identity",
            kernel.epsilon(),
            grid.dx_max().max(grid.dt())
        );
    }
    let dx: Vec<S> = (0..grid.dim()).map(|a| grid.dx(a)).collect();
    let stencil = kernel.stencil(grid.dt(), &dx);
    let ns = grid.space_len();
    let levels = grid.time_levels() as isize;
    let torus = grid.kind() == DomainKind::Torus;
    let nx = [grid.nx(0) as isize, if grid.dim() == 2 { grid.nx(1) as isize } else { 1 }];
    let shift = |i: isize, q: isize, n: isize| -> Option<isize> {
        let k = i + q;
        if torus {
            Some(k.rem_euclid(n))
        } else if (0..n).contains(&k) {
            Some(k)
        } else {
            None
        }
    };
    let mut out = vec![S::zero(); grid.len()];
    out.par_chunks_mut(ns).enumerate().for_each(|(n, level)| {
        for (j, slot) in level.iter_mut().enumerate() {
            let idx = grid.unflatten(j);
            let mut acc = S::zero();
            for &(p, q, w) in &stencil {
                let m = n as isize + p;
                if !(0..levels).contains(&m) {
                    continue;
                }
                let Some(k0) = shift(idx[0] as isize, q[0], nx[0]) else { continue };
                let Some(k1) = shift(idx[1] as isize, q[1], nx[1]) else { continue };
                let k = grid.flatten([k0 as usize, k1 as usize]);
                acc += w * field.at(m as usize, k);
            }
            *slot = acc;
        }
    });
    Field::from_values_unchecked(grid, out)
}

pub fn mollify_vector<S: Real>(field: &VectorField<S>, kernel: &MollifierKernel<S>) -> VectorField<S> {
    let comps = (0..field.arity())
        .map(|a| mollify_field(field.component(a), kernel))
        .collect();
    VectorField::new(comps).expect("arity preserved")
}

/// Per-action coefficients sampled on `grid` and mollified at the kernel's scale.
pub fn mollified_table<S: Real>(
    oracle: &dyn Coefficients<S>,
    actions: &ActionSet<S>,
    grid: &Grid<S>,
    kernel: &MollifierKernel<S>,
) -> Result<GridTable<S>> {
    actions.validate_for(oracle)?;
    let mut drifts = Vec::with_capacity(actions.len());
    let mut costs = Vec::with_capacity(actions.len());
    for a in actions.iter() {
        let (b, f) = sample_to_grid(oracle, grid, a)?;
        drifts.push(mollify_vector(&b, kernel));
        costs.push(mollify_field(&f, kernel));
    }
    GridTable::new(drifts, costs)
}

/// `(zeta_eps * g)(t, x)` for a function on `[0, T] x R^d`, by midpoint
/// quadrature with `resolution` cells per radius; `g` is taken as zero outside
/// `[0, T]`. Cell centres never fall on the coordinate hyperplanes through `(t, x)`.
pub fn mollify_at<S: Real>(
    kernel: &MollifierKernel<S>,
    g: impl Fn(S, &Point<S>) -> S,
    t: S,
    x: &Point<S>,
    t_final: S,
    resolution: usize,
) -> Result<S> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let eps = kernel.epsilon().as_f64();
    let h = eps / resolution as f64;
    let r = resolution as isize;
    let offset = |i: isize| (i as f64 + 0.5) * h;
    let inner = if kernel.dim() == 2 { -r..r } else { 0..1 };
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for p in -r..r {
        for a in -r..r {
            for b in inner.clone() {
                let ot = offset(p);
                let o0 = offset(a);
                let o1 = if kernel.dim() == 2 { offset(b) } else { 0.0 };
                let w = kernel.profile((ot * ot + o0 * o0 + o1 * o1).sqrt() / eps);
                if w == 0.0 {
                    continue;
                }
                den += w;
                let s = t.as_f64() + ot;
                if s < 0.0 || s > t_final.as_f64() {
                    continue;
                }
                let mut y = *x;
                y[0] += S::lit(o0);
                if kernel.dim() == 2 {
                    y[1] += S::lit(o1);
                }
                num += w * g(S::lit(s), &y).as_f64();
            }
        }
    }
    Ok(S::lit(num / den))
}

/// One rung of a mollification ladder.
#[derive(Clone, Debug)]
pub struct LadderRung<S> {
    pub epsilon: S,
    /// Mollified fields on the caller's grid.
    pub drift: VectorField<S>,
    pub cost: Field<S>,
    /// `|| |b_eps - b| + |f_eps - f| ||_{L^p}` over the whole cylinder.
    pub lp_distance: f64,
    /// The same distance restricted to `t in [eps, T - eps]`.
    pub lp_distance_interior: f64,
    /// `sup (|b_eps| + |f_eps|)`.
    pub sup_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LadderRow {
    pub epsilon: f64,
    pub lp_distance: f64,
    pub lp_distance_interior: f64,
    pub sup_norm: f64,
}

#[derive(Clone, Debug)]
pub struct LadderReport<S> {
    pub p: f64,
    /// Refinement factor of the quadrature grid used for the distances.
    pub refinement: usize,
    pub rungs: Vec<LadderRung<S>>,
}

impl<S: Real> LadderReport<S> {
    pub fn rows(&self) -> Vec<LadderRow> {
        self.rungs
            .iter()
            .map(|r| LadderRow {
                epsilon: r.epsilon.as_f64(),
                lp_distance: r.lp_distance,
                lp_distance_interior: r.lp_distance_interior,
                sup_norm: r.sup_norm,
            })
            .collect()
    }

    /// CSV `epsilon,lp_distance,sup_norm`.
    pub fn to_csv(&self) -> String {
        ladder_csv(&self.rows())
    }
}

pub fn ladder_csv(rows: &[LadderRow]) -> String {
    let mut out = String::from("epsilon,lp_distance,sup_norm\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.epsilon, r.lp_distance, r.sup_norm);
    }
    out
}

/// Grid with every step divided by `factor`; box endpoints are kept.
pub fn refine_grid<S: Real>(grid: &Grid<S>, factor: usize) -> Result<Grid<S>> {
    let extent: Vec<(S, S)> = (0..grid.dim()).map(|a| (grid.lo(a), grid.hi(a))).collect();
    let nx: Vec<usize> = (0..grid.dim())
        .map(|a| match grid.kind() {
            DomainKind::Torus => grid.nx(a) * factor,
            DomainKind::Box => (grid.nx(a) - 1) * factor + 1,
        })
        .collect();
    Grid::new(grid.kind(), grid.dim(), &extent, &nx, grid.t_final(), grid.nt() * factor)
}

fn pointwise_gap<S: Real>(
    b: &VectorField<S>,
    f: &Field<S>,
    b_eps: &VectorField<S>,
    f_eps: &Field<S>,
) -> Field<S> {
    let g = f.grid();
    let ns = g.space_len();
    let vals = (0..g.len())
        .map(|i| {
            let (n, j) = (i / ns, i % ns);
            let (u, v) = (b.at(n, j), b_eps.at(n, j));
            let mut d2 = S::zero();
            for a in 0..b.arity() {
                d2 += (u[a] - v[a]) * (u[a] - v[a]);
            }
            d2.sqrt() + (f.at(n, j) - f_eps.at(n, j)).abs()
        })
        .collect();
    Field::from_values_unchecked(g, vals)
}

/// Mollifies one action's coefficients at each `epsilon` and measures the
/// `L^p` distance to the raw coefficients on a quadrature grid with steps at
/// most `eps_min / 4`.
pub fn coefficient_ladder<S: Real>(
    oracle: &dyn Coefficients<S>,
    action: &Point<S>,
    grid: &Grid<S>,
    eps_list: &[S],
    p: f64,
) -> Result<LadderReport<S>> {
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("empty epsilon ladder".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("epsilon ladder must be strictly decreasing".into()));
    }
    let h = grid.dx_max().max(grid.dt());
    for &eps in eps_list {
        if eps < h {
            return Err(Error::InvalidArgument(format!(
                "epsilon {eps} is not resolved by the grid (step {h})"
            )));
        }
    }
    let eps_min = eps_list[eps_list.len() - 1].as_f64();
    let refinement = ((4.0 * h.as_f64() / eps_min).ceil() as usize).max(1);
    let fine = refine_grid(grid, refinement)?;
    let (b_raw, f_raw) = sample_to_grid(oracle, grid, action)?;
    let (b_fine, f_fine) = sample_to_grid(oracle, &fine, action)?;
    let ns = fine.space_len();
    let mut rungs = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let kernel = MollifierKernel::new(eps, grid.dim())?;
        let b_eps = mollify_vector(&b_fine, &kernel);
        let f_eps = mollify_field(&f_fine, &kernel);
        let gap = pointwise_gap(&b_fine, &f_fine, &b_eps, &f_eps);
        let lp_distance = crate::grid::lp_norm(&gap, p)?.as_f64();
        let lo = eps;
        let hi = fine.t_final() - eps;
        let lp_distance_interior = lp_norm_where(&gap, p, |n, _| {
            let t = fine.time(n);
            t >= lo && t <= hi
        })?
        .as_f64();
        let mut sup_norm = 0.0f64;
        for i in 0..fine.len() {
            let (n, j) = (i / ns, i % ns);
            let b = b_eps.at(n, j);
            let mag = (0..grid.dim()).map(|a| b[a] * b[a]).sum::<S>().sqrt() + f_eps.at(n, j).abs();
            sup_norm = sup_norm.max(mag.as_f64());
        }
        rungs.push(LadderRung {
            epsilon: eps,
            drift: mollify_vector(&b_raw, &kernel),
            cost: mollify_field(&f_raw, &kernel),
            lp_distance,
            lp_distance_interior,
            sup_norm,
        });
    }
    Ok(LadderReport {
        p,
        refinement,
        rungs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{AdditiveDrift, CostModel, Counterexample, SmoothBaseline};
    use proptest::prelude::*;

    fn torus(nx: usize, nt: usize) -> Grid<f64> {
        Grid::new(DomainKind::Torus, 1, &[(-1.0, 1.0)], &[nx], 1.0, nt).unwrap()
    }

    #[test]
    fn kernel_support_and_scaling() {
        let k = MollifierKernel::new(0.3, 1).unwrap();
        assert_eq!(k.value(0.3, &[0.0, 0.0]), 0.0);
        assert_eq!(k.value(0.2, &[0.25, 0.0]), 0.0);
        let unit = MollifierKernel::new(1.0, 1).unwrap();
        let ratio = k.value(0.0, &[0.0, 0.0]) / unit.value(0.0, &[0.0, 0.0]);
        assert!((ratio - 0.3f64.powi(-2)).abs() < 1e-9);
        assert!(MollifierKernel::new(0.0, 1).is_err());
        assert!(MollifierKernel::<f64>::new(-1.0, 2).is_err());
    }

    #[test]
    fn kernel_integrates_to_one() {
        for dim in [1usize, 2] {
            for eps in [0.4, 0.05] {
                let k = MollifierKernel::new(eps, dim).unwrap();
                let total = k.quadrature_integral(120);
                assert!((total - 1.0).abs() < 1e-8, "dim {dim}, eps {eps}: {total}");
                let g = torus(64, 64);
                if dim == 1 {
                    assert!((k.discrete_mass(&g) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constants_preserved_in_time_interior() {
        let g = torus(40, 40);
        let k = MollifierKernel::new(0.2, 1).unwrap();
        let m = mollify_field(&Field::constant(&g, 3.0), &k);
        for n in 0..=40 {
            let t = g.time(n);
            if t >= 0.2 && t <= 0.8 {
                assert!(m.level(n).iter().all(|v| (v - 3.0).abs() < 1e-12));
            }
        }
        // zero extension in time halves the mass (up to the centre row) at t = 0
        assert!(m.level(0)[0] < 2.0);
    }

    #[test]
    fn step_at_origin_is_one_half() {
        let k = MollifierKernel::new(0.1, 1).unwrap();
        let step = |_: f64, x: &Point<f64>| if x[0] > 0.0 { 1.0 } else { 0.0 };
        let v = mollify_at(&k, step, 0.5, &[0.0, 0.0], 1.0, 40).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn counterexample_drift_is_washed_out() {
        let ce = Counterexample::new(1);
        let k = MollifierKernel::new(0.05, 1).unwrap();
        let a = 0.3;
        let drift = |t: f64, x: &Point<f64>| ce.eval(t, x, &[a, 0.0]).drift[0];
        let v = mollify_at(&k, drift, 0.5, &[a, 0.0], 1.0, 30).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_ladder_is_second_order() {
        let g = torus(64, 64);
        let sb = SmoothBaseline::new(1, 2.0, 1.0, 0.5, 0.5, 1.0);
        let eps = [0.2, 0.1, 0.05];
        let r = coefficient_ladder(&sb, &[0.0, 0.0], &g, &eps, 2.0).unwrap();
        let d: Vec<f64> = r.rungs.iter().map(|r| r.lp_distance_interior).collect();
        for w in d.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.6, "{d:?}");
        }
    }

    #[test]
    fn step_ladder_decreases_and_constant_vanishes() {
        let g = torus(64, 32);
        let step = AdditiveDrift::step(1, 1.0, 1.0, CostModel::Zero);
        let eps = [0.2, 0.1, 0.05];
        let r = coefficient_ladder(&step, &[0.0, 0.0], &g, &eps, 2.0).unwrap();
        let d: Vec<f64> = r.rungs.iter().map(|r| r.lp_distance_interior).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
        // O(eps^{1/p}) with two jumps per period
        let ratio = d[1] / d[2];
        assert!((ratio - 2f64.sqrt()).abs() < 0.2, "{d:?}");
        let csv = r.to_csv();
        assert!(csv.starts_with("epsilon,lp_distance,sup_norm\n"));
        assert_eq!(csv.lines().count(), 4);

        let c = AdditiveDrift::constant(1, 0.7, 1.0, CostModel::Constant(0.2));
        let r = coefficient_ladder(&c, &[0.1, 0.0], &g, &eps, 2.0).unwrap();
        assert!(r.rungs.iter().all(|r| r.lp_distance_interior <= 1e-8));
    }

    #[test]
    fn ladder_rejects_bad_rungs() {
        let g = torus(16, 16);
        let c = AdditiveDrift::constant(1, 0.0, 1.0, CostModel::Zero);
        assert!(coefficient_ladder(&c, &[0.0, 0.0], &g, &[0.1, 0.2], 2.0).is_err());
        assert!(coefficient_ladder(&c, &[0.0, 0.0], &g, &[0.5, 0.01], 2.0).is_err());
        assert!(coefficient_ladder(&c, &[0.0, 0.0], &g, &[], 2.0).is_err());
    }

    #[test]
    fn box_and_two_dimensional_mollification() {
        let g: Grid<f64> = Grid::new(DomainKind::Box, 2, &[(0.0, 1.0), (0.0, 1.0)], &[21, 21], 1.0, 20).unwrap();
        let k = MollifierKernel::new(0.15, 2).unwrap();
        let m = mollify_field(&Field::constant(&g, 1.0), &k);
        let centre = g.flatten([10, 10]);
        assert!((m.at(10, centre) - 1.0).abs() < 1e-12);
        // zero extension in space at a corner
        assert!(m.at(10, 0) < 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn domination_and_smoothness(vals in proptest::collection::vec(-2.0f64..2.0, 24 * 13)) {
            let g = Grid::new(DomainKind::Torus, 1, &[(0.0, 1.0)], &[24], 1.0, 12).unwrap();
            let f = Field::from_values(&g, vals).unwrap();
            let k = MollifierKernel::new(0.2, 1).unwrap();
            let m = mollify_field(&f, &k);
            let phi = f.map(|v| v.abs());
            let m_phi = mollify_field(&phi, &k);
            prop_assert!(m.sup_norm() <= f.sup_norm() + 1e-12);
            for (a, b) in m.values().iter().zip(m_phi.values()) {
                prop_assert!(a.abs() <= b + 1e-12);
            }
            // discrete kernel derivative bound, with slack for the coarse stencil
            let bound = 1.5 * k.derivative_constant() / 0.2 * f.sup_norm();
            for n in 0..g.time_levels() {
                for j in 0..g.space_len() {
                    prop_assert!(g.diff_central(m.level(n), j, 0).abs() <= bound);
                }
            }
        }

        #[test]
        fn mass_preserved_in_interior(vals in proptest::collection::vec(0.0f64..1.0, 32)) {
            // time-independent data: the spatial mass is preserved exactly on the torus
            let g = Grid::new(DomainKind::Torus, 1, &[(0.0, 1.0)], &[32], 1.0, 16).unwrap();
            let f = Field::from_fn(&g, |_, x: &Point<f64>| vals[((x[0] * 32.0).floor() as usize).min(31)]);
            let k = MollifierKernel::new(0.25, 1).unwrap();
            let m = mollify_field(&f, &k);
            let before: f64 = f.level(8).iter().sum();
            let after: f64 = m.level(8).iter().sum();
            prop_assert!((before - after).abs() < 1e-10);
        }
    }
}
