//! Pointwise minimization of `b . p + f` over a finite action list, policies,
//! and the discrete Hamiltonian used by the solvers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{ActionSet, Coeff, Coefficients};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, VectorField};
use crate::io::grid_values_csv;
use crate::linear_parabolic::Advection;
use crate::scalar::{Point, Real};

/// Coefficients indexed by grid node and action index.
pub trait NodeCoefficients<S: Real>: Sync {
    fn grid(&self) -> &Grid<S>;
    fn num_actions(&self) -> usize;
    fn at(&self, n: usize, j: usize, a: usize) -> Coeff<S>;
}

/// An oracle sampled on the fly at grid nodes.
#[derive(Clone, Copy)]
pub struct OracleNodes<'a, S> {
    pub oracle: &'a dyn Coefficients<S>,
    pub actions: &'a ActionSet<S>,
    pub grid: &'a Grid<S>,
}

impl<'a, S: Real> OracleNodes<'a, S> {
    pub fn new(
        oracle: &'a dyn Coefficients<S>,
        actions: &'a ActionSet<S>,
        grid: &'a Grid<S>,
    ) -> Result<Self> {
        actions.validate_for(oracle)?;
        if actions.dim() != grid.dim() || oracle.dim() != grid.dim() {
            return Err(Error::ShapeMismatch(format!(
                "oracle `{}` and action set do not match a {}-d grid",
                oracle.name(),
                grid.dim()
            )));
        }
        Ok(Self {
            oracle,
            actions,
            grid,
        })
    }
}

impl<S: Real> NodeCoefficients<S> for OracleNodes<'_, S> {
    fn grid(&self) -> &Grid<S> {
        self.grid
    }
    fn num_actions(&self) -> usize {
        self.actions.len()
    }
    #[inline]
    fn at(&self, n: usize, j: usize, a: usize) -> Coeff<S> {
        self.oracle
            .eval(self.grid.time(n), &self.grid.point(j), self.actions.get(a))
    }
}

/// Per-action coefficient fields stored on a grid (e.g. mollified coefficients).
#[derive(Clone, Debug)]
pub struct GridTable<S> {
    grid: Grid<S>,
    drifts: Vec<VectorField<S>>,
    costs: Vec<Field<S>>,
}

impl<S: Real> GridTable<S> {
    pub fn new(drifts: Vec<VectorField<S>>, costs: Vec<Field<S>>) -> Result<Self> {
        if drifts.is_empty() || drifts.len() != costs.len() {
            return Err(Error::ShapeMismatch("need one drift and one cost field per action".into()));
        }
        let grid = costs[0].grid().clone();
        for (b, f) in drifts.iter().zip(&costs) {
            if b.grid() != &grid || f.grid() != &grid || b.arity() != grid.dim() {
                return Err(Error::ShapeMismatch("table fields live on different grids".into()));
            }
        }
        Ok(Self {
            grid,
            drifts,
            costs,
        })
    }

    pub fn sample(oracle: &dyn Coefficients<S>, actions: &ActionSet<S>, grid: &Grid<S>) -> Result<Self> {
        actions.validate_for(oracle)?;
        let mut drifts = Vec::with_capacity(actions.len());
        let mut costs = Vec::with_capacity(actions.len());
        for a in actions.iter() {
            let (b, f) = crate::coefficients::sample_to_grid(oracle, grid, a)?;
            drifts.push(b);
            costs.push(f);
        }
        Self::new(drifts, costs)
    }

    pub fn drift(&self, a: usize) -> &VectorField<S> {
        &self.drifts[a]
    }

    pub fn cost(&self, a: usize) -> &Field<S> {
        &self.costs[a]
    }
}

impl<S: Real> NodeCoefficients<S> for GridTable<S> {
    fn grid(&self) -> &Grid<S> {
        &self.grid
    }
    fn num_actions(&self) -> usize {
        self.costs.len()
    }
    #[inline]
    fn at(&self, n: usize, j: usize, a: usize) -> Coeff<S> {
        Coeff {
            drift: self.drifts[a].at(n, j),
            cost: self.costs[a].at(n, j),
        }
    }
}

#[inline]
fn dot<S: Real>(b: &Point<S>, p: &Point<S>, dim: usize) -> S {
    let mut s = b[0] * p[0];
    if dim == 2 {
        s += b[1] * p[1];
    }
    s
}

/// `min_a { b(t,x,a) . p + f(t,x,a) }` with the lowest index winning ties.
pub fn ham_min<S: Real>(
    t: S,
    x: &Point<S>,
    p: &Point<S>,
    oracle: &dyn Coefficients<S>,
    actions: &ActionSet<S>,
) -> (S, usize) {
    let dim = oracle.dim();
    let mut best = (S::infinity(), 0);
    for (i, a) in actions.iter().enumerate() {
        let c = oracle.eval(t, x, a);
        let v = dot(&c.drift, p, dim) + c.cost;
        if v < best.0 {
            best = (v, i);
        }
    }
    best
}

/// Slack `2^{-k} (1 + |x|^2)^{-delta}` allowed to an iteration-`k` selector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackSchedule {
    pub delta: f64,
    pub k: u32,
}

impl SlackSchedule {
    /// `delta` must exceed `dim / (2 p)`.
    pub fn new(delta: f64, k: u32, dim: usize, p: f64) -> Result<Self> {
        let floor = dim as f64 / (2.0 * p);
        if !(delta > floor) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "slack exponent {delta} must exceed d/(2p) = {floor}"
            )));
        }
        Ok(Self { delta, k })
    }

    pub fn at_iteration(self, k: u32) -> Self {
        Self { k, ..self }
    }

    pub fn value<S: Real>(&self, x: &Point<S>, dim: usize) -> f64 {
        let r2: f64 = x[..dim].iter().map(|v| v.as_f64() * v.as_f64()).sum();
        0.5f64.powi(self.k as i32) * (1.0 + r2).powf(-self.delta)
    }
}

/// Action index per `(time level, node)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy<S> {
    grid: Grid<S>,
    num_actions: usize,
    indices: Vec<usize>,
}

impl<S: Real> Policy<S> {
    pub fn new(grid: &Grid<S>, num_actions: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "policy has {} entries for {} nodes",
                indices.len(),
                grid.len()
            )));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= num_actions) {
            return Err(Error::InvalidArgument(format!(
                "action index {bad} outside a set of {num_actions}"
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            num_actions,
            indices,
        })
    }

    pub fn constant(grid: &Grid<S>, num_actions: usize, index: usize) -> Result<Self> {
        Self::new(grid, num_actions, vec![index; grid.len()])
    }

    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn level(&self, n: usize) -> &[usize] {
        let ns = self.grid.space_len();
        &self.indices[n * ns..(n + 1) * ns]
    }

    pub fn at(&self, n: usize, j: usize) -> usize {
        self.indices[n * self.grid.space_len() + j]
    }

    /// Nearest node in space, left-continuous in time.
    pub fn lookup(&self, t: S, x: &Point<S>) -> usize {
        let n = self.grid.level_at_or_before(t).min(self.grid.nt().saturating_sub(1));
        self.at(n, self.grid.nearest_node(x))
    }

    /// Number of nodes on levels `0..nt` where the two policies differ.
    pub fn changes_from(&self, other: &Policy<S>) -> usize {
        let active = self.grid.nt() * self.grid.space_len();
        self.indices[..active]
            .iter()
            .zip(&other.indices[..active])
            .filter(|(a, b)| a != b)
            .count()
    }

    /// CSV `t,x[,y],action_index`.
    pub fn to_csv(&self) -> String {
        grid_values_csv(&self.grid, "action_index", self.grid.time_levels(), |n, j| {
            self.at(n, j)
        })
    }
}

/// Exact argmin selector from a gradient field. With a slack schedule, the
/// realized Hamiltonian is also checked to lie within the slack of the minimum,
/// which holds trivially for the exact argmin.
pub fn select_policy<S: Real>(
    grad: &VectorField<S>,
    oracle: &dyn Coefficients<S>,
    actions: &ActionSet<S>,
    slack: Option<&SlackSchedule>,
) -> Result<Policy<S>> {
    actions.validate_for(oracle)?;
    let grid = grad.grid();
    let ns = grid.space_len();
    let mut indices = vec![0usize; grid.len()];
    indices.par_chunks_mut(ns).enumerate().for_each(|(n, level)| {
        let t = grid.time(n);
        for (j, slot) in level.iter_mut().enumerate() {
            *slot = ham_min(t, &grid.point(j), &grad.at(n, j), oracle, actions).1;
        }
    });
    if let Some(s) = slack {
        for (i, &a) in indices.iter().enumerate() {
            let (n, j) = (i / ns, i % ns);
            let (t, x, p) = (grid.time(n), grid.point(j), grad.at(n, j));
            let c = oracle.eval(t, &x, actions.get(a));
            let realized = dot(&c.drift, &p, grid.dim()) + c.cost;
            let min = ham_min(t, &x, &p, oracle, actions).0;
            if (realized - min).as_f64() > s.value(&x, grid.dim()) {
                return Err(Error::Numerical(format!("selector exceeded slack at t={t}")));
            }
        }
    }
    Policy::new(grid, actions.len(), indices)
}

pub fn truncate_action_set<S: Real>(actions: &ActionSet<S>, n: usize) -> Result<ActionSet<S>> {
    actions.truncate(n)
}

/// Discrete drift term `b . grad u` at node `j` with the solver's stencil:
/// `b+ D+ u - b- D- u` per axis (upwind) or `b D0 u` (central).
#[inline]
pub fn discrete_advection<S: Real>(
    grid: &Grid<S>,
    u: &[S],
    j: usize,
    b: &Point<S>,
    advection: Advection,
) -> S {
    let mut s = S::zero();
    for axis in 0..grid.dim() {
        let (Some(l), Some(r)) = (grid.neighbor(j, axis, -1), grid.neighbor(j, axis, 1)) else {
            continue;
        };
        let h = grid.dx(axis);
        let bi = b[axis];
        s += match advection {
            Advection::Upwind => {
                bi.max(S::zero()) * (u[r] - u[j]) / h - (-bi).max(S::zero()) * (u[j] - u[l]) / h
            }
            Advection::Central => bi * (u[r] - u[l]) / (S::lit(2.0) * h),
        };
    }
    s
}

/// `min_a { b_a . grad_h u + f_a }` at node `(n, j)` for level values `u`.
#[inline]
pub fn discrete_ham_min<S: Real>(
    nodes: &dyn NodeCoefficients<S>,
    n: usize,
    j: usize,
    u: &[S],
    advection: Advection,
) -> (S, usize) {
    let grid = nodes.grid();
    let mut best = (S::infinity(), 0);
    for a in 0..nodes.num_actions() {
        let c = nodes.at(n, j, a);
        let v = discrete_advection(grid, u, j, &c.drift, advection) + c.cost;
        if v < best.0 {
            best = (v, a);
        }
    }
    best
}

/// Argmin of the discrete Hamiltonian on one level.
pub fn select_level<S: Real>(
    nodes: &dyn NodeCoefficients<S>,
    n: usize,
    u: &[S],
    advection: Advection,
    out: &mut [usize],
) {
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = discrete_ham_min(nodes, n, j, u, advection).1;
    }
}

/// Policy improvement on one level that keeps the incumbent `out[j]` unless
/// another action beats it by more than rounding. Plain argmin re-selection
/// can flip between tied actions forever on noise of a few ulps.
pub fn improve_level<S: Real>(
    nodes: &dyn NodeCoefficients<S>,
    n: usize,
    u: &[S],
    advection: Advection,
    out: &mut [usize],
) {
    let grid = nodes.grid();
    let dim = grid.dim();
    let mut inv_dx = S::zero();
    for axis in 0..dim {
        inv_dx = inv_dx.max(S::one() / grid.dx(axis));
    }
    let tie = S::lit(256.0) * S::epsilon();
    for (j, slot) in out.iter_mut().enumerate() {
        let keep = *slot;
        let mut best = (S::infinity(), keep);
        let mut incumbent = S::infinity();
        let mut scale = S::one();
        for a in 0..nodes.num_actions() {
            let c = nodes.at(n, j, a);
            let v = discrete_advection(grid, u, j, &c.drift, advection) + c.cost;
            let mut b = S::zero();
            for axis in 0..dim {
                b += c.drift[axis].abs();
            }
            scale = scale.max(c.cost.abs() + b * u[j].abs() * inv_dx).max(v.abs());
            if a == keep {
                incumbent = v;
            }
            if v < best.0 {
                best = (v, a);
            }
        }
        if best.0 < incumbent - tie * scale {
            *slot = best.1;
        }
    }
}

/// [`improve_level`] on every level, starting from `current`.
pub fn improve_discrete_policy<S: Real>(
    nodes: &dyn NodeCoefficients<S>,
    u: &Field<S>,
    advection: Advection,
    current: &Policy<S>,
) -> Policy<S> {
    let grid = u.grid();
    let ns = grid.space_len();
    let mut indices = current.indices.clone();
    indices.par_chunks_mut(ns).enumerate().for_each(|(n, level)| {
        improve_level(nodes, n, u.level(n), advection, level);
    });
    Policy {
        grid: grid.clone(),
        num_actions: nodes.num_actions(),
        indices,
    }
}

/// Argmax of the discrete Hamiltonian at every level of `u`: the worst
/// action against the value's gradient.
pub fn select_worst_policy<S: Real>(
    nodes: &dyn NodeCoefficients<S>,
    u: &Field<S>,
    advection: Advection,
) -> Policy<S> {
    let grid = u.grid();
    let ns = grid.space_len();
    let mut indices = vec![0usize; grid.len()];
    indices.par_chunks_mut(ns).enumerate().for_each(|(n, level)| {
        let values = u.level(n);
        for (j, slot) in level.iter_mut().enumerate() {
            let mut worst = (S::neg_infinity(), 0);
            for a in 0..nodes.num_actions() {
                let c = nodes.at(n, j, a);
                let v = discrete_advection(grid, values, j, &c.drift, advection) + c.cost;
                if v > worst.0 {
                    worst = (v, a);
                }
            }
            *slot = worst.1;
        }
    });
    Policy {
        grid: grid.clone(),
        num_actions: nodes.num_actions(),
        indices,
    }
}

/// Argmin of the discrete Hamiltonian at every level of `u`.
pub fn select_discrete_policy<S: Real>(
    nodes: &dyn NodeCoefficients<S>,
    u: &Field<S>,
    advection: Advection,
) -> Policy<S> {
    let grid = u.grid();
    let ns = grid.space_len();
    let mut indices = vec![0usize; grid.len()];
    indices.par_chunks_mut(ns).enumerate().for_each(|(n, level)| {
        select_level(nodes, n, u.level(n), advection, level);
    });
    Policy {
        grid: grid.clone(),
        num_actions: nodes.num_actions(),
        indices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{AdditiveDrift, BangBang, CostModel, Counterexample, SmoothBaseline};
    use crate::grid::{spatial_gradient, DomainKind, GradientScheme};
    use proptest::prelude::*;

    #[test]
    fn bang_bang_minimum() {
        let bb = BangBang::new(1, CostModel::Zero);
        let acts = ActionSet::scalars(&[-1.0, 1.0]).unwrap();
        assert_eq!(ham_min(0.0, &[0.3, 0.0], &[2.0, 0.0], &bb, &acts), (-2.0, 0));
        assert_eq!(ham_min(0.0, &[0.3, 0.0], &[-2.0, 0.0], &bb, &acts), (-2.0, 1));
    }

    #[test]
    fn zero_gradient_picks_cheapest_lowest_index() {
        // at x = 0 the action enters the cost only through kappa |a|^2
        let o = SmoothBaseline::new(1, 1.0, 1.0, 0.5, 1.0, 2.0);
        let x: Point<f64> = [0.0, 0.0];
        let base = o.eval(0.5, &x, &[0.0, 0.0]).cost;
        let acts = ActionSet::scalars(&[1.0, -1.0, 0.5]).unwrap();
        let (v, i) = ham_min(0.5, &x, &[0.0, 0.0], &o, &acts);
        assert_eq!(i, 2);
        assert!((v - base - 0.25).abs() < 1e-12);
        let tie = ActionSet::scalars(&[1.0, -1.0]).unwrap();
        assert_eq!(ham_min(0.5, &x, &[0.0, 0.0], &o, &tie).1, 0);
    }

    #[test]
    fn counterexample_picks_diagonal_action() {
        let ce = Counterexample::new(1);
        let g = Grid::new(DomainKind::Box, 1, &[(-1.0, 1.0)], &[9], 1.0, 1).unwrap();
        let acts = ActionSet::scalars(&(0..9).map(|i| g.coord(0, i)).collect::<Vec<_>>()).unwrap();
        for j in 0..9 {
            let x = g.point(j);
            let (v, a) = ham_min(0.0, &x, &[1.0, 0.0], &ce, &acts);
            assert_eq!(a, j);
            assert_eq!(v, x[0] * x[0]);
        }
    }

    #[test]
    fn policy_from_quadratic_gradient() {
        let g = Grid::new(DomainKind::Box, 1, &[(-1.0, 1.0)], &[5], 1.0, 2).unwrap();
        let u = Field::from_fn(&g, |_, x| x[0] * x[0]);
        let grad = spatial_gradient(&u, GradientScheme::Central).unwrap();
        let bb = BangBang::new(1, CostModel::Zero);
        let acts = ActionSet::scalars(&[-1.0, 1.0]).unwrap();
        let pol = select_policy(&grad, &bb, &acts, None).unwrap();
        // x = -1, -0.5, 0, 0.5, 1 -> +1, +1, tie(-1), -1, -1
        assert_eq!(pol.level(0), &[1, 1, 0, 0, 0]);
        let single = ActionSet::scalars(&[1.0]).unwrap();
        let pol1 = select_policy(&grad, &bb, &single, None).unwrap();
        assert!(pol1.indices().iter().all(|&i| i == 0));
        let slack = SlackSchedule::new(1.0, 0, 1, 2.0).unwrap();
        assert!(select_policy(&grad, &bb, &acts, Some(&slack)).is_ok());
        let csv = pol.to_csv();
        assert!(csv.starts_with("t,x,action_index\n"));
    }

    #[test]
    fn slack_schedule_rules() {
        let s = SlackSchedule::new(1.0, 0, 1, 2.0).unwrap();
        assert_eq!(s.value(&[0.0, 0.0], 1), 1.0);
        assert_eq!(s.at_iteration(1).value(&[1.0, 0.0], 1), 0.25);
        assert!(SlackSchedule::new(0.2, 0, 2, 2.0).is_err());
    }

    #[test]
    fn truncation_prefixes() {
        let acts = ActionSet::scalars(&[1.0, 2.0, 3.0]).unwrap();
        let t = truncate_action_set(&acts, 2).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.is_truncation());
        assert_eq!(truncate_action_set(&acts, 5).unwrap().len(), 3);
        assert!(truncate_action_set(&acts, 0).is_err());
    }

    #[test]
    fn policy_lookup_and_validation() {
        let g = Grid::new(DomainKind::Torus, 1, &[(0.0, 1.0)], &[4], 1.0, 2).unwrap();
        let pol = Policy::new(&g, 3, vec![0, 1, 2, 0, 1, 1, 1, 1, 2, 2, 2, 2]).unwrap();
        assert_eq!(pol.lookup(0.2, &[0.3, 0.0]), 1);
        assert_eq!(pol.lookup(0.6, &[0.3, 0.0]), 1);
        assert_eq!(pol.lookup(1.0, &[0.9, 0.0]), 1);
        assert!(Policy::new(&g, 2, vec![2; 12]).is_err());
        assert!(Policy::new(&g, 2, vec![0; 11]).is_err());
    }

    proptest! {
        #[test]
        fn lower_envelope_and_concavity(
            acts in proptest::collection::vec(-2.0f64..2.0, 1..6),
            x in -3.0f64..3.0,
            p1 in -5.0f64..5.0,
            p2 in -5.0f64..5.0,
            lambda in 0.0f64..1.0,
        ) {
            let mut acts = acts;
            acts.sort_by(f64::total_cmp);
            acts.dedup();
            let set = ActionSet::scalars(&acts).unwrap();
            let o = AdditiveDrift::step(1, 0.5, 2.0, CostModel::Quadratic);
            let pt = [x, 0.0];
            let (h1, _) = ham_min(0.3, &pt, &[p1, 0.0], &o, &set);
            for a in set.iter() {
                let c = o.eval(0.3, &pt, a);
                prop_assert!(h1 <= c.drift[0] * p1 + c.cost);
            }
            let (h2, _) = ham_min(0.3, &pt, &[p2, 0.0], &o, &set);
            let pm = lambda * p1 + (1.0 - lambda) * p2;
            let (hm, _) = ham_min(0.3, &pt, &[pm, 0.0], &o, &set);
            prop_assert!(hm >= lambda * h1 + (1.0 - lambda) * h2 - 1e-12);
        }

        #[test]
        fn selector_realizes_minimum(vals in proptest::collection::vec(-1.0f64..1.0, 8 * 3)) {
            let g = Grid::new(DomainKind::Torus, 1, &[(0.0, 1.0)], &[8], 1.0, 2).unwrap();
            let u = Field::from_values(&g, vals).unwrap();
            let grad = spatial_gradient(&u, GradientScheme::Central).unwrap();
            let o = AdditiveDrift::step(1, 0.5, 1.0, CostModel::Quadratic);
            let acts = ActionSet::scalars(&[-1.0, 0.0, 0.5, 1.0]).unwrap();
            let pol = select_policy(&grad, &o, &acts, None).unwrap();
            for n in 0..3 {
                for j in 0..8 {
                    let (t, x, p) = (g.time(n), g.point(j), grad.at(n, j));
                    let c = o.eval(t, &x, acts.get(pol.at(n, j)));
                    prop_assert_eq!(c.drift[0] * p[0] + c.cost, ham_min(t, &x, &p, &o, &acts).0);
                }
            }
        }
    }
}
