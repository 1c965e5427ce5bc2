//! Euler-Maruyama simulation of `dX = b(t, X, a) dt + sqrt(2) dW` under feedback
//! controls, with seeded per-path streams and order-fixed reductions.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{ActionSet, Coefficients};
use crate::error::{Error, Result};
use crate::grid::{DomainKind, Field, Grid};
use crate::hamiltonian::Policy;
use crate::scalar::{pairwise_sum, Point, Real};

/// What happens to paths at the edge of the computational domain.
#[derive(Clone, Debug, PartialEq)]
pub enum SimDomain<S> {
    Whole,
    /// Periodic wrap into `[lo, lo + length)`.
    Torus { lo: Point<S>, length: Point<S> },
    /// Paths may leave; coefficients are evaluated at the nearest point of the box.
    Box { lo: Point<S>, hi: Point<S> },
}

impl<S: Real> SimDomain<S> {
    pub fn from_grid(grid: &Grid<S>) -> Self {
        let mut lo = [S::zero(); 2];
        let mut hi = [S::zero(); 2];
        let mut len = [S::one(); 2];
        for a in 0..grid.dim() {
            lo[a] = grid.lo(a);
            hi[a] = grid.hi(a);
            len[a] = grid.length(a);
        }
        match grid.kind() {
            DomainKind::Torus => SimDomain::Torus { lo, length: len },
            DomainKind::Box => SimDomain::Box { lo, hi },
        }
    }

    #[inline]
    fn wrap(&self, x: &mut Point<S>, dim: usize) {
        if let SimDomain::Torus { lo, length } = self {
            for a in 0..dim {
                let mut r = (x[a] - lo[a]) % length[a];
                if r < S::zero() {
                    r += length[a];
                }
                x[a] = lo[a] + r;
            }
        }
    }

    /// Evaluation point and whether `x` is outside the box.
    #[inline]
    fn clamp(&self, x: &Point<S>, dim: usize) -> (Point<S>, bool) {
        match self {
            SimDomain::Box { lo, hi } => {
                let mut y = *x;
                let mut out = false;
                for a in 0..dim {
                    if y[a] < lo[a] || y[a] > hi[a] {
                        out = true;
                        y[a] = y[a].max(lo[a]).min(hi[a]);
                    }
                }
                (y, out)
            }
            _ => (*x, false),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig<S> {
    pub paths: usize,
    pub dt_sim: S,
    pub seed: u64,
    pub start_time: S,
    pub start: Point<S>,
    pub t_final: S,
    pub domain: SimDomain<S>,
}

impl<S: Real> SimConfig<S> {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidArgument("path count must be at least 1".into()));
        }
        let horizon = self.t_final - self.start_time;
        if !(horizon > S::zero()) {
            return Err(Error::InvalidArgument("start time must precede the horizon".into()));
        }
        if !(self.dt_sim > S::zero()) || self.dt_sim > horizon {
            return Err(Error::InvalidArgument(format!(
                "dt_sim must lie in (0, T - s], got {}",
                self.dt_sim
            )));
        }
        if self.start[..dim].iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("start point must be finite".into()));
        }
        Ok(())
    }
}

/// A feedback law `(t, x) -> a`.
pub trait Feedback<S: Real>: Sync {
    fn name(&self) -> String;
    fn action(&self, t: S, x: &Point<S>) -> Point<S>;
}

#[derive(Clone, Debug)]
pub struct ConstantAction<S>(pub Point<S>);

impl<S: Real> Feedback<S> for ConstantAction<S> {
    fn name(&self) -> String {
        format!("constant({})", self.0[0])
    }
    fn action(&self, _: S, _: &Point<S>) -> Point<S> {
        self.0
    }
}

/// A closure feedback with a label, e.g. `a = x`.
pub struct FnFeedback<S, F> {
    pub label: String,
    pub rule: F,
    _marker: std::marker::PhantomData<fn() -> S>,
}

impl<S, F> FnFeedback<S, F> {
    pub fn new(label: impl Into<String>, rule: F) -> Self {
        Self {
            label: label.into(),
            rule,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<S: Real, F: Fn(S, &Point<S>) -> Point<S> + Sync> Feedback<S> for FnFeedback<S, F> {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn action(&self, t: S, x: &Point<S>) -> Point<S> {
        (self.rule)(t, x)
    }
}

/// A grid policy read at the nearest node, left-continuous in time.
pub struct PolicyFeedback<'a, S> {
    pub label: String,
    pub policy: &'a Policy<S>,
    pub actions: &'a ActionSet<S>,
}

impl<S: Real> Feedback<S> for PolicyFeedback<'_, S> {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn action(&self, t: S, x: &Point<S>) -> Point<S> {
        *self.actions.get(self.policy.lookup(t, x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MCEstimate {
    pub control: String,
    pub mean: f64,
    pub se: f64,
    pub paths: usize,
    /// Step actually used (the horizon is split into equal steps).
    pub dt_sim: f64,
    pub seed: u64,
    /// Paths that left a box domain at some step.
    pub exits: usize,
    #[serde(skip)]
    pub elapsed_secs: f64,
}

/// JSON record `{scenario, control, mean, se, M, dt_sim, seed}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub scenario: String,
    pub control: String,
    pub mean: f64,
    pub se: f64,
    #[serde(rename = "M")]
    pub paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
}

impl MCEstimate {
    pub fn record(&self, scenario: &str) -> McRecord {
        McRecord {
            scenario: scenario.to_string(),
            control: self.control.clone(),
            mean: self.mean,
            se: self.se,
            paths: self.paths,
            dt_sim: self.dt_sim,
            seed: self.seed,
        }
    }

    fn from_samples(control: String, samples: &[(f64, bool)], dt: f64, seed: u64, started: Instant) -> Self {
        let m = samples.len();
        let values: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let mean = pairwise_sum(&values) / m as f64;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if m > 1 { pairwise_sum(&dev) / (m - 1) as f64 } else { 0.0 };
        Self {
            control,
            mean,
            se: (var / m as f64).sqrt(),
            paths: m,
            dt_sim: dt,
            seed,
            exits: samples.iter().filter(|s| s.1).count(),
            elapsed_secs: started.elapsed().as_secs_f64(),
        }
    }
}

/// Independent stream for path `index`.
fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn steps<S: Real>(from: S, to: S, dt: S) -> (usize, S) {
    let k = ((to - from) / dt).round().to_usize().unwrap_or(1).max(1);
    (k, (to - from) / S::from_usize_lossy(k))
}

/// Simulates one path to `t_end`; returns the running cost and the end state.
#[allow(clippy::too_many_arguments)]
fn run_path<S: Real>(
    oracle: &dyn Coefficients<S>,
    feedback: &dyn Feedback<S>,
    sim: &SimConfig<S>,
    index: usize,
    k: usize,
    h: S,
) -> (S, Point<S>, bool) {
    let dim = oracle.dim();
    let mut rng = path_rng(sim.seed, index);
    let noise = (S::lit(2.0) * h).sqrt();
    let mut x = sim.start;
    sim.domain.wrap(&mut x, dim);
    let mut cost = S::zero();
    let mut left = false;
    for step in 0..k {
        let t = sim.start_time + S::from_usize_lossy(step) * h;
        let (y, out) = sim.domain.clamp(&x, dim);
        left |= out;
        let a = feedback.action(t, &y);
        let c = oracle.eval(t, &y, &a);
        cost += c.cost * h;
        for axis in 0..dim {
            let xi: f64 = StandardNormal.sample(&mut rng);
            x[axis] += c.drift[axis] * h + noise * S::lit(xi);
        }
        sim.domain.wrap(&mut x, dim);
    }
    let (_, out) = sim.domain.clamp(&x, dim);
    (cost, x, left || out)
}

/// Estimates `J = E int_s^T f(t, X_t, a_t) dt` (left-endpoint rule).
pub fn simulate_cost<S: Real>(
    oracle: &dyn Coefficients<S>,
    feedback: &dyn Feedback<S>,
    sim: &SimConfig<S>,
) -> Result<MCEstimate> {
    simulate_functional(oracle, feedback, sim, sim.t_final, |_| S::zero())
}

/// Estimates `E[ int_s^t_end f dt + terminal(X_{t_end}) ]`.
pub fn simulate_functional<S: Real>(
    oracle: &dyn Coefficients<S>,
    feedback: &dyn Feedback<S>,
    sim: &SimConfig<S>,
    t_end: S,
    terminal: impl Fn(&Point<S>) -> S + Sync,
) -> Result<MCEstimate> {
    sim.validate(oracle.dim())?;
    if !(t_end > sim.start_time) || t_end > sim.t_final {
        return Err(Error::InvalidArgument(format!("end time {t_end} outside (s, T]")));
    }
    let started = Instant::now();
    let (k, h) = steps(sim.start_time, t_end, sim.dt_sim);
    let samples: Vec<(f64, bool)> = (0..sim.paths)
        .into_par_iter()
        .map(|i| {
            let (cost, x, out) = run_path(oracle, feedback, sim, i, k, h);
            ((cost + terminal(&x)).as_f64(), out)
        })
        .collect();
    let est = MCEstimate::from_samples(feedback.name(), &samples, h.as_f64(), sim.seed, started);
    if !est.mean.is_finite() || !est.se.is_finite() {
        return Err(Error::Numerical("non-finite Monte Carlo estimate".into()));
    }
    Ok(est)
}

/// One arm of a paired simulation.
pub type Arm<'a, S> = (&'a dyn Coefficients<S>, &'a dyn Feedback<S>);

/// `J(first) - J(second)` with common random numbers; the arms may use
/// different coefficients.
pub fn simulate_difference<S: Real>(first: Arm<'_, S>, second: Arm<'_, S>, sim: &SimConfig<S>) -> Result<MCEstimate> {
    let dim = first.0.dim();
    if second.0.dim() != dim {
        return Err(Error::ShapeMismatch("paired arms differ in dimension".into()));
    }
    sim.validate(dim)?;
    let started = Instant::now();
    let (k, h) = steps(sim.start_time, sim.t_final, sim.dt_sim);
    let samples: Vec<(f64, bool)> = (0..sim.paths)
        .into_par_iter()
        .map(|i| {
            let (c1, _, o1) = run_path(first.0, first.1, sim, i, k, h);
            let (c2, _, o2) = run_path(second.0, second.1, sim, i, k, h);
            ((c1 - c2).as_f64(), o1 || o2)
        })
        .collect();
    let label = format!("{} - {}", first.1.name(), second.1.name());
    Ok(MCEstimate::from_samples(label, &samples, h.as_f64(), sim.seed, started))
}

/// `E[ int_s^t_mid f dt + u(t_mid, X_{t_mid}) ] - u(s, x)` under `feedback`.
/// `s` and `t_mid` must be time levels of `u`'s grid.
pub fn dpp_residual<S: Real>(
    u: &Field<S>,
    oracle: &dyn Coefficients<S>,
    feedback: &dyn Feedback<S>,
    t_mid: S,
    sim: &SimConfig<S>,
) -> Result<MCEstimate> {
    let grid = u.grid();
    if !(t_mid > sim.start_time) || !(t_mid < sim.t_final) {
        return Err(Error::InvalidArgument(format!(
            "t_mid = {t_mid} must lie strictly between {} and {}",
            sim.start_time, sim.t_final
        )));
    }
    let level = |t: S| -> Result<usize> {
        let n = grid.nearest_level(t);
        if (grid.time(n) - t).abs() > S::lit(1e-9) * (S::one() + grid.t_final()) {
            return Err(Error::InvalidArgument(format!("time {t} is not a level of the value grid")));
        }
        Ok(n)
    };
    let n_mid = level(t_mid)?;
    let n0 = level(sim.start_time)?;
    let u0 = u.interpolate_level(n0, &sim.start);
    let mut est = simulate_functional(oracle, feedback, sim, t_mid, |x| u.interpolate_level(n_mid, x))?;
    est.mean -= u0.as_f64();
    Ok(est)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheckEntry {
    pub control: String,
    pub mean: f64,
    pub se: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheckReport {
    pub phi_sup: f64,
    pub horizon: f64,
    pub bound: f64,
    pub entries: Vec<BoundCheckEntry>,
}

impl BoundCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

/// Checks `|J| <= sup Phi * (T - s) + 3 SE` with `Phi` maximized over grid nodes.
pub fn cost_bound_check<S: Real>(
    oracle: &dyn Coefficients<S>,
    grid: &Grid<S>,
    start_time: S,
    runs: &[MCEstimate],
) -> Result<BoundCheckReport> {
    let mut phi_sup = 0.0f64;
    for n in 0..grid.time_levels() {
        let t = grid.time(n);
        for j in 0..grid.space_len() {
            phi_sup = phi_sup.max(oracle.bound(t, &grid.point(j)).as_f64());
        }
    }
    let horizon = (grid.t_final() - start_time).as_f64();
    let bound = phi_sup * horizon;
    let entries: Vec<BoundCheckEntry> = runs
        .iter()
        .map(|r| BoundCheckEntry {
            control: r.control.clone(),
            mean: r.mean,
            se: r.se,
            passed: r.mean.abs() <= bound + 3.0 * r.se,
        })
        .collect();
    let report = BoundCheckReport {
        phi_sup,
        horizon,
        bound,
        entries,
    };
    if let Some(bad) = report.entries.iter().find(|e| !e.passed) {
        return Err(Error::Numerical(format!(
            "cost bound violated by `{}`: |{}| > {} + 3 * {}",
            bad.control, bad.mean, bound, bad.se
        )));
    }
    Ok(report)
}
