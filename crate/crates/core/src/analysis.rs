//! Experiments built on the solvers: verification and DPP checks, mollification
//! sweeps, the strict-gap counterexample and countable-action truncations.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{ActionSet, Coeff, Coefficients, CountableFamily, Counterexample};
use crate::error::{Error, Result};
use crate::grid::{lp_norm_where, BoundaryCondition, DomainKind, Field, Grid};
use crate::hamiltonian::{GridTable, NodeCoefficients, OracleNodes, Policy};
use crate::hjb_solver::solve_hjb_direct;
use crate::io::grid_values_csv;
use crate::linear_parabolic::ParabolicScheme;
use crate::mollifier::{mollified_table, MollifierKernel};
use crate::montecarlo::{
    dpp_residual, simulate_cost, simulate_difference, FnFeedback, Feedback, McRecord, SimConfig,
};
use crate::scalar::{Point, Real};

/// `5 (dx^2 + dt)`: allowance for the PDE discretization.
pub fn scheme_tolerance<S: Real>(grid: &Grid<S>) -> f64 {
    let dx = grid.dx_max().as_f64();
    5.0 * (dx * dx + grid.dt().as_f64())
}

/// `5 (dx^2 + dt + dt_sim)`: allowance when a simulated cost is compared to a PDE value.
pub fn simulation_tolerance<S: Real>(grid: &Grid<S>, dt_sim: f64) -> f64 {
    scheme_tolerance(grid) + 5.0 * dt_sim
}

fn level_of<S: Real>(grid: &Grid<S>, t: S) -> Result<usize> {
    let n = grid.nearest_level(t);
    if (grid.time(n) - t).abs() > S::lit(1e-9) * (S::one() + grid.t_final()) {
        return Err(Error::InvalidArgument(format!(
            "time {t} is not a level of the grid (dt = {})",
            grid.dt()
        )));
    }
    Ok(n)
}

// ---------------------------------------------------------------------------
// Counterexample with the action universe collapsed to drift speeds.

/// Which effective Hamiltonian of the counterexample to realize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterexampleBranch {
    /// `H = |x|^2`: drift switched off everywhere.
    Original,
    /// `H = p + |x|^2`: drift one almost everywhere, the limit of the mollified problems.
    MollifiedLimit,
    /// `H = |x|^2 + min(0, p)`: pointwise infimum over the action universe.
    PointwiseInf,
}

/// The counterexample with pseudo-actions `[v, 0]`, `v` the drift speed along
/// the first axis. Speed 0 is realized by `a = x`, speed 1 by any `a != x`.
#[derive(Clone, Debug)]
pub struct EffectiveCounterexample {
    branch: CounterexampleBranch,
    dim: usize,
    name: String,
}

impl EffectiveCounterexample {
    pub fn new(branch: CounterexampleBranch, dim: usize) -> Self {
        let tag = match branch {
            CounterexampleBranch::Original => "original",
            CounterexampleBranch::MollifiedLimit => "mollified_limit",
            CounterexampleBranch::PointwiseInf => "pointwise_inf",
        };
        Self {
            branch,
            dim,
            name: format!("counterexample[{tag}]"),
        }
    }

    pub fn branch(&self) -> CounterexampleBranch {
        self.branch
    }

    pub fn actions<S: Real>(&self) -> ActionSet<S> {
        let speeds: &[f64] = match self.branch {
            CounterexampleBranch::Original => &[0.0],
            CounterexampleBranch::MollifiedLimit => &[1.0],
            CounterexampleBranch::PointwiseInf => &[0.0, 1.0],
        };
        let pts = speeds.iter().map(|&v| [S::lit(v), S::zero()]).collect();
        ActionSet::new(self.dim, pts).expect("speeds are distinct")
    }
}

impl<S: Real> Coefficients<S> for EffectiveCounterexample {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _t: S, x: &Point<S>, a: &Point<S>) -> Coeff<S> {
        Coeff {
            drift: [a[0], S::zero()],
            cost: x[0] * x[0] + x[1] * x[1],
        }
    }
    fn bound(&self, _t: S, x: &Point<S>) -> S {
        S::one() + x[0] * x[0] + x[1] * x[1]
    }
    fn admits(&self, a: &Point<S>) -> bool {
        let ok0 = a[0] == S::zero();
        let ok1 = a[0] == S::one();
        a[1] == S::zero()
            && match self.branch {
                CounterexampleBranch::Original => ok0,
                CounterexampleBranch::MollifiedLimit => ok1,
                CounterexampleBranch::PointwiseInf => ok0 || ok1,
            }
    }
}

/// `x^2 (T - s) + (T - s)^2`.
pub fn counterexample_value(t_final: f64, s: f64, x: f64) -> f64 {
    let tau = t_final - s;
    x * x * tau + tau * tau
}

/// `((x + T - s)^3 - x^3) / 3 + (T - s)^2`, the value with drift one.
pub fn counterexample_limit_value(t_final: f64, s: f64, x: f64) -> f64 {
    let tau = t_final - s;
    ((x + tau).powi(3) - x.powi(3)) / 3.0 + tau * tau
}

/// Runs a pseudo-action feedback on the original counterexample oracle.
pub struct RealizedFeedback<'a, S> {
    pub inner: &'a dyn Feedback<S>,
}

impl<S: Real> Feedback<S> for RealizedFeedback<'_, S> {
    fn name(&self) -> String {
        format!("realized({})", self.inner.name())
    }
    fn action(&self, t: S, x: &Point<S>) -> Point<S> {
        let speed = self.inner.action(t, x)[0];
        if speed == S::zero() {
            *x
        } else {
            [x[0] + S::one(), x[1]]
        }
    }
}

// ---------------------------------------------------------------------------
// Grid tables as simulation oracles.

/// Coefficients read from a [`GridTable`] at the nearest level and node.
pub struct TableOracle<'a, S> {
    name: String,
    table: &'a GridTable<S>,
    actions: &'a ActionSet<S>,
    bound: S,
}

impl<'a, S: Real> TableOracle<'a, S> {
    pub fn new(name: impl Into<String>, table: &'a GridTable<S>, actions: &'a ActionSet<S>) -> Result<Self> {
        if table.num_actions() != actions.len() {
            return Err(Error::ShapeMismatch(format!(
                "table holds {} actions, action set {}",
                table.num_actions(),
                actions.len()
            )));
        }
        let grid = table.grid();
        let mut bound = S::zero();
        for a in 0..actions.len() {
            for n in 0..grid.time_levels() {
                for j in 0..grid.space_len() {
                    bound = bound.max(table.at(n, j, a).magnitude());
                }
            }
        }
        Ok(Self {
            name: name.into(),
            table,
            actions,
            bound,
        })
    }

    fn index(&self, a: &Point<S>) -> usize {
        let dim = self.actions.dim();
        let mut best = (0, S::infinity());
        for (i, b) in self.actions.iter().enumerate() {
            let mut d = S::zero();
            for k in 0..dim {
                d += (a[k] - b[k]) * (a[k] - b[k]);
            }
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

impl<S: Real> Coefficients<S> for TableOracle<'_, S> {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.table.grid().dim()
    }
    fn eval(&self, t: S, x: &Point<S>, a: &Point<S>) -> Coeff<S> {
        let grid = self.table.grid();
        self.table
            .at(grid.nearest_level(t), grid.nearest_node(x), self.index(a))
    }
    fn bound(&self, _t: S, _x: &Point<S>) -> S {
        self.bound
    }
    fn admits(&self, a: &Point<S>) -> bool {
        let dim = self.actions.dim();
        self.actions.iter().any(|b| b[..dim] == a[..dim])
    }
}

// ---------------------------------------------------------------------------
// Verification and dynamic programming.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlRole {
    Candidate,
    Argmin,
    Suboptimal,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationEntry {
    pub control: String,
    pub role: ControlRole,
    pub j_mc: f64,
    pub se: f64,
    pub u: f64,
    /// Paired `J(control) - J(argmin)` with common noise.
    pub excess: Option<f64>,
    pub excess_se: Option<f64>,
    pub tolerance: f64,
    /// Nonnegative iff the entry passes.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
    pub start_time: f64,
    pub start: Vec<f64>,
    pub u_start: f64,
    pub entries: Vec<VerificationEntry>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn records(&self, scenario: &str) -> Vec<McRecord> {
        self.entries
            .iter()
            .map(|e| McRecord {
                scenario: scenario.to_string(),
                control: e.control.clone(),
                mean: e.j_mc,
                se: e.se,
                paths: self.paths,
                dt_sim: self.dt_sim,
                seed: self.seed,
            })
            .collect()
    }

    pub fn failures(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| !e.passed)
            .map(|e| {
                format!(
                    "{} ({:?}): J = {:.6} +- {:.2e}, u = {:.6}, margin {:.3e}",
                    e.control, e.role, e.j_mc, e.se, e.u, e.margin
                )
            })
            .collect()
    }
}

/// `u(s, x) <= J(alpha)` for every candidate and `J(argmin) ~ u(s, x)`, by simulation
/// from `(sim.start_time, sim.start)`.
pub fn verification_check<S: Real>(
    u: &Field<S>,
    oracle: &dyn Coefficients<S>,
    argmin: &dyn Feedback<S>,
    candidates: &[&dyn Feedback<S>],
    sim: &SimConfig<S>,
) -> Result<VerificationReport> {
    let grid = u.grid();
    let n0 = level_of(grid, sim.start_time)?;
    let u0 = u.interpolate_level(n0, &sim.start).as_f64();
    let tol_lower = scheme_tolerance(grid);
    let tol_match = simulation_tolerance(grid, sim.dt_sim.as_f64());

    let best = simulate_cost(oracle, argmin, sim)?;
    let mut entries = Vec::with_capacity(candidates.len() + 1);
    let lower = best.mean - (u0 - 3.0 * best.se - tol_lower);
    let matched = 3.0 * best.se + tol_match - (best.mean - u0).abs();
    entries.push(VerificationEntry {
        control: best.control.clone(),
        role: ControlRole::Argmin,
        j_mc: best.mean,
        se: best.se,
        u: u0,
        excess: None,
        excess_se: None,
        tolerance: tol_match,
        margin: lower.min(matched),
        passed: lower >= 0.0 && matched >= 0.0,
    });
    for cand in candidates {
        let est = simulate_cost(oracle, *cand, sim)?;
        let diff = simulate_difference((oracle, *cand), (oracle, argmin), sim)?;
        let margin = est.mean - (u0 - 3.0 * est.se - tol_lower);
        entries.push(VerificationEntry {
            control: est.control.clone(),
            role: ControlRole::Candidate,
            j_mc: est.mean,
            se: est.se,
            u: u0,
            excess: Some(diff.mean),
            excess_se: Some(diff.se),
            tolerance: tol_lower,
            margin,
            passed: margin >= 0.0,
        });
    }
    let passed = entries.iter().all(|e| e.passed);
    Ok(VerificationReport {
        paths: sim.paths,
        dt_sim: best.dt_sim,
        seed: sim.seed,
        start_time: sim.start_time.as_f64(),
        start: sim.start[..grid.dim()].iter().map(|v| v.as_f64()).collect(),
        u_start: u0,
        entries,
        passed,
    })
}

/// Five fixed policies: both extreme constants, cycling in time, cycling in
/// space, and a space-time checkerboard of blocks.
pub fn candidate_policies<S: Real>(grid: &Grid<S>, num_actions: usize) -> Result<Vec<(String, Policy<S>)>> {
    if num_actions == 0 {
        return Err(Error::InvalidArgument("no actions".into()));
    }
    let ns = grid.space_len();
    let levels = grid.time_levels();
    let build = |rule: &dyn Fn(usize, usize) -> usize| -> Result<Policy<S>> {
        let mut idx = Vec::with_capacity(grid.len());
        for n in 0..levels {
            for j in 0..ns {
                idx.push(rule(n, j) % num_actions);
            }
        }
        Policy::new(grid, num_actions, idx)
    };
    let tblock = (grid.nt() / 4).max(1);
    let xblock = (grid.nx(0) / 4).max(1);
    Ok(vec![
        ("first".to_string(), build(&|_, _| 0)?),
        ("last".to_string(), build(&|_, _| num_actions - 1)?),
        ("time_cycle".to_string(), build(&|n, _| n)?),
        ("space_cycle".to_string(), build(&|_, j| j)?),
        (
            "blocks".to_string(),
            build(&|n, j| n / tblock + grid.unflatten(j)[0] / xblock)?,
        ),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DppEntry {
    pub t_mid: f64,
    pub control: String,
    pub role: ControlRole,
    pub residual: f64,
    pub se: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DppReport {
    pub entries: Vec<DppEntry>,
    pub passed: bool,
}

/// DPP residuals at each `t_mid`: near zero under the argmin feedback, and
/// above `3 SE` under each suboptimal one.
pub fn dpp_battery<S: Real>(
    u: &Field<S>,
    oracle: &dyn Coefficients<S>,
    argmin: &dyn Feedback<S>,
    suboptimal: &[&dyn Feedback<S>],
    t_mids: &[S],
    sim: &SimConfig<S>,
) -> Result<DppReport> {
    let tol = simulation_tolerance(u.grid(), sim.dt_sim.as_f64());
    let mut entries = Vec::new();
    for &t in t_mids {
        let r = dpp_residual(u, oracle, argmin, t, sim)?;
        entries.push(DppEntry {
            t_mid: t.as_f64(),
            control: r.control.clone(),
            role: ControlRole::Argmin,
            residual: r.mean,
            se: r.se,
            tolerance: tol,
            passed: r.mean.abs() <= 3.0 * r.se + tol,
        });
        for fb in suboptimal {
            let r = dpp_residual(u, oracle, *fb, t, sim)?;
            entries.push(DppEntry {
                t_mid: t.as_f64(),
                control: r.control.clone(),
                role: ControlRole::Suboptimal,
                residual: r.mean,
                se: r.se,
                tolerance: 0.0,
                passed: r.mean > 3.0 * r.se,
            });
        }
    }
    let passed = entries.iter().all(|e| e.passed);
    Ok(DppReport { entries, passed })
}

// ---------------------------------------------------------------------------
// Mollification sweeps.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepRegime {
    /// Finite action set: the gap should close.
    Converges,
    /// The gap at the probe should stay open.
    StrictGap,
}

/// Unmollified problem (value side) and what gets mollified (source side).
pub struct SweepProblem<'a, S> {
    pub value_nodes: &'a dyn NodeCoefficients<S>,
    pub value_boundary: &'a BoundaryCondition<S>,
    pub source: &'a dyn Coefficients<S>,
    pub source_actions: &'a ActionSet<S>,
    pub mollified_boundary: &'a BoundaryCondition<S>,
}

impl<'a, S: Real> SweepProblem<'a, S> {
    /// Mollify the same coefficients that define the value.
    pub fn same(nodes: &'a OracleNodes<'a, S>, boundary: &'a BoundaryCondition<S>) -> Self {
        Self {
            value_nodes: nodes,
            value_boundary: boundary,
            source: nodes.oracle,
            source_actions: nodes.actions,
            mollified_boundary: boundary,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub p: f64,
    pub probe_time: f64,
    pub probe: [f64; 2],
    pub regime: SweepRegime,
    /// Gap the probe must keep in the strict-gap regime.
    pub min_gap: f64,
    /// Exact `(V, lim V_eps)` at the probe, where known.
    pub exact_at_probe: Option<(f64, f64)>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            p: 2.0,
            probe_time: 0.0,
            probe: [0.0, 0.0],
            regime: SweepRegime::Converges,
            min_gap: 0.3,
            exact_at_probe: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RungSummary {
    pub epsilon: f64,
    pub sup_gap: f64,
    pub lp_gap: f64,
    /// Extremes of `V_eps - V` over non-boundary nodes.
    pub min_gap: f64,
    pub max_gap: f64,
    /// Nodes with gap above / below the scheme tolerance.
    pub positive_nodes: usize,
    pub negative_nodes: usize,
    pub value_at_probe: f64,
    pub gap_at_probe: f64,
    pub value_sup: f64,
    pub unsettled_levels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LiminfStatus {
    Pass,
    /// Only the second-smallest rung dips below tolerance and the ladder is not
    /// monotone in `min (V_eps - V)`.
    ConsistentOscillation,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LiminfCheck {
    pub epsilons: [f64; 2],
    pub min_gaps: [f64; 2],
    pub tolerance: f64,
    pub status: LiminfStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceCheck {
    pub sup_gaps: Vec<f64>,
    pub decreasing: bool,
    pub sup_at_min: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrictGapCheck {
    pub gap_at_probe: f64,
    pub required: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub regime: SweepRegime,
    pub p: f64,
    pub tolerance: f64,
    pub refused: Vec<f64>,
    pub value_at_probe: f64,
    pub exact_at_probe: Option<(f64, f64)>,
    pub rungs: Vec<RungSummary>,
    pub liminf: LiminfCheck,
    pub convergence: Option<ConvergenceCheck>,
    pub strict_gap: Option<StrictGapCheck>,
    pub value_bound: f64,
    pub bounded: bool,
    pub passed: bool,
}

pub struct SweepRung<S> {
    pub epsilon: S,
    pub value: Field<S>,
    pub gap: Field<S>,
}

pub struct SweepReport<S> {
    pub value: Field<S>,
    pub rungs: Vec<SweepRung<S>>,
    pub summary: SweepSummary,
}

impl<S: Real> SweepReport<S> {
    /// `epsilon,sup_gap,lp_gap,min_gap,max_gap,gap_at_probe`, one row per rung.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("epsilon,sup_gap,lp_gap,min_gap,max_gap,gap_at_probe\n");
        for r in &self.summary.rungs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epsilon, r.sup_gap, r.lp_gap, r.min_gap, r.max_gap, r.gap_at_probe
            );
        }
        s
    }

    /// Gap field of rung `i` as `t,x[,y],gap`.
    pub fn gap_csv(&self, i: usize) -> String {
        let gap = &self.rungs[i].gap;
        grid_values_csv(gap.grid(), "gap", gap.grid().time_levels(), |n, j| gap.at(n, j))
    }
}

/// Sup of `|Phi|` over grid nodes times `T`, plus the largest boundary datum on a box.
fn value_bound<S: Real>(oracle: &dyn Coefficients<S>, grid: &Grid<S>, boundary: &BoundaryCondition<S>) -> f64 {
    let mut phi = 0.0f64;
    let mut edge = 0.0f64;
    for n in 0..grid.time_levels() {
        let t = grid.time(n);
        for j in 0..grid.space_len() {
            let x = grid.point(j);
            phi = phi.max(oracle.bound(t, &x).as_f64().abs());
            if grid.is_boundary(j) {
                if let Some(g) = boundary.value(t, &x) {
                    edge = edge.max(g.as_f64().abs());
                }
            }
        }
    }
    phi * grid.t_final().as_f64() + edge
}

/// Solves the mollified problem at each resolved rung and compares with the
/// unmollified value.
pub fn mollify_value_sweep<S: Real>(
    problem: &SweepProblem<'_, S>,
    eps_list: &[S],
    scheme: &ParabolicScheme,
    options: &SweepOptions,
) -> Result<SweepReport<S>> {
    let grid = problem.value_nodes.grid();
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("epsilon ladder must be strictly decreasing".into()));
    }
    let probe_level = level_of(grid, S::lit(options.probe_time))?;
    let probe = [S::lit(options.probe[0]), S::lit(options.probe[1])];
    let tol = scheme_tolerance(grid);

    let mut refused = Vec::new();
    let mut kernels = Vec::new();
    for &eps in eps_list {
        let k = MollifierKernel::new(eps, grid.dim())?;
        if k.resolved_by(grid) {
            kernels.push(k);
        } else {
            log::warn!("refusing rung eps = {eps}: not resolved by the grid");
            refused.push(eps.as_f64());
        }
    }
    if kernels.len() < 2 {
        return Err(Error::InvalidArgument(
            "a sweep needs at least two resolved epsilon rungs".into(),
        ));
    }

    let base = solve_hjb_direct(problem.value_nodes, problem.value_boundary, scheme)?;
    let value = base.value;
    let solved: Vec<Result<(Field<S>, usize)>> = kernels
        .par_iter()
        .map(|k| {
            let table = mollified_table(problem.source, problem.source_actions, grid, k)?;
            let sol = solve_hjb_direct(&table, problem.mollified_boundary, scheme)?;
            Ok((sol.value, sol.unconverged_levels.len()))
        })
        .collect();

    let interior = |_: usize, j: usize| !grid.is_boundary(j);
    let mut rungs = Vec::with_capacity(kernels.len());
    let mut summaries = Vec::with_capacity(kernels.len());
    for (k, res) in kernels.iter().zip(solved) {
        let (v_eps, unsettled) = res?;
        let gap = v_eps.zip_with(&value, |a, b| a - b)?;
        let mut min_gap = f64::INFINITY;
        let mut max_gap = f64::NEG_INFINITY;
        let (mut pos, mut neg) = (0, 0);
        for n in 0..grid.time_levels() {
            for j in 0..grid.space_len() {
                if grid.is_boundary(j) {
                    continue;
                }
                let g = gap.at(n, j).as_f64();
                min_gap = min_gap.min(g);
                max_gap = max_gap.max(g);
                if g > tol {
                    pos += 1;
                } else if g < -tol {
                    neg += 1;
                }
            }
        }
        let summary = RungSummary {
            epsilon: k.epsilon().as_f64(),
            sup_gap: gap.sup_norm().as_f64(),
            lp_gap: lp_norm_where(&gap, options.p, interior)?.as_f64(),
            min_gap,
            max_gap,
            positive_nodes: pos,
            negative_nodes: neg,
            value_at_probe: v_eps.interpolate_level(probe_level, &probe).as_f64(),
            gap_at_probe: gap.interpolate_level(probe_level, &probe).as_f64(),
            value_sup: v_eps.sup_norm().as_f64(),
            unsettled_levels: unsettled,
        };
        if !summary.sup_gap.is_finite() || !summary.lp_gap.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite sweep summary at eps = {}",
                summary.epsilon
            )));
        }
        summaries.push(summary);
        rungs.push(SweepRung {
            epsilon: k.epsilon(),
            value: v_eps,
            gap,
        });
    }

    let m = summaries.len();
    let (second, last) = (&summaries[m - 2], &summaries[m - 1]);
    let oscillating = summaries.windows(2).any(|w| w[1].min_gap < w[0].min_gap);
    let status = match (last.min_gap >= -tol, second.min_gap >= -tol) {
        (true, true) => LiminfStatus::Pass,
        (true, false) if oscillating => LiminfStatus::ConsistentOscillation,
        _ => LiminfStatus::Fail,
    };
    let liminf = LiminfCheck {
        epsilons: [second.epsilon, last.epsilon],
        min_gaps: [second.min_gap, last.min_gap],
        tolerance: tol,
        status,
    };

    let (convergence, strict_gap) = match options.regime {
        SweepRegime::Converges => {
            let sup_gaps: Vec<f64> = summaries.iter().map(|r| r.sup_gap).collect();
            let decreasing = sup_gaps.windows(2).all(|w| w[1] <= w[0] + 1e-10);
            let threshold = 5.0 * grid.dx_max().as_f64();
            let passed = decreasing && last.sup_gap <= threshold;
            (
                Some(ConvergenceCheck {
                    sup_at_min: last.sup_gap,
                    sup_gaps,
                    decreasing,
                    threshold,
                    passed,
                }),
                None,
            )
        }
        SweepRegime::StrictGap => (
            None,
            Some(StrictGapCheck {
                gap_at_probe: last.gap_at_probe,
                required: options.min_gap,
                passed: last.gap_at_probe >= options.min_gap,
            }),
        ),
    };

    let bound = value_bound(problem.source, grid, problem.mollified_boundary);
    let bounded = rungs
        .iter()
        .all(|r| r.value.is_finite() && r.value.sup_norm().as_f64() <= bound);
    let passed = status != LiminfStatus::Fail
        && convergence.as_ref().is_none_or(|c| c.passed)
        && strict_gap.as_ref().is_none_or(|c| c.passed)
        && bounded;
    let summary = SweepSummary {
        regime: options.regime,
        p: options.p,
        tolerance: tol,
        refused,
        value_at_probe: value.interpolate_level(probe_level, &probe).as_f64(),
        exact_at_probe: options.exact_at_probe,
        rungs: summaries,
        liminf,
        convergence,
        strict_gap,
        value_bound: bound,
        bounded,
        passed,
    };
    Ok(SweepReport {
        value,
        rungs,
        summary,
    })
}

// ---------------------------------------------------------------------------
// Strict-gap counterexample.

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CounterexampleSample {
    pub s: f64,
    pub x: f64,
    pub exact_v: f64,
    pub numerical_v: f64,
    pub exact_limit: f64,
    pub numerical_limit: f64,
    pub gap_exact: f64,
    pub gap_numerical: f64,
    /// Change of the numerical values when the box is widened by 2 on each side.
    pub contamination: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CounterexampleMc {
    pub control: String,
    pub mean: f64,
    pub se: f64,
    pub exact: f64,
    pub within_3se: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CounterexampleReport {
    pub t_final: f64,
    pub extent: [f64; 2],
    pub nx: usize,
    pub nt: usize,
    /// The sample at `(0, 0)`.
    pub origin: CounterexampleSample,
    pub samples: Vec<CounterexampleSample>,
    pub mc: Vec<CounterexampleMc>,
    pub contamination: f64,
    pub contamination_tolerance: f64,
    pub advice: Option<String>,
    pub gap_at_origin: f64,
    pub required_gap: f64,
    pub passed: bool,
}

impl CounterexampleReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "s,x,exact_v,numerical_v,exact_limit,numerical_limit,gap_exact,gap_numerical,contamination\n",
        );
        for r in &self.samples {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.s,
                r.x,
                r.exact_v,
                r.numerical_v,
                r.exact_limit,
                r.numerical_limit,
                r.gap_exact,
                r.gap_numerical,
                r.contamination
            );
        }
        s
    }
}

/// Numerical `(V, lim V_eps)` of the counterexample on a 1-d box.
pub fn counterexample_values<S: Real>(grid: &Grid<S>, scheme: &ParabolicScheme) -> Result<(Field<S>, Field<S>)> {
    if grid.kind() != DomainKind::Box || grid.dim() != 1 {
        return Err(Error::InvalidGrid("the counterexample report needs a 1-d box".into()));
    }
    let t_final = grid.t_final().as_f64();
    let solve = |branch: CounterexampleBranch, exact: fn(f64, f64, f64) -> f64| -> Result<Field<S>> {
        let oracle = EffectiveCounterexample::new(branch, 1);
        let actions = oracle.actions::<S>();
        let nodes = OracleNodes::new(&oracle, &actions, grid)?;
        let boundary = BoundaryCondition::dirichlet(move |t: S, x: &Point<S>| {
            S::lit(exact(t_final, t.as_f64(), x[0].as_f64()))
        });
        Ok(solve_hjb_direct(&nodes, &boundary, scheme)?.value)
    };
    Ok((
        solve(CounterexampleBranch::Original, counterexample_value)?,
        solve(CounterexampleBranch::MollifiedLimit, counterexample_limit_value)?,
    ))
}

/// Exact and numerical values at each `(s, x)` sample, a box-widening
/// contamination estimate, and an optional simulation cross-check from `sim.start`.
pub fn counterexample_report<S: Real>(
    grid: &Grid<S>,
    samples: &[(S, S)],
    scheme: &ParabolicScheme,
    sim: Option<&SimConfig<S>>,
) -> Result<CounterexampleReport> {
    const REQUIRED_GAP: f64 = 0.3;
    let (v, lim) = counterexample_values(grid, scheme)?;
    let dx = grid.dx(0);
    let pad = (S::lit(2.0) / dx).round().to_usize().unwrap_or(1).max(1);
    let widened = Grid::new(
        DomainKind::Box,
        1,
        &[(
            grid.lo(0) - S::from_usize_lossy(pad) * dx,
            grid.hi(0) + S::from_usize_lossy(pad) * dx,
        )],
        &[grid.nx(0) + 2 * pad],
        grid.t_final(),
        grid.nt(),
    )?;
    let (v_wide, lim_wide) = counterexample_values(&widened, scheme)?;
    let t_final = grid.t_final().as_f64();

    let sample = |s: S, x: S| -> Result<CounterexampleSample> {
        let n = level_of(grid, s)?;
        let p = [x, S::zero()];
        let (nv, nl) = (
            v.interpolate_level(n, &p).as_f64(),
            lim.interpolate_level(n, &p).as_f64(),
        );
        let contamination = (v_wide.interpolate_level(n, &p).as_f64() - nv)
            .abs()
            .max((lim_wide.interpolate_level(n, &p).as_f64() - nl).abs());
        let (sf, xf) = (grid.time(n).as_f64(), x.as_f64());
        let ev = counterexample_value(t_final, sf, xf);
        let el = counterexample_limit_value(t_final, sf, xf);
        Ok(CounterexampleSample {
            s: sf,
            x: xf,
            exact_v: ev,
            numerical_v: nv,
            exact_limit: el,
            numerical_limit: nl,
            gap_exact: el - ev,
            gap_numerical: nl - nv,
            contamination,
        })
    };
    let rows: Vec<CounterexampleSample> = samples.iter().map(|&(s, x)| sample(s, x)).collect::<Result<_>>()?;
    let origin = sample(S::zero(), S::zero())?;
    let gap_at_origin = origin.gap_numerical;
    let contamination = rows.iter().map(|r| r.contamination).fold(0.0, f64::max);
    let contamination_tolerance = scheme_tolerance(grid);
    let advice = (contamination > contamination_tolerance).then(|| {
        format!(
            "boundary contamination {contamination:.3e} exceeds {contamination_tolerance:.3e}; enlarge the box beyond [{}, {}]",
            grid.lo(0),
            grid.hi(0)
        )
    });

    let mut mc = Vec::new();
    if let Some(sim) = sim {
        let real = Counterexample::new(1);
        let (s0, x0) = (sim.start_time.as_f64(), sim.start[0].as_f64());
        let on_diagonal = FnFeedback::new("a=x", |_: S, x: &Point<S>| *x);
        let drift_one = FnFeedback::new("a=x+1", |_: S, x: &Point<S>| [x[0] + S::one(), x[1]]);
        let runs: [(&dyn Feedback<S>, f64); 2] = [
            (&on_diagonal, counterexample_value(t_final, s0, x0)),
            (&drift_one, counterexample_limit_value(t_final, s0, x0)),
        ];
        for (fb, exact) in runs {
            let est = simulate_cost(&real, fb, sim)?;
            mc.push(CounterexampleMc {
                control: est.control.clone(),
                mean: est.mean,
                se: est.se,
                exact,
                within_3se: (est.mean - exact).abs() <= 3.0 * est.se,
            });
        }
    }
    let passed = gap_at_origin >= REQUIRED_GAP && mc.iter().all(|m| m.within_3se);
    Ok(CounterexampleReport {
        t_final,
        extent: [grid.lo(0).as_f64(), grid.hi(0).as_f64()],
        nx: grid.nx(0),
        nt: grid.nt(),
        origin,
        samples: rows,
        mc,
        contamination,
        contamination_tolerance,
        advice,
        gap_at_origin,
        required_gap: REQUIRED_GAP,
        passed,
    })
}

// ---------------------------------------------------------------------------
// Countable action sets.

pub struct TruncationSetup<'a, S> {
    pub oracle: &'a dyn Coefficients<S>,
    pub family: &'a CountableFamily,
    pub n_list: &'a [usize],
    pub grid: &'a Grid<S>,
    pub boundary: &'a BoundaryCondition<S>,
    pub scheme: &'a ParabolicScheme,
    pub eps_list: &'a [S],
    pub probe_time: S,
    pub probe: Point<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncationLevel {
    pub n: usize,
    pub actions: Vec<f64>,
    pub value_at_probe: f64,
    /// `max (V^N - V^{N_prev})` over nodes; must not be positive.
    pub max_increase: Option<f64>,
    /// `max (V^{N_prev} - V^N)` over nodes.
    pub max_decrease: Option<f64>,
    /// `sup |V_eps^N - V^N|` along the ladder.
    pub eps_gaps: Vec<f64>,
    pub eps_decreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpenLoopRow {
    pub epsilon: f64,
    /// Paired `J_eps(theta) - J(theta)`.
    pub difference: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncationReport {
    pub epsilons: Vec<f64>,
    pub levels: Vec<TruncationLevel>,
    pub nonincreasing: bool,
    pub open_loop_control: Option<f64>,
    pub open_loop: Vec<OpenLoopRow>,
    pub open_loop_decreasing: bool,
    pub passed: bool,
}

impl TruncationReport {
    /// The double-limit table `n,epsilon,sup_gap` (`epsilon = 0` rows carry `V^N` at the probe).
    pub fn table_csv(&self) -> String {
        let mut s = String::from("n,epsilon,value\n");
        for l in &self.levels {
            let _ = writeln!(s, "{},0,{}", l.n, l.value_at_probe);
            for (e, g) in self.epsilons.iter().zip(&l.eps_gaps) {
                let _ = writeln!(s, "{},{},{}", l.n, e, g);
            }
        }
        s
    }
}

const MONOTONE_SLACK: f64 = 1e-10;

/// `V^N` for each truncation, `V_eps^N` along the ladder, and the open-loop
/// comparison of `J_eps(theta)` with `J(theta)` for `theta = a_1`.
pub fn countable_truncation_study<S: Real>(
    setup: &TruncationSetup<'_, S>,
    sim: Option<&SimConfig<S>>,
) -> Result<TruncationReport> {
    let grid = setup.grid;
    if setup.n_list.is_empty() || setup.n_list.windows(2).any(|w| w[1] <= w[0]) || setup.n_list[0] == 0 {
        return Err(Error::InvalidArgument("N list must be positive and increasing".into()));
    }
    if setup.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("epsilon ladder must be strictly decreasing".into()));
    }
    let probe_level = level_of(grid, setup.probe_time)?;
    let kernels: Vec<MollifierKernel<S>> = setup
        .eps_list
        .iter()
        .map(|&e| MollifierKernel::new(e, grid.dim()))
        .collect::<Result<_>>()?;

    let per_n: Vec<Result<(ActionSet<S>, Field<S>, Vec<f64>)>> = setup
        .n_list
        .par_iter()
        .map(|&n| {
            let actions = setup.family.action_set::<S>(n)?;
            let nodes = OracleNodes::new(setup.oracle, &actions, grid)?;
            let v = solve_hjb_direct(&nodes, setup.boundary, setup.scheme)?.value;
            let mut gaps = Vec::with_capacity(kernels.len());
            for k in &kernels {
                let table = mollified_table(setup.oracle, &actions, grid, k)?;
                let ve = solve_hjb_direct(&table, setup.boundary, setup.scheme)?.value;
                gaps.push(ve.sup_distance(&v)?.as_f64());
            }
            Ok((actions, v, gaps))
        })
        .collect();

    let mut levels = Vec::with_capacity(per_n.len());
    let mut prev: Option<Field<S>> = None;
    for (&n, res) in setup.n_list.iter().zip(per_n) {
        let (actions, v, eps_gaps) = res?;
        let (inc, dec) = match &prev {
            Some(p) => {
                let mut inc = f64::NEG_INFINITY;
                let mut dec = f64::NEG_INFINITY;
                for (a, b) in v.values().iter().zip(p.values()) {
                    let d = (*a - *b).as_f64();
                    inc = inc.max(d);
                    dec = dec.max(-d);
                }
                (Some(inc), Some(dec))
            }
            None => (None, None),
        };
        let eps_decreasing = eps_gaps.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK);
        levels.push(TruncationLevel {
            n,
            actions: actions.iter().map(|a| a[0].as_f64()).collect(),
            value_at_probe: v.interpolate_level(probe_level, &setup.probe).as_f64(),
            max_increase: inc,
            max_decrease: dec,
            eps_gaps,
            eps_decreasing,
        });
        prev = Some(v);
    }
    let nonincreasing = levels
        .iter()
        .all(|l| l.max_increase.is_none_or(|d| d <= MONOTONE_SLACK));

    let mut open_loop = Vec::new();
    let mut open_loop_control = None;
    if let Some(sim) = sim {
        let first = setup.family.action_set::<S>(1)?;
        let theta = *first.get(0);
        open_loop_control = Some(theta[0].as_f64());
        let raw = GridTable::sample(setup.oracle, &first, grid)?;
        let raw_oracle = TableOracle::new("raw", &raw, &first)?;
        let fb = crate::montecarlo::ConstantAction(theta);
        for k in &kernels {
            let table = mollified_table(setup.oracle, &first, grid, k)?;
            let moll = TableOracle::new(format!("eps={}", k.epsilon()), &table, &first)?;
            let d = simulate_difference((&moll, &fb), (&raw_oracle, &fb), sim)?;
            open_loop.push(OpenLoopRow {
                epsilon: k.epsilon().as_f64(),
                difference: d.mean,
                se: d.se,
            });
        }
    }
    // Decreasing up to Monte Carlo resolution of consecutive paired estimates.
    let open_loop_decreasing = open_loop.windows(2).all(|w| {
        w[1].difference.abs() <= w[0].difference.abs() + 3.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt()
    });
    let passed = nonincreasing && levels.iter().all(|l| l.eps_decreasing) && open_loop_decreasing;
    Ok(TruncationReport {
        epsilons: setup.eps_list.iter().map(|e| e.as_f64()).collect(),
        levels,
        nonincreasing,
        open_loop_control,
        open_loop,
        open_loop_decreasing,
        passed,
    })
}

// ---------------------------------------------------------------------------
// Discrete comparison principle.

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonFuzz {
    pub pairs: usize,
    pub seed: u64,
    /// Largest `u1 - u2` over all pairs and nodes.
    pub max_violation: f64,
    /// Pairs where `u1 - u2` exceeded the slack somewhere.
    pub violations: usize,
    pub slack: f64,
    pub passed: bool,
}

/// Solves random pairs `f1 <= f2` with a shared random drift and boundary and
/// checks `u1 <= u2`. Cases rotate over a 1-d torus, a 1-d box with Dirichlet
/// data and a split 2-d torus, all implicit Euler with upwind advection.
pub fn comparison_fuzz(pairs: usize, seed: u64, slack: f64) -> Result<ComparisonFuzz> {
    use rand::{Rng, SeedableRng};
    let scheme = ParabolicScheme::default();
    let outcomes: Vec<Result<f64>> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (grid, boundary) = match i % 3 {
                0 => (
                    Grid::new(DomainKind::Torus, 1, &[(0.0, 1.0)], &[16], 1.0, 8)?,
                    BoundaryCondition::Periodic,
                ),
                1 => {
                    let (c0, c1): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    (
                        Grid::new(DomainKind::Box, 1, &[(-1.0, 1.0)], &[17], 1.0, 8)?,
                        BoundaryCondition::dirichlet(move |t: f64, x: &Point<f64>| (1.0 - t) * (c0 + c1 * x[0])),
                    )
                }
                _ => (
                    Grid::new(DomainKind::Torus, 2, &[(0.0, 1.0), (0.0, 1.0)], &[8, 8], 1.0, 4)?,
                    BoundaryCondition::Periodic,
                ),
            };
            let n = grid.len();
            let amp = rng.random_range(0.0..20.0);
            let mut drift = Vec::with_capacity(grid.dim());
            for _ in 0..grid.dim() {
                let v: Vec<f64> = (0..n).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
                drift.push(Field::from_values(&grid, v)?);
            }
            let drift = crate::grid::VectorField::new(drift)?;
            let f1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Equal on a random subset, so ties are exercised too.
            let f2: Vec<f64> = f1
                .iter()
                .map(|v| if rng.random_bool(0.5) { *v } else { v + rng.random_range(0.0..1.0) })
                .collect();
            let u1 = crate::linear_parabolic::solve_frozen(&drift, &Field::from_values(&grid, f1)?, &boundary, &scheme)?;
            let u2 = crate::linear_parabolic::solve_frozen(&drift, &Field::from_values(&grid, f2)?, &boundary, &scheme)?;
            Ok(u1
                .values()
                .iter()
                .zip(u2.values())
                .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b)))
        })
        .collect();
    let worst: Vec<f64> = outcomes.into_iter().collect::<Result<_>>()?;
    let max_violation = worst.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let violations = worst.iter().filter(|&&w| w > slack).count();
    Ok(ComparisonFuzz {
        pairs,
        seed,
        max_violation,
        violations,
        slack,
        passed: violations == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{AdditiveDrift, BangBang, CostModel, SmoothBaseline};
    use crate::hamiltonian::Policy;
    use crate::hjb_solver::{policy_iteration, PolicyIterationConfig};
    use crate::linear_parabolic::Advection;
    use crate::montecarlo::{ConstantAction, PolicyFeedback, SimDomain};

    fn torus(nx: usize, nt: usize) -> Grid<f64> {
        Grid::new(DomainKind::Torus, 1, &[(-1.0, 1.0)], &[nx], 1.0, nt).unwrap()
    }

    #[test]
    fn comparison_fuzz_has_no_violations() {
        let r = comparison_fuzz(30, 3, 1e-12).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r, comparison_fuzz(30, 3, 1e-12).unwrap());
    }

    #[test]
    fn closed_forms_at_listed_points() {
        assert_eq!(counterexample_value(1.0, 0.0, 0.0), 1.0);
        assert!((counterexample_limit_value(1.0, 0.0, 0.0) - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(counterexample_value(1.0, 0.0, 1.0), 2.0);
        assert!((counterexample_limit_value(1.0, 0.0, 1.0) - 10.0 / 3.0).abs() < 1e-14);
        for x in [-2.0, 0.3, 5.0] {
            assert_eq!(counterexample_value(1.0, 1.0, x), 0.0);
            assert_eq!(counterexample_limit_value(1.0, 1.0, x), 0.0);
        }
    }

    #[test]
    fn effective_oracle_admits_only_its_branch() {
        let o = EffectiveCounterexample::new(CounterexampleBranch::Original, 1);
        assert!(Coefficients::<f64>::admits(&o, &[0.0, 0.0]));
        assert!(!Coefficients::<f64>::admits(&o, &[1.0, 0.0]));
        let inf = EffectiveCounterexample::new(CounterexampleBranch::PointwiseInf, 1);
        assert_eq!(inf.actions::<f64>().len(), 2);
        let c: Coeff<f64> = inf.eval(0.0, &[2.0, 0.0], &[1.0, 0.0]);
        assert_eq!(c.drift[0], 1.0);
        assert_eq!(c.cost, 4.0);
    }

    #[test]
    fn realized_feedback_switches_drift_on_the_real_oracle() {
        let zero = ConstantAction([0.0, 0.0]);
        let one = ConstantAction([1.0, 0.0]);
        let real = Counterexample::new(1);
        let x = [0.7, 0.0];
        let a0 = RealizedFeedback { inner: &zero }.action(0.0, &x);
        let a1 = RealizedFeedback { inner: &one }.action(0.0, &x);
        assert_eq!(Coefficients::<f64>::eval(&real, 0.0, &x, &a0).drift[0], 0.0);
        assert_eq!(Coefficients::<f64>::eval(&real, 0.0, &x, &a1).drift[0], 1.0);
    }

    #[test]
    fn counterexample_report_matches_closed_forms() {
        let grid = Grid::new(DomainKind::Box, 1, &[(-6.0, 6.0)], &[241], 1.0, 512).unwrap();
        let scheme = ParabolicScheme::with_advection(Advection::Central);
        let samples = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.5)];
        let r = counterexample_report(&grid, &samples, &scheme, None).unwrap();
        let o = &r.samples[0];
        assert!((o.numerical_v - 1.0).abs() < 0.02, "{o:?}");
        assert!((o.numerical_limit - 4.0 / 3.0).abs() < 0.02 * 4.0 / 3.0, "{o:?}");
        assert!(r.gap_at_origin >= 0.3);
        assert!((r.samples[1].gap_exact - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.samples[2].numerical_v, 0.0);
        assert_eq!(r.samples[2].numerical_limit, 0.0);
        assert!(r.advice.is_none(), "{:?}", r.advice);
        assert!(r.passed);
        assert!(r.to_csv().starts_with("s,x,exact_v"));
    }

    #[test]
    fn counterexample_report_rejects_torus() {
        let scheme = ParabolicScheme::default();
        assert!(counterexample_report(&torus(8, 4), &[(0.0, 0.0)], &scheme, None).is_err());
    }

    #[test]
    fn candidate_policies_are_five_and_valid() {
        let grid = torus(16, 8);
        let c = candidate_policies(&grid, 2).unwrap();
        assert_eq!(c.len(), 5);
        assert!(c[0].1.indices().iter().all(|&i| i == 0));
        assert!(c[1].1.indices().iter().all(|&i| i == 1));
        assert_eq!(c[2].1.at(1, 0), 1);
        assert_eq!(c[3].1.at(0, 1), 1);
    }

    fn bang_bang_setup() -> (Grid<f64>, BangBang<f64>, ActionSet<f64>) {
        let grid = torus(64, 128);
        let oracle = BangBang::new(1, CostModel::Quadratic);
        let actions = ActionSet::scalars(&[-1.0, 1.0]).unwrap();
        (grid, oracle, actions)
    }

    fn sim(grid: &Grid<f64>, x0: f64, paths: usize) -> SimConfig<f64> {
        SimConfig {
            paths,
            dt_sim: 1.0 / 256.0,
            seed: 7,
            start_time: 0.0,
            start: [x0, 0.0],
            t_final: 1.0,
            domain: SimDomain::from_grid(grid),
        }
    }

    #[test]
    fn verification_on_bang_bang() {
        let (grid, oracle, actions) = bang_bang_setup();
        let nodes = OracleNodes::new(&oracle, &actions, &grid).unwrap();
        let scheme = ParabolicScheme::default();
        let sol = solve_hjb_direct(&nodes, &BoundaryCondition::Periodic, &scheme).unwrap();
        let argmin = PolicyFeedback {
            label: "argmin".into(),
            policy: &sol.policy,
            actions: &actions,
        };
        let plus = ConstantAction([1.0, 0.0]);
        let minus = ConstantAction([-1.0, 0.0]);
        let s = sim(&grid, 0.5, 20_000);
        let r = verification_check(&sol.value, &oracle, &argmin, &[&plus, &minus], &s).unwrap();
        assert!(r.passed, "{:?}", r.failures());
        // Constant +1 from x0 > 0 pushes the state away from the cheap region.
        let e = &r.entries[1];
        let excess = e.excess.unwrap();
        assert!(excess > 3.0 * e.excess_se.unwrap(), "{e:?}");
    }

    #[test]
    fn verification_single_action_is_two_sided() {
        let grid = torus(64, 128);
        let oracle = AdditiveDrift::constant(1, 0.0, 1.0, CostModel::Quadratic);
        let actions = ActionSet::scalars(&[0.5]).unwrap();
        let nodes = OracleNodes::new(&oracle, &actions, &grid).unwrap();
        let sol = solve_hjb_direct(&nodes, &BoundaryCondition::Periodic, &ParabolicScheme::default()).unwrap();
        let fb = ConstantAction([0.5, 0.0]);
        let r = verification_check(&sol.value, &oracle, &fb, &[&fb], &sim(&grid, 0.2, 20_000)).unwrap();
        assert!(r.passed, "{:?}", r.failures());
        assert!(r.entries[1].excess.unwrap().abs() < 1e-12);
    }

    #[test]
    fn dpp_on_bang_bang_separates_argmin_from_bad_policy() {
        let (grid, oracle, actions) = bang_bang_setup();
        let nodes = OracleNodes::new(&oracle, &actions, &grid).unwrap();
        let sol = policy_iteration(
            &nodes,
            &BoundaryCondition::Periodic,
            &ParabolicScheme::default(),
            None,
            &PolicyIterationConfig::default(),
        )
        .unwrap();
        let argmin = PolicyFeedback {
            label: "argmin".into(),
            policy: &sol.policy,
            actions: &actions,
        };
        let worst = Policy::new(
            &grid,
            2,
            sol.policy.indices().iter().map(|&i| 1 - i).collect(),
        )
        .unwrap();
        let bad = PolicyFeedback {
            label: "reversed".into(),
            policy: &worst,
            actions: &actions,
        };
        let r = dpp_battery(
            &sol.value,
            &oracle,
            &argmin,
            &[&bad],
            &[0.25, 0.5, 0.75],
            &sim(&grid, 0.5, 20_000),
        )
        .unwrap();
        assert!(r.passed, "{:?}", r.entries);
        assert_eq!(r.entries.len(), 6);
    }

    #[test]
    fn sweep_on_step_drift_closes_the_gap() {
        let grid = torus(64, 128);
        let oracle = AdditiveDrift::step(1, 1.0, 1.0, CostModel::Quadratic);
        let actions = ActionSet::scalars(&[-1.0, 1.0]).unwrap();
        let nodes = OracleNodes::new(&oracle, &actions, &grid).unwrap();
        let bc = BoundaryCondition::Periodic;
        let problem = SweepProblem::same(&nodes, &bc);
        let eps = [0.4, 0.2, 0.1, 0.05];
        let r = mollify_value_sweep(&problem, &eps, &ParabolicScheme::default(), &SweepOptions::default()).unwrap();
        let s = &r.summary;
        assert!(s.passed, "{s:#?}");
        assert_eq!(s.liminf.status, LiminfStatus::Pass);
        let c = s.convergence.as_ref().unwrap();
        assert!(c.decreasing && c.sup_at_min <= c.threshold);
        assert!(r.summary_csv().lines().count() == 5);
        assert!(r.gap_csv(0).starts_with("t,x,gap"));
    }

    #[test]
    fn sweep_refuses_unresolved_rungs_and_bad_ladders() {
        let grid = torus(32, 32);
        let oracle = AdditiveDrift::step(1, 1.0, 1.0, CostModel::Quadratic);
        let actions = ActionSet::scalars(&[-1.0, 1.0]).unwrap();
        let nodes = OracleNodes::new(&oracle, &actions, &grid).unwrap();
        let bc = BoundaryCondition::Periodic;
        let problem = SweepProblem::same(&nodes, &bc);
        let scheme = ParabolicScheme::default();
        let r = mollify_value_sweep(&problem, &[0.5, 0.25, 0.01], &scheme, &SweepOptions::default()).unwrap();
        assert_eq!(r.summary.refused, vec![0.01]);
        assert_eq!(r.rungs.len(), 2);
        assert!(mollify_value_sweep(&problem, &[0.25, 0.5], &scheme, &SweepOptions::default()).is_err());
        assert!(mollify_value_sweep(&problem, &[0.5, 0.01], &scheme, &SweepOptions::default()).is_err());
    }

    #[test]
    fn smooth_baseline_sweep_converges() {
        let grid = torus(64, 128);
        let oracle = SmoothBaseline::new(1, 2.0, 1.0, 0.5, 0.5, 1.0);
        let actions = ActionSet::scalars(&[-1.0, 0.0, 1.0]).unwrap();
        let nodes = OracleNodes::new(&oracle, &actions, &grid).unwrap();
        let bc = BoundaryCondition::Periodic;
        let problem = SweepProblem::same(&nodes, &bc);
        let eps = [0.2, 0.1, 0.06, 0.04];
        let r = mollify_value_sweep(&problem, &eps, &ParabolicScheme::default(), &SweepOptions::default()).unwrap();
        assert!(r.summary.passed, "{:#?}", r.summary);
        assert_eq!(r.summary.liminf.status, LiminfStatus::Pass);
        // Zero extension in time leaves a first-order layer: halving eps halves the gap.
        let g = &r.summary.rungs;
        let ratio = g[0].sup_gap / g[1].sup_gap;
        assert!((1.5..2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn counterexample_sweep_keeps_the_gap() {
        let grid = Grid::new(DomainKind::Box, 1, &[(-1.0, 1.0)], &[81], 1.0, 256).unwrap();
        let inf = EffectiveCounterexample::new(CounterexampleBranch::PointwiseInf, 1);
        let inf_actions = inf.actions::<f64>();
        let limit = EffectiveCounterexample::new(CounterexampleBranch::MollifiedLimit, 1);
        let limit_actions = limit.actions::<f64>();
        let nodes = OracleNodes::new(&inf, &inf_actions, &grid).unwrap();
        let vb = BoundaryCondition::dirichlet(|t: f64, x: &Point<f64>| {
            counterexample_value(1.0, t, x[0]).min(counterexample_limit_value(1.0, t, x[0]))
        });
        let mb = BoundaryCondition::dirichlet(|t: f64, x: &Point<f64>| counterexample_limit_value(1.0, t, x[0]));
        let problem = SweepProblem {
            value_nodes: &nodes,
            value_boundary: &vb,
            source: &limit,
            source_actions: &limit_actions,
            mollified_boundary: &mb,
        };
        let opts = SweepOptions {
            regime: SweepRegime::StrictGap,
            ..SweepOptions::default()
        };
        let scheme = ParabolicScheme::with_advection(Advection::Central);
        let r = mollify_value_sweep(&problem, &[0.2, 0.1, 0.05], &scheme, &opts).unwrap();
        assert!(r.summary.passed, "{:#?}", r.summary);
        assert!(r.summary.strict_gap.as_ref().unwrap().gap_at_probe >= 0.3);
    }

    #[test]
    fn truncation_study_on_bang_bang() {
        let grid = torus(32, 64);
        let oracle = BangBang::new(1, CostModel::Quadratic);
        let family = CountableFamily::Listed { values: vec![1.0, -1.0] };
        let setup = TruncationSetup {
            oracle: &oracle,
            family: &family,
            n_list: &[1, 2],
            grid: &grid,
            boundary: &BoundaryCondition::Periodic,
            scheme: &ParabolicScheme::default(),
            eps_list: &[0.4, 0.2, 0.1],
            probe_time: 0.0,
            probe: [0.5, 0.0],
        };
        let s = sim(&grid, 0.5, 4000);
        let r = countable_truncation_study(&setup, Some(&s)).unwrap();
        assert!(r.passed, "{r:#?}");
        let l2 = &r.levels[1];
        assert!(l2.max_increase.unwrap() <= 1e-10);
        assert!(l2.max_decrease.unwrap() > 1e-3);
        assert_eq!(r.open_loop.len(), 3);
        assert!(r.table_csv().starts_with("n,epsilon,value"));
    }

    #[test]
    fn truncation_with_optimal_first_action_is_flat() {
        let grid = torus(32, 32);
        let oracle = AdditiveDrift::constant(1, 0.0, 1.0, CostModel::Constant(1.0));
        // Constant cost: every action is optimal, so a_1 already is.
        let family = CountableFamily::Dyadic;
        let setup = TruncationSetup {
            oracle: &oracle,
            family: &family,
            n_list: &[1, 3, 5],
            grid: &grid,
            boundary: &BoundaryCondition::Periodic,
            scheme: &ParabolicScheme::default(),
            eps_list: &[0.4, 0.2],
            probe_time: 0.0,
            probe: [0.0, 0.0],
        };
        let r = countable_truncation_study(&setup, None).unwrap();
        for l in &r.levels[1..] {
            assert!(l.max_increase.unwrap().abs() < 1e-10 && l.max_decrease.unwrap().abs() < 1e-10, "{l:?}");
        }
    }

    #[test]
    fn table_oracle_reads_nearest_node() {
        let grid = torus(16, 8);
        let oracle = AdditiveDrift::step(1, 1.0, 1.0, CostModel::Quadratic);
        let actions = ActionSet::scalars(&[0.0, 1.0]).unwrap();
        let table = GridTable::sample(&oracle, &actions, &grid).unwrap();
        let t = TableOracle::new("t", &table, &actions).unwrap();
        let x = grid.point(9);
        let direct: Coeff<f64> = oracle.eval(0.0, &x, &[1.0, 0.0]);
        let read = t.eval(0.01, &[x[0] + 0.2 * grid.dx(0), 0.0], &[1.0, 0.0]);
        assert_eq!(direct, read);
        assert!(t.admits(&[1.0, 0.0]) && !t.admits(&[0.5, 0.0]));
    }
}
