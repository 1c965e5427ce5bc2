//! Subcommands: each loads a scenario, runs one experiment, writes its
//! artifacts through a [`RunRecorder`] and records pass/fail checks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use crate::analysis::{
    candidate_policies, counterexample_limit_value, counterexample_report, counterexample_value,
    countable_truncation_study, dpp_battery, mollify_value_sweep, simulation_tolerance, verification_check,
    CounterexampleBranch, EffectiveCounterexample, LiminfStatus, SweepOptions, SweepProblem, TruncationSetup,
};
use crate::battery;
use crate::coefficients::{ActionSet, CountableFamily, SharedCoefficients, CATALOG};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, Grid};
use crate::hamiltonian::{select_worst_policy, OracleNodes};
use crate::hjb_solver::{hjb_residual, policy_iteration, solve_hjb_direct, DirectSolution};
use crate::io::field_to_csv;
use crate::linear_parabolic::{ParabolicScheme, Splitting};
use crate::manifest::{RunManifest, RunRecorder};
use crate::montecarlo::{cost_bound_check, simulate_cost, ConstantAction, Feedback, PolicyFeedback};
use crate::scalar::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    SolveHjb,
    PolicyIter,
    Verify,
    DppCheck,
    MollifySweep,
    TruncationStudy,
    Simulate,
    Counterexample,
    Catalog,
    Selftest,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::SolveHjb,
        Command::PolicyIter,
        Command::Verify,
        Command::DppCheck,
        Command::MollifySweep,
        Command::TruncationStudy,
        Command::Simulate,
        Command::Counterexample,
        Command::Catalog,
        Command::Selftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SolveHjb => "solve-hjb",
            Command::PolicyIter => "policy-iter",
            Command::Verify => "verify",
            Command::DppCheck => "dpp-check",
            Command::MollifySweep => "mollify-sweep",
            Command::TruncationStudy => "truncation-study",
            Command::Simulate => "simulate",
            Command::Counterexample => "counterexample",
            Command::Catalog => "catalog",
            Command::Selftest => "selftest",
        }
    }

    pub fn needs_config(self) -> bool {
        !matches!(self, Command::Catalog | Command::Selftest)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown subcommand `{s}`")))
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed_override: Option<u64>,
}

/// A scenario ready to solve. The counterexample is replaced by its
/// pointwise-infimum effective problem with closed-form boundary data.
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub grid: Grid<f64>,
    pub oracle: SharedCoefficients<f64>,
    pub actions: ActionSet<f64>,
    pub boundary: BoundaryCondition<f64>,
    pub scheme: ParabolicScheme,
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        let grid = cfg.grid::<f64>()?;
        let scheme = cfg.solver.scheme.clone();
        if cfg.is_counterexample() {
            if grid.dim() != 1 {
                return Err(Error::InvalidArgument("the counterexample scenario is one-dimensional".into()));
            }
            let eff = EffectiveCounterexample::new(CounterexampleBranch::PointwiseInf, 1);
            let actions = eff.actions();
            let t_final = cfg.time.t_final;
            let boundary = match grid.kind() {
                crate::grid::DomainKind::Box => BoundaryCondition::dirichlet(move |t: f64, x: &Point<f64>| {
                    counterexample_value(t_final, t, x[0]).min(counterexample_limit_value(t_final, t, x[0]))
                }),
                crate::grid::DomainKind::Torus => BoundaryCondition::Periodic,
            };
            return Ok(Self {
                cfg,
                grid,
                oracle: Arc::new(eff),
                actions,
                boundary,
                scheme,
            });
        }
        let oracle = cfg.oracle::<f64>(&grid)?;
        let actions = cfg.actions::<f64>()?;
        let boundary = cfg.boundary(&grid);
        Ok(Self {
            cfg,
            grid,
            oracle,
            actions,
            boundary,
            scheme,
        })
    }

    pub fn name(&self) -> &str {
        &self.cfg.name
    }

    pub fn nodes(&self) -> Result<OracleNodes<'_, f64>> {
        OracleNodes::new(&*self.oracle, &self.actions, &self.grid)
    }

    pub fn direct(&self) -> Result<DirectSolution<f64>> {
        solve_hjb_direct(&self.nodes()?, &self.boundary, &self.scheme)
    }

    pub fn sim(&self) -> crate::montecarlo::SimConfig<f64> {
        self.cfg.sim(&self.grid)
    }
}

/// Runs `cmd` into `out`; the manifest's `passed` flag decides the exit status.
pub fn run(cmd: Command, cfg: Option<ScenarioConfig>, out: &Path, opts: &RunOptions) -> Result<RunManifest> {
    let mut cfg = cfg;
    if let (Some(c), Some(seed)) = (cfg.as_mut(), opts.seed_override) {
        c.mc.seed = seed;
    }
    if cmd.needs_config() && cfg.is_none() {
        return Err(Error::InvalidArgument(format!("`{cmd}` needs --config")));
    }
    let echo = cfg.as_ref().map(|c| c.to_json());
    let mut rec = RunRecorder::new(out, cmd.name(), echo)?;
    match cmd {
        Command::Catalog => catalog(&mut rec)?,
        Command::Selftest => battery::selftest(&mut rec, opts)?,
        _ => {
            let cfg = cfg.expect("checked above");
            let sc = Scenario::new(cfg)?;
            match cmd {
                Command::SolveHjb => solve_hjb(&sc, &mut rec)?,
                Command::PolicyIter => policy_iter(&sc, &mut rec)?,
                Command::Verify => verify(&sc, &mut rec)?,
                Command::DppCheck => dpp_check(&sc, &mut rec)?,
                Command::MollifySweep => {
                    mollify_sweep(&sc, &mut rec)?;
                }
                Command::TruncationStudy => truncation_study(&sc, &mut rec)?,
                Command::Simulate => simulate(&sc, &mut rec)?,
                Command::Counterexample => counterexample(&sc, &mut rec)?,
                Command::Catalog | Command::Selftest => unreachable!(),
            }
        }
    }
    rec.finish()
}

#[derive(Serialize)]
struct CatalogRow {
    name: &'static str,
    summary: &'static str,
    params: &'static str,
}

pub fn catalog_text() -> String {
    let mut s = String::new();
    for e in CATALOG {
        s.push_str(&format!("{:<16} {}\n{:<16} params: {}\n", e.name, e.summary, "", e.params));
    }
    s
}

fn catalog(rec: &mut RunRecorder) -> Result<()> {
    let rows: Vec<CatalogRow> = CATALOG
        .iter()
        .map(|e| CatalogRow {
            name: e.name,
            summary: e.summary,
            params: e.params,
        })
        .collect();
    rec.write_json("catalog.json", &rows)?;
    Ok(())
}

/// Residual threshold relative to the value's size; the split 2-d operator is
/// not the one the residual measures, so it is reported only.
fn residual_checked(sc: &Scenario) -> bool {
    sc.grid.dim() == 1 || sc.scheme.splitting == Splitting::Iterative
}

pub fn solve_hjb(sc: &Scenario, rec: &mut RunRecorder) -> Result<()> {
    let nodes = sc.nodes()?;
    let sol = sc.direct()?;
    let residual = hjb_residual(&sol.value, &nodes, &sc.scheme)?;
    rec.write("value.csv", &field_to_csv(&sol.value))?;
    rec.write("policy.csv", &sol.policy.to_csv())?;
    let probe = sc.cfg.probe::<f64>();
    let n = sc.grid.nearest_level(sc.cfg.experiment.probe_time);
    rec.write_json(
        "solve.json",
        &json!({
            "scenario": sc.name(),
            "residual": residual,
            "unsettled_levels": sol.unconverged_levels,
            "max_sweeps_used": sol.max_sweeps_used,
            "value_sup": sol.value.sup_norm(),
            "probe_time": sc.cfg.experiment.probe_time,
            "probe": &probe[..sc.grid.dim()],
            "value_at_probe": sol.value.interpolate_level(n, &probe),
        }),
    )?;
    rec.check(
        "solve.settled",
        sol.unconverged_levels.is_empty(),
        format!("{} unsettled levels", sol.unconverged_levels.len()),
    );
    if residual_checked(sc) {
        let limit = 1e-8 * (1.0 + sol.value.sup_norm());
        rec.check(
            "solve.residual",
            residual <= limit,
            format!("residual {residual:.3e} (limit {limit:.3e})"),
        );
    }
    Ok(())
}

/// Iteration cap asserted on top of the configured `max_iters`.
pub const PI_ITERATION_CAP: usize = 50;

pub fn policy_iter(sc: &Scenario, rec: &mut RunRecorder) -> Result<()> {
    let nodes = sc.nodes()?;
    let config = &sc.cfg.solver.policy_iteration;
    let pi = policy_iteration(&nodes, &sc.boundary, &sc.scheme, None, config)?;
    let direct = sc.direct()?;
    let distance = pi.value.sup_distance(&direct.value)?;
    rec.write("trace.csv", &pi.trace.to_csv())?;
    rec.write("value.csv", &field_to_csv(&pi.value))?;
    rec.write("policy.csv", &pi.policy.to_csv())?;
    let t = &pi.trace;
    rec.write_json(
        "policy_iteration.json",
        &json!({
            "scenario": sc.name(),
            "iterations": t.iterations(),
            "solves": t.solves(),
            "converged": t.converged,
            "c_monotone": t.c_monotone,
            "max_descent_violation": t.max_descent_violation(),
            "max_monotone_violation": t.max_monotone_violation(),
            "distance_to_direct": distance,
        }),
    )?;
    rec.check("pi.converged", t.converged, format!("{} iterations", t.iterations()));
    rec.check(
        "pi.iterations",
        t.iterations() <= PI_ITERATION_CAP,
        format!("{} <= {PI_ITERATION_CAP}", t.iterations()),
    );
    rec.check(
        "pi.oracle_agreement",
        distance <= 10.0 * config.tol,
        format!("|PI - direct| = {distance:.3e} (limit {:.1e})", 10.0 * config.tol),
    );
    rec.check(
        "pi.descent",
        t.max_descent_violation() <= 1e-10,
        format!("max (u^(k+1) - u^k) = {:.3e}", t.max_descent_violation()),
    );
    rec.check(
        "pi.adjusted_monotone",
        t.max_monotone_violation() <= 0.0,
        format!("C = {:.3e}, violation {:.3e}", t.c_monotone, t.max_monotone_violation()),
    );
    Ok(())
}

fn argmin_feedback<'a>(sc: &'a Scenario, sol: &'a DirectSolution<f64>) -> PolicyFeedback<'a, f64> {
    PolicyFeedback {
        label: "argmin".into(),
        policy: &sol.policy,
        actions: &sc.actions,
    }
}

pub fn verify(sc: &Scenario, rec: &mut RunRecorder) -> Result<()> {
    let sol = sc.direct()?;
    let argmin = argmin_feedback(sc, &sol);
    let policies = candidate_policies(&sc.grid, sc.actions.len())?;
    let feedbacks: Vec<PolicyFeedback<'_, f64>> = policies
        .iter()
        .map(|(label, p)| PolicyFeedback {
            label: label.clone(),
            policy: p,
            actions: &sc.actions,
        })
        .collect();
    let refs: Vec<&dyn Feedback<f64>> = feedbacks.iter().map(|f| f as &dyn Feedback<f64>).collect();
    let sim = sc.sim();
    rec.add_seed(sim.seed);
    let report = verification_check(&sol.value, &*sc.oracle, &argmin, &refs, &sim)?;
    rec.write_json("verification.json", &report)?;
    rec.write_json("mc.json", &report.records(sc.name()))?;
    for e in &report.entries {
        let name = match e.role {
            crate::analysis::ControlRole::Argmin => format!("verify.ii[{}]", e.control),
            _ => format!("verify.i[{}]", e.control),
        };
        rec.check(
            name,
            e.passed,
            format!("J = {:.5} +- {:.1e}, u = {:.5}, margin {:.2e}", e.j_mc, e.se, e.u, e.margin),
        );
    }
    Ok(())
}

pub fn dpp_check(sc: &Scenario, rec: &mut RunRecorder) -> Result<()> {
    if sc.cfg.experiment.t_mid.is_empty() {
        return Err(Error::Config(vec!["experiment.t_mid: required by dpp-check".into()]));
    }
    let nodes = sc.nodes()?;
    let sol = sc.direct()?;
    let argmin = argmin_feedback(sc, &sol);
    let worst = select_worst_policy(&nodes, &sol.value, sc.scheme.advection);
    let bad = PolicyFeedback {
        label: "worst".into(),
        policy: &worst,
        actions: &sc.actions,
    };
    let suboptimal: Vec<&dyn Feedback<f64>> = if sc.actions.len() > 1 { vec![&bad] } else { vec![] };
    let sim = sc.sim();
    rec.add_seed(sim.seed);
    let report = dpp_battery(&sol.value, &*sc.oracle, &argmin, &suboptimal, &sc.cfg.experiment.t_mid, &sim)?;
    rec.write_json("dpp.json", &report)?;
    for e in &report.entries {
        rec.check(
            format!("dpp[{}@{}]", e.control, e.t_mid),
            e.passed,
            format!("residual {:.3e} +- {:.1e} (tol {:.2e})", e.residual, e.se, e.tolerance),
        );
    }
    Ok(())
}

pub fn mollify_sweep(sc: &Scenario, rec: &mut RunRecorder) -> Result<crate::analysis::SweepSummary> {
    let eps = &sc.cfg.mollify.eps;
    if eps.len() < 2 {
        return Err(Error::Config(vec!["mollify.eps: a sweep needs at least two rungs".into()]));
    }
    let e = &sc.cfg.experiment;
    let mut probe = [0.0; 2];
    probe[..e.probe.len()].copy_from_slice(&e.probe);
    let mut options = SweepOptions {
        p: sc.cfg.mollify.p,
        probe_time: e.probe_time,
        probe,
        regime: e.regime,
        min_gap: e.min_gap,
        exact_at_probe: None,
    };
    let nodes = sc.nodes()?;
    let report = if sc.cfg.is_counterexample() {
        let t_final = sc.cfg.time.t_final;
        options.exact_at_probe = Some((
            counterexample_value(t_final, e.probe_time, probe[0]),
            counterexample_limit_value(t_final, e.probe_time, probe[0]),
        ));
        let limit = EffectiveCounterexample::new(CounterexampleBranch::MollifiedLimit, 1);
        let limit_actions = limit.actions();
        let limit_boundary =
            BoundaryCondition::dirichlet(move |t: f64, x: &Point<f64>| counterexample_limit_value(t_final, t, x[0]));
        let problem = SweepProblem {
            value_nodes: &nodes,
            value_boundary: &sc.boundary,
            source: &limit,
            source_actions: &limit_actions,
            mollified_boundary: &limit_boundary,
        };
        mollify_value_sweep(&problem, eps, &sc.scheme, &options)?
    } else {
        let problem = SweepProblem::same(&nodes, &sc.boundary);
        mollify_value_sweep(&problem, eps, &sc.scheme, &options)?
    };
    rec.write("sweep.csv", &report.summary_csv())?;
    rec.write_json("sweep.json", &report.summary)?;
    rec.write("value.csv", &field_to_csv(&report.value))?;
    for i in 0..report.rungs.len() {
        rec.write(&format!("gap_{i}.csv"), &report.gap_csv(i))?;
    }
    let s = &report.summary;
    for r in &s.refused {
        log::warn!("sweep refused unresolved rung eps = {r}");
    }
    let l = &s.liminf;
    if l.status == LiminfStatus::ConsistentOscillation {
        log::warn!("liminf check: oscillation consistent with the limit at eps = {}", l.epsilons[0]);
    }
    rec.check(
        "sweep.liminf",
        l.status != LiminfStatus::Fail,
        format!(
            "min gap {:.3e} @ {}, {:.3e} @ {} vs -{:.3e} ({:?})",
            l.min_gaps[0], l.epsilons[0], l.min_gaps[1], l.epsilons[1], l.tolerance, l.status
        ),
    );
    if let Some(c) = &s.convergence {
        rec.check(
            "sweep.convergence",
            c.passed,
            format!(
                "sup gaps {:?}, at eps_min {:.3e} <= {:.3e}, decreasing {}",
                c.sup_gaps, c.sup_at_min, c.threshold, c.decreasing
            ),
        );
    }
    if let Some(g) = &s.strict_gap {
        rec.check(
            "sweep.strict_gap",
            g.passed,
            format!("gap at probe {:.4} >= {}", g.gap_at_probe, g.required),
        );
    }
    rec.check(
        "sweep.bounded",
        s.bounded,
        format!("sup |V_eps| <= {:.3e}", s.value_bound),
    );
    Ok(report.summary)
}

pub fn truncation_study(sc: &Scenario, rec: &mut RunRecorder) -> Result<()> {
    if sc.cfg.is_counterexample() {
        return Err(Error::InvalidArgument(
            "truncation-study needs an enumerated family, not the counterexample".into(),
        ));
    }
    let family = match (&sc.cfg.actions.family, &sc.cfg.actions.values) {
        (Some(f), _) => f.clone(),
        (None, Some(v)) if sc.grid.dim() == 1 => CountableFamily::Listed {
            values: v.iter().map(|a| a[0]).collect(),
        },
        _ => return Err(Error::Config(vec!["actions.family: required by truncation-study".into()])),
    };
    let mut problems = Vec::new();
    if sc.cfg.experiment.n_list.is_empty() {
        problems.push("experiment.n_list: required by truncation-study".to_string());
    }
    if sc.cfg.mollify.eps.len() < 2 {
        problems.push("mollify.eps: at least two rungs required by truncation-study".to_string());
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let sim = sc.sim();
    rec.add_seed(sim.seed);
    let setup = TruncationSetup {
        oracle: &*sc.oracle,
        family: &family,
        n_list: &sc.cfg.experiment.n_list,
        grid: &sc.grid,
        boundary: &sc.boundary,
        scheme: &sc.scheme,
        eps_list: &sc.cfg.mollify.eps,
        probe_time: sc.cfg.experiment.probe_time,
        probe: sc.cfg.probe(),
    };
    let r = countable_truncation_study(&setup, Some(&sim))?;
    rec.write_json("truncation.json", &r)?;
    rec.write("truncation_table.csv", &r.table_csv())?;
    let worst_increase = r
        .levels
        .iter()
        .filter_map(|l| l.max_increase)
        .fold(f64::NEG_INFINITY, f64::max);
    rec.check(
        "truncation.monotone_in_n",
        r.nonincreasing,
        format!("max (V^N' - V^N) = {worst_increase:.3e}"),
    );
    for l in &r.levels {
        rec.check(
            format!("truncation.eps[N={}]", l.n),
            l.eps_decreasing,
            format!("sup |V_eps - V| = {:?}", l.eps_gaps),
        );
    }
    rec.check(
        "truncation.open_loop",
        r.open_loop_decreasing,
        format!(
            "J_eps - J = {:?}",
            r.open_loop.iter().map(|o| (o.epsilon, o.difference, o.se)).collect::<Vec<_>>()
        ),
    );
    Ok(())
}

pub fn simulate(sc: &Scenario, rec: &mut RunRecorder) -> Result<()> {
    let sol = sc.direct()?;
    let argmin = argmin_feedback(sc, &sol);
    let sim = sc.sim();
    rec.add_seed(sim.seed);
    let constants: Vec<ConstantAction<f64>> = sc.actions.iter().map(|a| ConstantAction(*a)).collect();
    let mut runs = vec![simulate_cost(&*sc.oracle, &argmin, &sim)?];
    for c in &constants {
        runs.push(simulate_cost(&*sc.oracle, c, &sim)?);
    }
    let records: Vec<_> = runs.iter().map(|r| r.record(sc.name())).collect();
    rec.write_json("mc.json", &records)?;
    let exits: usize = runs.iter().map(|r| r.exits).sum();
    if exits > 0 {
        log::warn!("{exits} simulated paths left the box domain");
    }
    let n0 = sc.grid.nearest_level(sim.start_time);
    let u0 = sol.value.interpolate_level(n0, &sim.start);
    let tol = simulation_tolerance(&sc.grid, runs[0].dt_sim);
    let best = &runs[0];
    rec.check(
        "simulate.cross_route",
        (best.mean - u0).abs() <= 3.0 * best.se + tol,
        format!("J = {:.5} +- {:.1e} vs u = {u0:.5} (tol {tol:.2e})", best.mean, best.se),
    );
    match cost_bound_check(&*sc.oracle, &sc.grid, sim.start_time, &runs) {
        Ok(b) => rec.check("simulate.cost_bound", true, format!("|J| <= {:.3e}", b.bound)),
        Err(e) => rec.check("simulate.cost_bound", false, e.to_string()),
    };
    Ok(())
}

pub fn counterexample(sc: &Scenario, rec: &mut RunRecorder) -> Result<()> {
    if !sc.cfg.is_counterexample() {
        return Err(Error::InvalidArgument(format!(
            "`counterexample` needs coefficients.name = \"counterexample\", got `{}`",
            sc.cfg.coefficients.name
        )));
    }
    let samples: Vec<(f64, f64)> = sc.cfg.experiment.samples.iter().map(|s| (s[0], s[1])).collect();
    let sim = sc.sim();
    rec.add_seed(sim.seed);
    let r = counterexample_report(&sc.grid, &samples, &sc.scheme, Some(&sim))?;
    rec.write("counterexample.csv", &r.to_csv())?;
    rec.write_json("counterexample.json", &r)?;
    let records: Vec<_> = r
        .mc
        .iter()
        .map(|m| crate::montecarlo::McRecord {
            scenario: sc.name().to_string(),
            control: m.control.clone(),
            mean: m.mean,
            se: m.se,
            paths: sim.paths,
            dt_sim: sim.dt_sim,
            seed: sim.seed,
        })
        .collect();
    rec.write_json("mc.json", &records)?;
    if let Some(advice) = &r.advice {
        log::warn!("{advice}");
    }
    counterexample_checks(&r, rec);
    Ok(())
}

/// Checks shared by the subcommand and the selftest.
pub fn counterexample_checks(r: &crate::analysis::CounterexampleReport, rec: &mut RunRecorder) {
    let o = &r.origin;
    rec.check(
        "counterexample.value",
        (o.numerical_v - o.exact_v).abs() <= 0.02 * o.exact_v,
        format!("V(0,0) = {:.5} vs {:.5}", o.numerical_v, o.exact_v),
    );
    rec.check(
        "counterexample.limit",
        (o.numerical_limit - o.exact_limit).abs() <= 0.02 * o.exact_limit,
        format!("V_eps-limit(0,0) = {:.5} vs {:.5}", o.numerical_limit, o.exact_limit),
    );
    rec.check(
        "counterexample.gap",
        r.gap_at_origin >= r.required_gap,
        format!("gap {:.5} >= {}", r.gap_at_origin, r.required_gap),
    );
    for m in &r.mc {
        rec.check(
            format!("counterexample.mc[{}]", m.control),
            m.within_3se,
            format!("{:.5} +- {:.1e} vs {:.5}", m.mean, m.se, m.exact),
        );
    }
}
