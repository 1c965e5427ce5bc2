//! The `selftest` battery: every acceptance criterion run on the shipped
//! scenarios. Check names start with `c<k>.` for criterion `k`; artifacts go
//! under `c<k>/`. Wall-clock timings appear only in check details, so two runs
//! produce identical artifacts.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde_json::json;

use crate::analysis::{
    comparison_fuzz, counterexample_report, SweepRegime, SweepSummary,
};
use crate::coefficients::{Counterexample, SmoothBaseline};
use crate::config::{parse_config, ScenarioConfig};
use crate::error::{Error, Result};
use crate::grid::DomainKind;
use crate::hjb_solver::policy_iteration;
use crate::linear_parabolic::{convergence_order, Advection, ClosedFormProblem, OrderStudy, ParabolicScheme};
use crate::manifest::RunRecorder;
use crate::mollifier::MollifierKernel;
use crate::montecarlo::{simulate_cost, FnFeedback, PolicyFeedback, SimConfig};
use crate::runner::{self, RunOptions, Scenario};
use crate::scalar::Point;

/// Scenario files compiled into the binary, by name.
pub const SHIPPED: &[(&str, &str)] = &[
    ("counterexample", include_str!("../../../scenarios/counterexample.cfg")),
    ("counterexample_sweep", include_str!("../../../scenarios/counterexample_sweep.cfg")),
    ("bang_bang", include_str!("../../../scenarios/bang_bang.cfg")),
    ("step_drift", include_str!("../../../scenarios/step_drift.cfg")),
    ("checkerboard", include_str!("../../../scenarios/checkerboard.cfg")),
    ("smooth_baseline", include_str!("../../../scenarios/smooth_baseline.cfg")),
    ("bang_bang_2d", include_str!("../../../scenarios/bang_bang_2d.cfg")),
];

/// Scenarios with finite action sets and a convergent mollification sweep.
const CONVERGING: &[&str] = &["bang_bang", "step_drift", "checkerboard", "smooth_baseline", "bang_bang_2d"];
/// The catalog scenarios of the oracle-agreement criterion.
const ORACLE: &[&str] = &["bang_bang", "step_drift", "checkerboard", "smooth_baseline"];
/// Scenarios whose simulated paths stay inside the PDE domain.
const SIMULATED: &[&str] = &[
    "bang_bang",
    "step_drift",
    "checkerboard",
    "smooth_baseline",
    "bang_bang_2d",
    "counterexample",
];

pub const C1_RUNTIME_SECS: f64 = 10.0;
pub const C2_RUNTIME_SECS: f64 = 60.0;
pub const SELFTEST_RUNTIME_SECS: f64 = 300.0;
pub const COMPARISON_PAIRS: usize = 100;
pub const ORDER_WINDOW: f64 = 0.25;

pub fn shipped(name: &str) -> Result<ScenarioConfig> {
    let (_, text) = SHIPPED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::InvalidArgument(format!("no shipped scenario `{name}`")))?;
    parse_config(text, &format!("scenarios/{name}.cfg"), Path::new("."))
}

fn load(name: &str, opts: &RunOptions) -> Result<ScenarioConfig> {
    let mut cfg = shipped(name)?;
    if let Some(seed) = opts.seed_override {
        cfg.mc.seed = seed;
    }
    Ok(cfg)
}

/// Runs criteria 1 through 9 into `rec`.
pub fn selftest(rec: &mut RunRecorder, opts: &RunOptions) -> Result<()> {
    let started = Instant::now();
    let mut scenarios = Vec::new();
    for (name, _) in SHIPPED {
        let cfg = load(name, opts)?;
        rec.add_seed(cfg.mc.seed);
        scenarios.push(Scenario::new(cfg)?);
    }
    let get = |name: &str| scenarios.iter().find(|s| s.name() == name).expect("shipped");

    counterexample_gap(get("counterexample"), rec)?;
    counterexample_mc(get("counterexample"), rec)?;
    for name in ORACLE {
        scoped(rec, "c3", name, |rec| runner::policy_iter(get(name), rec))?;
    }
    for sc in &scenarios {
        scoped(rec, "c4", sc.name(), |rec| pi_monotonicity(sc, rec))?;
    }
    let light = light_counterexample(get("counterexample"))?;
    for name in SIMULATED {
        let sc = if *name == "counterexample" { &light } else { get(name) };
        scoped(rec, "c5", name, |rec| runner::verify(sc, rec))?;
        scoped(rec, "c6", name, |rec| runner::dpp_check(sc, rec))?;
    }
    sweeps(&scenarios, rec)?;
    scoped(rec, "c7", "bang_bang", |rec| runner::truncation_study(get("bang_bang"), rec))?;
    solver_validation(&scenarios, rec)?;
    determinism(get("bang_bang"), rec)?;

    let secs = started.elapsed().as_secs_f64();
    rec.check(
        "c9.runtime",
        secs < SELFTEST_RUNTIME_SECS,
        format!("selftest took {secs:.1} s (limit {SELFTEST_RUNTIME_SECS} s)"),
    );
    Ok(())
}

fn scoped<T>(
    rec: &mut RunRecorder,
    criterion: &str,
    name: &str,
    body: impl FnOnce(&mut RunRecorder) -> Result<T>,
) -> Result<T> {
    rec.set_scope(&format!("{criterion}.{name}"), &format!("{criterion}/{name}"));
    let out = body(rec);
    rec.clear_scope();
    out
}

/// Criterion 1: PDE values at the origin, without the simulation arm.
fn counterexample_gap(sc: &Scenario, rec: &mut RunRecorder) -> Result<()> {
    let samples: Vec<(f64, f64)> = sc.cfg.experiment.samples.iter().map(|s| (s[0], s[1])).collect();
    let t0 = Instant::now();
    let r = counterexample_report(&sc.grid, &samples, &sc.scheme, None)?;
    let secs = t0.elapsed().as_secs_f64();
    rec.write("c1/counterexample.csv", &r.to_csv())?;
    rec.write_json("c1/counterexample.json", &r)?;
    rec.set_scope("c1", "c1");
    runner::counterexample_checks(&r, rec);
    rec.clear_scope();
    rec.check(
        "c1.runtime",
        secs < C1_RUNTIME_SECS,
        format!("{secs:.2} s (limit {C1_RUNTIME_SECS} s)"),
    );
    Ok(())
}

/// Criterion 2: the real diagonal-switching oracle under `a = x` and `a = x + 1`.
fn counterexample_mc(sc: &Scenario, rec: &mut RunRecorder) -> Result<()> {
    let sim = sc.sim();
    let oracle = Counterexample::new(1);
    let on_diagonal = FnFeedback::new("a=x", |_: f64, x: &Point<f64>| *x);
    let off_diagonal = FnFeedback::new("a=x+1", |_: f64, x: &Point<f64>| [x[0] + 1.0, 0.0]);
    let t0 = Instant::now();
    let a = simulate_cost(&oracle, &on_diagonal, &sim)?;
    let b = simulate_cost(&oracle, &off_diagonal, &sim)?;
    let secs = t0.elapsed().as_secs_f64();
    rec.write_json("c2/mc.json", &[a.record(sc.name()), b.record(sc.name())])?;
    for (est, exact) in [(&a, 1.0), (&b, 4.0 / 3.0)] {
        rec.check(
            format!("c2.mc[{}]", est.control),
            (est.mean - exact).abs() <= 3.0 * est.se,
            format!(
                "{:.5} +- {:.1e} vs {exact:.5} (M = {}, dt_sim = {})",
                est.mean, est.se, est.paths, est.dt_sim
            ),
        );
    }
    rec.check(
        "c2.runtime",
        secs < C2_RUNTIME_SECS,
        format!("{secs:.2} s (limit {C2_RUNTIME_SECS} s)"),
    );
    Ok(())
}

/// Criterion 4: descent of the iterates and the adjusted monotone sequence.
fn pi_monotonicity(sc: &Scenario, rec: &mut RunRecorder) -> Result<()> {
    let nodes = sc.nodes()?;
    let pi = policy_iteration(&nodes, &sc.boundary, &sc.scheme, None, &sc.cfg.solver.policy_iteration)?;
    let t = &pi.trace;
    rec.write("trace.csv", &t.to_csv())?;
    rec.check(
        "descent",
        t.max_descent_violation() <= 1e-10,
        format!("max (u^(k+1) - u^k) = {:.3e} over {} iterations", t.max_descent_violation(), t.iterations()),
    );
    rec.check(
        "adjusted_monotone",
        t.max_monotone_violation() <= 0.0,
        format!("C = {:.3e}, violation {:.3e}", t.c_monotone, t.max_monotone_violation()),
    );
    Ok(())
}

/// The counterexample with the simulation budget of the other scenarios.
fn light_counterexample(sc: &Scenario) -> Result<Scenario> {
    let mut cfg = sc.cfg.clone();
    cfg.mc.paths = 20_000;
    cfg.mc.dt_sim = 1.0 / 256.0;
    Scenario::new(cfg)
}

/// Criterion 7: both regimes of the mollification sweep, told apart.
fn sweeps(scenarios: &[Scenario], rec: &mut RunRecorder) -> Result<()> {
    let mut converging: Vec<(String, SweepSummary)> = Vec::new();
    let mut strict = None;
    for sc in scenarios {
        let regime = sc.cfg.experiment.regime;
        let wanted = match regime {
            SweepRegime::Converges => CONVERGING.contains(&sc.name()),
            SweepRegime::StrictGap => sc.cfg.is_counterexample() && sc.cfg.mollify.eps.len() >= 2,
        };
        if !wanted {
            continue;
        }
        let summary = scoped(rec, "c7", sc.name(), |rec| runner::mollify_sweep(sc, rec))?;
        match regime {
            SweepRegime::Converges => converging.push((sc.name().to_string(), summary)),
            SweepRegime::StrictGap => strict = Some((sc, summary)),
        }
    }
    let Some((sc, s)) = strict else {
        return Err(Error::InvalidArgument("no strict-gap sweep among the shipped scenarios".into()));
    };
    // Apply the convergence test to the counterexample too: it must fail there.
    let threshold = 5.0 * sc.grid.dx_max();
    let last = s.rungs.last().expect("at least two rungs");
    let all_converge = converging
        .iter()
        .all(|(_, c)| c.convergence.as_ref().is_some_and(|c| c.passed));
    rec.check(
        "c7.regimes",
        all_converge && last.sup_gap > threshold && s.strict_gap.as_ref().is_some_and(|g| g.passed),
        format!(
            "{} finite-A sweeps converge; counterexample sup gap {:.3e} > 5 dx = {threshold:.3e} at eps = {}",
            converging.len(),
            last.sup_gap,
            last.epsilon
        ),
    );
    Ok(())
}

/// Smooth closed-form problem of the order study: period 1, `T = 1`.
pub fn order_problem() -> ClosedFormProblem<f64> {
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

/// Criterion 8: convergence orders, comparison fuzz, kernel normalization.
fn solver_validation(scenarios: &[Scenario], rec: &mut RunRecorder) -> Result<()> {
    let problem = order_problem();
    let central_study = OrderStudy {
        nx_ladder: vec![16, 32, 64, 128],
        nt_ladder: vec![8, 16, 32, 64],
        nt_for_space: 1024,
        nx_for_time: 64,
    };
    let upwind_study = OrderStudy {
        nx_ladder: vec![32, 64, 128, 256],
        ..central_study.clone()
    };
    let central = convergence_order(&problem, &central_study, &ParabolicScheme::with_advection(Advection::Central))?;
    let upwind = convergence_order(&problem, &upwind_study, &ParabolicScheme::default())?;
    rec.write_json("c8/orders.json", &json!({"central": central, "upwind": upwind}))?;
    for (label, orders, space) in [("central", &central, 2.0), ("upwind", &upwind, 1.0)] {
        for (axis, observed, expected) in [("space", orders.space, space), ("time", orders.time, 1.0)] {
            rec.check(
                format!("c8.order.{label}.{axis}"),
                observed.is_some_and(|o| (o - expected).abs() <= ORDER_WINDOW),
                format!("observed {observed:?}, expected {expected} +- {ORDER_WINDOW}"),
            );
        }
    }

    let seed = scenarios.first().map_or(1, |s| s.cfg.mc.seed);
    let fuzz = comparison_fuzz(COMPARISON_PAIRS, seed, 1e-12)?;
    rec.write_json("c8/comparison.json", &fuzz)?;
    rec.check(
        "c8.comparison",
        fuzz.passed,
        format!(
            "{} of {} pairs violate u1 <= u2 by more than {:.0e}; max (u1 - u2) = {:.3e}",
            fuzz.violations, fuzz.pairs, fuzz.slack, fuzz.max_violation
        ),
    );

    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for sc in scenarios {
        for &eps in &sc.cfg.mollify.eps {
            let k = MollifierKernel::new(eps, sc.grid.dim())?;
            let integral = k.quadrature_integral(120);
            let mass = k.discrete_mass(&sc.grid);
            worst = worst.max((integral - 1.0).abs()).max((mass - 1.0).abs());
            rows.push(json!({"scenario": sc.name(), "epsilon": eps, "integral": integral, "discrete_mass": mass}));
        }
    }
    rec.write_json("c8/kernel.json", &rows)?;
    rec.check(
        "c8.kernel",
        worst <= 1e-8,
        format!("max normalization error {worst:.3e} over {} kernels", rows.len()),
    );
    Ok(())
}

/// Criterion 9, in-run half: the same simulation on pools of different sizes.
fn determinism(sc: &Scenario, rec: &mut RunRecorder) -> Result<()> {
    let sol = sc.direct()?;
    let argmin = PolicyFeedback {
        label: "argmin".into(),
        policy: &sol.policy,
        actions: &sc.actions,
    };
    let sim = SimConfig {
        paths: 4000,
        ..sc.sim()
    };
    let mut results = Vec::new();
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        results.push(pool.install(|| simulate_cost(&*sc.oracle, &argmin, &sim))?);
    }
    let same = results[0].mean.to_bits() == results[1].mean.to_bits()
        && results[0].se.to_bits() == results[1].se.to_bits();
    rec.write_json("c9/replay.json", &results.iter().map(|r| r.record(sc.name())).collect::<Vec<_>>())?;
    rec.check(
        "c9.thread_invariance",
        same,
        format!("mean {:e} vs {:e}", results[0].mean, results[1].mean),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenarios_parse() {
        for (name, _) in SHIPPED {
            let c = shipped(name).unwrap();
            assert_eq!(&c.name, name);
        }
        let c = shipped("counterexample").unwrap();
        assert_eq!(c.domain.extent, vec![[-6.0, 6.0]]);
        assert_eq!(c.time.t_final, 1.0);
        assert!(shipped("missing").is_err());
    }

    #[test]
    fn shipped_files_match_compiled_copies() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
        for (name, text) in SHIPPED {
            let on_disk = std::fs::read_to_string(dir.join(format!("{name}.cfg"))).unwrap();
            assert_eq!(&on_disk, text);
        }
    }
}
