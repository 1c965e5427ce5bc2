//! Scenario files: TOML with sections `domain`, `time`, `actions`,
//! `coefficients`, `solver`, `mollify`, `mc` and `experiment`.
//!
//! Loading collects every violation (with a dotted field path) instead of
//! stopping at the first one. The resolved config, defaults included, is what
//! gets echoed into run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::SweepRegime;
use crate::coefficients::{
    default_actions, from_catalog, ActionSet, CountableFamily, Param, Params, SharedCoefficients, CATALOG,
};
use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, DomainKind, Grid};
use crate::hjb_solver::PolicyIterationConfig;
use crate::linear_parabolic::ParabolicScheme;
use crate::montecarlo::{SimConfig, SimDomain};
use crate::scalar::{Point, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub kind: DomainKind,
    #[serde(default = "one")]
    pub dim: usize,
    pub extent: Vec<[f64; 2]>,
    pub nx: Vec<usize>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    pub nt: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionsSection {
    /// Explicit action list, one entry of length `dim` per action.
    pub values: Option<Vec<Vec<f64>>>,
    /// Enumerated family, truncated to its first `n` members.
    pub family: Option<CountableFamily>,
    pub n: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSection {
    pub name: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub scheme: ParabolicScheme,
    pub policy_iteration: PolicyIterationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MollifySection {
    pub eps: Vec<f64>,
    pub kernel: String,
    pub p: f64,
}

impl Default for MollifySection {
    fn default() -> Self {
        Self {
            eps: Vec::new(),
            kernel: "bump".into(),
            p: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
    pub start_time: f64,
    /// Start point; the origin when omitted.
    pub start: Vec<f64>,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            paths: 20_000,
            dt_sim: 1e-3,
            seed: 20_240_601,
            start_time: 0.0,
            start: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Intermediate times of the DPP battery (absolute).
    pub t_mid: Vec<f64>,
    /// `(s, x)` sample points of the counterexample report.
    pub samples: Vec<[f64; 2]>,
    pub n_list: Vec<usize>,
    pub regime: SweepRegime,
    pub min_gap: f64,
    pub probe_time: f64,
    pub probe: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            t_mid: Vec::new(),
            samples: Vec::new(),
            n_list: Vec::new(),
            regime: SweepRegime::Converges,
            min_gap: 0.3,
            probe_time: 0.0,
            probe: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub domain: DomainSection,
    pub time: TimeSection,
    #[serde(default)]
    pub actions: ActionsSection,
    pub coefficients: CoefficientsSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub mollify: MollifySection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    /// Directory that relative table paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let upto = &text[..offset.min(text.len())];
    let line = upto.matches('\n').count() + 1;
    let col = upto.rfind('\n').map_or(upto.len(), |i| upto.len() - i - 1) + 1;
    (line, col)
}

/// Parses and validates scenario text; `origin` names it in messages.
pub fn parse_config(text: &str, origin: &str, base_dir: &Path) -> Result<ScenarioConfig> {
    let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let at = e
            .span()
            .map(|s| {
                let (l, c) = line_col(text, s.start);
                format!("{origin}:{l}:{c}")
            })
            .unwrap_or_else(|| origin.to_string());
        Error::Parse {
            path: at,
            message: e.message().trim().to_string(),
        }
    })?;
    cfg.base_dir = base_dir.to_path_buf();
    // Unset points default to the origin; filled in so the echoed config shows them.
    let dim = cfg.domain.dim;
    if cfg.mc.start.is_empty() {
        cfg.mc.start = vec![0.0; dim];
    }
    if cfg.experiment.probe.is_empty() {
        cfg.experiment.probe = vec![0.0; dim];
    }
    let problems = cfg.violations();
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(problems))
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    parse_config(&text, &path.display().to_string(), &base)
}

fn is_level(t: f64, t_final: f64, nt: usize) -> bool {
    let k = t / t_final * nt as f64;
    (k - k.round()).abs() < 1e-9 * (1.0 + nt as f64)
}

impl ScenarioConfig {
    /// Every semantic violation as `path: message`.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut bad = |path: &str, msg: String| out.push(format!("{path}: {msg}"));
        let d = &self.domain;
        let dim = d.dim;
        if dim != 1 && dim != 2 {
            bad("domain.dim", format!("must be 1 or 2, got {dim}"));
        }
        if d.extent.len() != dim {
            bad("domain.extent", format!("expected {dim} intervals, got {}", d.extent.len()));
        }
        for (i, [lo, hi]) in d.extent.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                bad(&format!("domain.extent[{i}]"), format!("need lo < hi, got [{lo}, {hi}]"));
            }
        }
        if d.nx.len() != dim {
            bad("domain.nx", format!("expected {dim} node counts, got {}", d.nx.len()));
        }
        let min_nx = if d.kind == DomainKind::Box { 3 } else { 2 };
        for (i, &n) in d.nx.iter().enumerate() {
            if n < min_nx {
                bad(&format!("domain.nx[{i}]"), format!("must be at least {min_nx}, got {n}"));
            }
        }
        let t = &self.time;
        if !(t.t_final.is_finite() && t.t_final > 0.0) {
            bad("time.t_final", format!("must be positive, got {}", t.t_final));
        }
        if t.nt == 0 {
            bad("time.nt", "must be at least 1".into());
        }
        let tf = t.t_final;

        if !CATALOG.iter().any(|e| e.name == self.coefficients.name) {
            bad(
                "coefficients.name",
                format!("unknown family `{}` (see `catalog`)", self.coefficients.name),
            );
        }
        for (k, v) in &self.coefficients.params {
            if let Param::Text(p) = v {
                if ["drift", "drift_y", "cost"].contains(&k.as_str()) && self.coefficients.name == "tabulated" {
                    let full = self.base_dir.join(p);
                    if !full.is_file() {
                        bad(
                            &format!("coefficients.params.{k}"),
                            format!("file not found: {}", full.display()),
                        );
                    }
                }
            }
        }

        let a = &self.actions;
        if let Some(values) = &a.values {
            if values.is_empty() {
                bad("actions.values", "must not be empty".into());
            }
            for (i, v) in values.iter().enumerate() {
                if v.len() != dim {
                    bad(&format!("actions.values[{i}]"), format!("expected {dim} components, got {}", v.len()));
                }
            }
            if a.family.is_some() {
                bad("actions", "give either `values` or `family`, not both".into());
            }
        }
        if a.family.is_some() {
            if dim != 1 {
                bad("actions.family", "families are scalar; use dim = 1".into());
            }
            if a.n.unwrap_or(0) == 0 {
                bad("actions.n", "a family needs a positive truncation n".into());
            }
        }

        let s = &self.solver;
        let pi = &s.policy_iteration;
        if !(pi.tol > 0.0) {
            bad("solver.policy_iteration.tol", format!("must be positive, got {}", pi.tol));
        }
        if pi.max_iters == 0 {
            bad("solver.policy_iteration.max_iters", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&pi.policy_change_fraction) {
            bad(
                "solver.policy_iteration.policy_change_fraction",
                format!("must lie in [0, 1), got {}", pi.policy_change_fraction),
            );
        }
        if !(pi.slack_delta > 0.0) {
            bad("solver.policy_iteration.slack_delta", "must be positive".into());
        }
        if !(s.scheme.iterative_tol > 0.0) {
            bad("solver.scheme.iterative_tol", "must be positive".into());
        }
        if s.scheme.max_sweeps == 0 {
            bad("solver.scheme.max_sweeps", "must be at least 1".into());
        }

        let m = &self.mollify;
        if m.kernel != "bump" {
            bad("mollify.kernel", format!("only `bump` is available, got `{}`", m.kernel));
        }
        if m.eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            bad("mollify.eps", "entries must be positive".into());
        }
        if m.eps.windows(2).any(|w| w[1] >= w[0]) {
            bad("mollify.eps", "must be strictly decreasing".into());
        }
        if !(m.p >= 1.0) {
            bad("mollify.p", format!("must be at least 1, got {}", m.p));
        }

        let mc = &self.mc;
        if mc.paths == 0 {
            bad("mc.paths", "must be at least 1".into());
        }
        if !(mc.dt_sim > 0.0 && mc.dt_sim <= tf) {
            bad("mc.dt_sim", format!("must lie in (0, T], got {}", mc.dt_sim));
        }
        if !(mc.start_time >= 0.0 && mc.start_time < tf) {
            bad("mc.start_time", format!("must lie in [0, T), got {}", mc.start_time));
        } else if t.nt > 0 && !is_level(mc.start_time, tf, t.nt) {
            bad("mc.start_time", "must be a time level of the grid".into());
        }
        if mc.start.len() != dim {
            bad("mc.start", format!("expected {dim} components, got {}", mc.start.len()));
        }

        let e = &self.experiment;
        for (i, &tm) in e.t_mid.iter().enumerate() {
            let path = format!("experiment.t_mid[{i}]");
            if !(tm > mc.start_time && tm < tf) {
                bad(&path, format!("must lie in (start_time, T), got {tm}"));
            } else if t.nt > 0 && !is_level(tm, tf, t.nt) {
                bad(&path, "must be a time level of the grid".into());
            }
        }
        for (i, [si, _]) in e.samples.iter().enumerate() {
            let path = format!("experiment.samples[{i}]");
            if !(*si >= 0.0 && *si <= tf) {
                bad(&path, format!("time must lie in [0, T], got {si}"));
            } else if t.nt > 0 && !is_level(*si, tf, t.nt) {
                bad(&path, "time must be a time level of the grid".into());
            }
        }
        if e.n_list.first() == Some(&0) || e.n_list.windows(2).any(|w| w[1] <= w[0]) {
            bad("experiment.n_list", "must be positive and strictly increasing".into());
        }
        if !(e.probe_time >= 0.0 && e.probe_time <= tf) {
            bad("experiment.probe_time", format!("must lie in [0, T], got {}", e.probe_time));
        } else if t.nt > 0 && !is_level(e.probe_time, tf, t.nt) {
            bad("experiment.probe_time", "must be a time level of the grid".into());
        }
        if e.probe.len() != dim {
            bad("experiment.probe", format!("expected {dim} components, got {}", e.probe.len()));
        }
        out
    }

    pub fn grid<S: Real>(&self) -> Result<Grid<S>> {
        let extent: Vec<(S, S)> = self
            .domain
            .extent
            .iter()
            .map(|[a, b]| (S::lit(*a), S::lit(*b)))
            .collect();
        Grid::new(
            self.domain.kind,
            self.domain.dim,
            &extent,
            &self.domain.nx,
            S::lit(self.time.t_final),
            self.time.nt,
        )
    }

    pub fn is_counterexample(&self) -> bool {
        self.coefficients.name == "counterexample"
    }

    pub fn oracle<S: Real>(&self, grid: &Grid<S>) -> Result<SharedCoefficients<S>> {
        from_catalog(&self.coefficients.name, &self.coefficients.params, grid, &self.base_dir)
    }

    pub fn actions<S: Real>(&self) -> Result<ActionSet<S>> {
        let dim = self.domain.dim;
        if let Some(values) = &self.actions.values {
            let pts = values
                .iter()
                .map(|v| {
                    let mut p = [S::zero(); 2];
                    for (k, x) in v.iter().enumerate().take(2) {
                        p[k] = S::lit(*x);
                    }
                    p
                })
                .collect();
            return ActionSet::new(dim, pts);
        }
        if let Some(family) = &self.actions.family {
            return family.action_set(self.actions.n.unwrap_or(1));
        }
        Ok(default_actions(&self.coefficients.name, dim))
    }

    /// Periodic on the torus, zero Dirichlet data on the box.
    pub fn boundary<S: Real>(&self, grid: &Grid<S>) -> BoundaryCondition<S> {
        BoundaryCondition::natural(grid)
    }

    pub fn sim<S: Real>(&self, grid: &Grid<S>) -> SimConfig<S> {
        SimConfig {
            paths: self.mc.paths,
            dt_sim: S::lit(self.mc.dt_sim),
            seed: self.mc.seed,
            start_time: S::lit(self.mc.start_time),
            start: point(&self.mc.start),
            t_final: grid.t_final(),
            domain: SimDomain::from_grid(grid),
        }
    }

    pub fn probe<S: Real>(&self) -> Point<S> {
        point(&self.experiment.probe)
    }

    /// The resolved config with every default spelled out.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn point<S: Real>(v: &[f64]) -> Point<S> {
    let mut p = [S::zero(); 2];
    for (k, x) in v.iter().enumerate().take(2) {
        p[k] = S::lit(*x);
    }
    p
}
