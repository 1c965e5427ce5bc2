//! Measurable drift/cost data and the catalog of coefficient families.
//!
//! Every entry is a deterministic evaluator `(t, x, a) -> (b, f)` together with
//! a dominating bound `Phi(t, x)` such that `|b| + |f| <= Phi`. Discontinuities
//! are kept as point evaluations: indicator-type entries are closed on the left
//! (`x` in `[c, .)` takes the upper value) and `sign(0) = +1`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, VectorField};
use crate::scalar::{Point, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coeff<S> {
    pub drift: Point<S>,
    pub cost: S,
}

impl<S: Real> Coeff<S> {
    /// `|b| + |f|` with the Euclidean norm on the drift.
    pub fn magnitude(&self) -> S {
        (self.drift[0] * self.drift[0] + self.drift[1] * self.drift[1]).sqrt() + self.cost.abs()
    }

    pub fn is_finite(&self) -> bool {
        self.drift[0].is_finite() && self.drift[1].is_finite() && self.cost.is_finite()
    }
}

/// Evaluation oracle for `b(t, x, a)`, `f(t, x, a)` and the bound `Phi(t, x)`.
pub trait Coefficients<S: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Unchecked evaluation; callers validate actions with [`Coefficients::admits`].
    fn eval(&self, t: S, x: &Point<S>, a: &Point<S>) -> Coeff<S>;

    fn bound(&self, t: S, x: &Point<S>) -> S;

    fn admits(&self, _a: &Point<S>) -> bool {
        true
    }

    /// Integrability exponent `p` declared for `Phi`.
    fn exponent(&self) -> f64 {
        4.0
    }

    fn params(&self) -> BTreeMap<String, String> {
        BTreeMap::new()
    }
}

pub type SharedCoefficients<S> = Arc<dyn Coefficients<S>>;

/// Checked evaluation.
pub fn eval_coeff<S: Real>(
    oracle: &dyn Coefficients<S>,
    t: S,
    x: &Point<S>,
    a: &Point<S>,
) -> Result<Coeff<S>> {
    if !oracle.admits(a) {
        return Err(Error::ActionOutsideUniverse(
            format!("{:?}", &a[..oracle.dim()]),
            oracle.name().to_string(),
        ));
    }
    let c = oracle.eval(t, x, a);
    if !c.is_finite() {
        return Err(Error::Numerical(format!(
            "`{}` returned a non-finite coefficient at t={t}, x={:?}",
            oracle.name(),
            &x[..oracle.dim()]
        )));
    }
    Ok(c)
}

/// Ordered finite list of actions; index `i` is the action's identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSet<S> {
    actions: Vec<Point<S>>,
    dim: usize,
    truncated: bool,
}

impl<S: Real> ActionSet<S> {
    pub fn new(dim: usize, actions: Vec<Point<S>>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidArgument("action set must be nonempty".into()));
        }
        for (i, a) in actions.iter().enumerate() {
            if actions[..i].iter().any(|b| b[..dim] == a[..dim]) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate action {:?} at index {i}",
                    &a[..dim]
                )));
            }
            if a[..dim].iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite action at index {i}")));
            }
        }
        let mut actions = actions;
        for a in &mut actions {
            if dim == 1 {
                a[1] = S::zero();
            }
        }
        Ok(Self {
            actions,
            dim,
            truncated: false,
        })
    }

    pub fn scalars(values: &[S]) -> Result<Self> {
        Self::new(1, values.iter().map(|&v| [v, S::zero()]).collect())
    }

    pub fn singleton(dim: usize, a: Point<S>) -> Self {
        Self::new(dim, vec![a]).expect("single finite action")
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn get(&self, i: usize) -> &Point<S> {
        &self.actions[i]
    }
    pub fn iter(&self) -> impl Iterator<Item = &Point<S>> {
        self.actions.iter()
    }
    pub fn is_truncation(&self) -> bool {
        self.truncated
    }

    /// Prefix of length `min(n, len)`, flagged as a truncation `A^N`.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument("truncation size must be >= 1".into()));
        }
        Ok(Self {
            actions: self.actions[..n.min(self.actions.len())].to_vec(),
            dim: self.dim,
            truncated: true,
        })
    }

    pub fn validate_for(&self, oracle: &dyn Coefficients<S>) -> Result<()> {
        if self.dim != oracle.dim() {
            return Err(Error::ShapeMismatch(format!(
                "action dimension {} but coefficients `{}` are {}-d",
                self.dim,
                oracle.name(),
                oracle.dim()
            )));
        }
        for a in &self.actions {
            if !oracle.admits(a) {
                return Err(Error::ActionOutsideUniverse(
                    format!("{:?}", &a[..self.dim]),
                    oracle.name().to_string(),
                ));
            }
        }
        Ok(())
    }
}

/// Enumerated countable action family `a_1, a_2, ...` (scalar actions).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CountableFamily {
    /// Explicit enumeration; finite families are padded by nothing.
    Listed { values: Vec<f64> },
    /// Dyadic rationals of `[-1, 1]`: `0, 1, -1, 1/2, -1/2, 1/4, -1/4, 3/4, -3/4, 1/8, ...`
    Dyadic,
}

impl CountableFamily {
    /// First `n` members (fewer only for a short listed family).
    pub fn prefix(&self, n: usize) -> Vec<f64> {
        match self {
            CountableFamily::Listed { values } => values.iter().take(n).copied().collect(),
            CountableFamily::Dyadic => {
                let mut out = vec![0.0, 1.0, -1.0];
                let mut level = 1u32;
                while out.len() < n {
                    let denom = (1u64 << level) as f64;
                    let mut m = 1u64;
                    while m < (1u64 << level) {
                        let v = m as f64 / denom;
                        out.push(v);
                        out.push(-v);
                        m += 2;
                    }
                    level += 1;
                }
                out.truncate(n);
                out
            }
        }
    }

    pub fn action_set<S: Real>(&self, n: usize) -> Result<ActionSet<S>> {
        let values: Vec<S> = self.prefix(n).into_iter().map(S::lit).collect();
        ActionSet::scalars(&values)?.truncate(n)
    }
}

/// Running-cost shape shared by the additive catalog entries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CostModel<S> {
    Zero,
    Constant(S),
    /// `|x|^2`, measured in the fundamental cell on a torus.
    Quadratic,
}

impl<S: Real> CostModel<S> {
    #[inline]
    fn eval(&self, x: &Point<S>) -> S {
        match *self {
            CostModel::Zero => S::zero(),
            CostModel::Constant(k) => k,
            CostModel::Quadratic => x[0] * x[0] + x[1] * x[1],
        }
    }

    fn describe(&self) -> String {
        match self {
            CostModel::Zero => "zero".into(),
            CostModel::Constant(k) => format!("{k}"),
            CostModel::Quadratic => "quadratic".into(),
        }
    }
}

#[inline]
fn sign_closed<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one()
    } else {
        -S::one()
    }
}

/// Drift switched off exactly on the diagonal `x = a`, running cost `|x|^2`.
#[derive(Clone, Debug)]
pub struct Counterexample {
    dim: usize,
}

impl Counterexample {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl<S: Real> Coefficients<S> for Counterexample {
    fn name(&self) -> &str {
        "counterexample"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _t: S, x: &Point<S>, a: &Point<S>) -> Coeff<S> {
        let on_diagonal = x[..self.dim] == a[..self.dim];
        let speed = if on_diagonal { S::zero() } else { S::one() };
        Coeff {
            drift: [speed, S::zero()],
            cost: x[0] * x[0] + x[1] * x[1],
        }
    }
    fn bound(&self, _t: S, x: &Point<S>) -> S {
        S::one() + x[0] * x[0] + x[1] * x[1]
    }
}

/// Drift `base(t, x) + a` for a measurable base field, with `|a_i| <= amax`.
#[derive(Clone, Debug)]
pub struct AdditiveDrift<S> {
    name: &'static str,
    dim: usize,
    base: BaseDrift<S>,
    amax: S,
    cost: CostModel<S>,
}

#[derive(Clone, Debug)]
pub enum BaseDrift<S> {
    Constant(S),
    /// `c * sign(x_0)`, closed on the left.
    Step(S),
    /// `(-1)^(floor(2 kx (x - lo) / L) + floor(2 kt t / T))` along axis 0.
    Checkerboard {
        kx: S,
        kt: S,
        lo: Point<S>,
        period: Point<S>,
        t_final: S,
    },
}

impl<S: Real> BaseDrift<S> {
    #[inline]
    fn eval(&self, t: S, x: &Point<S>, dim: usize) -> S {
        match *self {
            BaseDrift::Constant(c) => c,
            BaseDrift::Step(c) => c * sign_closed(x[0]),
            BaseDrift::Checkerboard {
                kx,
                kt,
                lo,
                period,
                t_final,
            } => {
                let two = S::lit(2.0);
                let mut cell = 0i64;
                for axis in 0..dim {
                    let r = two * kx * (x[axis] - lo[axis]) / period[axis];
                    cell += r.floor().to_i64().unwrap_or(0);
                }
                cell += (two * kt * t / t_final).floor().to_i64().unwrap_or(0);
                if cell.rem_euclid(2) == 0 {
                    S::one()
                } else {
                    -S::one()
                }
            }
        }
    }

    fn sup(&self) -> S {
        match *self {
            BaseDrift::Constant(c) | BaseDrift::Step(c) => c.abs(),
            BaseDrift::Checkerboard { .. } => S::one(),
        }
    }
}

impl<S: Real> AdditiveDrift<S> {
    pub fn constant(dim: usize, c: S, amax: S, cost: CostModel<S>) -> Self {
        Self {
            name: "constant_drift",
            dim,
            base: BaseDrift::Constant(c),
            amax,
            cost,
        }
    }

    pub fn step(dim: usize, c: S, amax: S, cost: CostModel<S>) -> Self {
        Self {
            name: "step_drift",
            dim,
            base: BaseDrift::Step(c),
            amax,
            cost,
        }
    }

    pub fn checkerboard(grid: &Grid<S>, kx: S, kt: S, amax: S, cost: CostModel<S>) -> Self {
        let mut lo = [S::zero(); 2];
        let mut period = [S::one(); 2];
        for axis in 0..grid.dim() {
            lo[axis] = grid.lo(axis);
            period[axis] = grid.length(axis);
        }
        Self {
            name: "checkerboard",
            dim: grid.dim(),
            base: BaseDrift::Checkerboard {
                kx,
                kt,
                lo,
                period,
                t_final: grid.t_final(),
            },
            amax,
            cost,
        }
    }
}

impl<S: Real> Coefficients<S> for AdditiveDrift<S> {
    fn name(&self) -> &str {
        self.name
    }
    fn dim(&self) -> usize {
        self.dim
    }
    #[inline]
    fn eval(&self, t: S, x: &Point<S>, a: &Point<S>) -> Coeff<S> {
        let mut drift = *a;
        drift[0] += self.base.eval(t, x, self.dim);
        if self.dim == 1 {
            drift[1] = S::zero();
        }
        Coeff {
            drift,
            cost: self.cost.eval(x),
        }
    }
    fn bound(&self, _t: S, x: &Point<S>) -> S {
        let amax = self.amax * S::from_usize_lossy(self.dim).sqrt();
        self.base.sup() + amax + self.cost.eval(x).abs()
    }
    fn admits(&self, a: &Point<S>) -> bool {
        a[..self.dim].iter().all(|v| v.abs() <= self.amax)
    }
    fn params(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        match &self.base {
            BaseDrift::Constant(c) | BaseDrift::Step(c) => {
                m.insert("c".into(), c.to_string());
            }
            BaseDrift::Checkerboard { kx, kt, .. } => {
                m.insert("kx".into(), kx.to_string());
                m.insert("kt".into(), kt.to_string());
            }
        }
        m.insert("amax".into(), self.amax.to_string());
        m.insert("cost".into(), self.cost.describe());
        m
    }
}

/// `b = a`, `A = {-1, 1}`.
#[derive(Clone, Debug)]
pub struct BangBang<S> {
    dim: usize,
    cost: CostModel<S>,
}

impl<S: Real> BangBang<S> {
    pub fn new(dim: usize, cost: CostModel<S>) -> Self {
        Self { dim, cost }
    }
}

impl<S: Real> Coefficients<S> for BangBang<S> {
    fn name(&self) -> &str {
        "bang_bang"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    #[inline]
    fn eval(&self, _t: S, x: &Point<S>, a: &Point<S>) -> Coeff<S> {
        let mut drift = *a;
        if self.dim == 1 {
            drift[1] = S::zero();
        }
        Coeff {
            drift,
            cost: self.cost.eval(x),
        }
    }
    fn bound(&self, _t: S, x: &Point<S>) -> S {
        S::from_usize_lossy(self.dim).sqrt() + self.cost.eval(x).abs()
    }
    fn admits(&self, a: &Point<S>) -> bool {
        a[..self.dim].iter().all(|&v| v == S::one() || v == -S::one())
    }
    fn params(&self) -> BTreeMap<String, String> {
        BTreeMap::from([("cost".to_string(), self.cost.describe())])
    }
}

/// Smooth data with a closed-form value function.
///
/// With `k = 2 pi / L`, `phi(x) = 1 + cos(k x_0) / 2`, `g(tau) = 1 - exp(-tau)` and
/// `tau = T - t`, the drift is `b = a + beta sin(k x_0) e_0` and the cost is
/// `f = exp(-tau) phi - g phi'' - b_0 g phi' + kappa |a|^2`.
/// For every action containing `0` the value function is `g(T - s) phi(x_0)`,
/// and the single-action problem `A = {0}` has the same solution.
#[derive(Clone, Debug)]
pub struct SmoothBaseline<S> {
    dim: usize,
    wavenumber: S,
    beta: S,
    kappa: S,
    amax: S,
    t_final: S,
}

impl<S: Real> SmoothBaseline<S> {
    pub fn new(dim: usize, period: S, t_final: S, beta: S, kappa: S, amax: S) -> Self {
        Self {
            dim,
            wavenumber: S::lit(2.0 * PI) / period,
            beta,
            kappa,
            amax,
            t_final,
        }
    }

    pub fn exact_value(&self, s: S, x: &Point<S>) -> S {
        let tau = self.t_final - s;
        (S::one() - (-tau).exp()) * self.phi(x[0])
    }

    fn phi(&self, x: S) -> S {
        S::one() + S::lit(0.5) * (self.wavenumber * x).cos()
    }
}

impl<S: Real> Coefficients<S> for SmoothBaseline<S> {
    fn name(&self) -> &str {
        "smooth_baseline"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    #[inline]
    fn eval(&self, t: S, x: &Point<S>, a: &Point<S>) -> Coeff<S> {
        let k = self.wavenumber;
        let half = S::lit(0.5);
        let tau = self.t_final - t;
        let decay = (-tau).exp();
        let g = S::one() - decay;
        let (sin, cos) = (k * x[0]).sin_cos();
        let phi = S::one() + half * cos;
        let dphi = -half * k * sin;
        let d2phi = -half * k * k * cos;
        let mut drift = *a;
        drift[0] += self.beta * sin;
        if self.dim == 1 {
            drift[1] = S::zero();
        }
        let a2 = a[0] * a[0] + if self.dim == 2 { a[1] * a[1] } else { S::zero() };
        Coeff {
            drift,
            cost: decay * phi - g * d2phi - drift[0] * g * dphi + self.kappa * a2,
        }
    }
    fn bound(&self, t: S, x: &Point<S>) -> S {
        let k = self.wavenumber;
        let half = S::lit(0.5);
        let tau = self.t_final - t;
        let decay = (-tau).exp();
        let g = S::one() - decay;
        let (sin, cos) = (k * x[0]).sin_cos();
        let an = self.amax * S::from_usize_lossy(self.dim).sqrt();
        let bmax = an + self.beta * sin.abs();
        let phi = S::one() + half * cos;
        bmax + decay * phi
            + g * half * k * k * cos.abs()
            + bmax * g * half * k * sin.abs()
            + self.kappa * an * an
    }
    fn admits(&self, a: &Point<S>) -> bool {
        a[..self.dim].iter().all(|v| v.abs() <= self.amax)
    }
    fn params(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("beta".to_string(), self.beta.to_string()),
            ("kappa".to_string(), self.kappa.to_string()),
            ("amax".to_string(), self.amax.to_string()),
        ])
    }
}

/// Tensor-product table of samples read from a field CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Table<S> {
    times: Vec<S>,
    axes: Vec<Vec<S>>,
    values: Vec<S>,
}

impl<S: Real> Table<S> {
    pub fn new(times: Vec<S>, axes: Vec<Vec<S>>, values: Vec<S>) -> Result<Self> {
        let expected = times.len() * axes.iter().map(Vec::len).product::<usize>();
        if axes.is_empty() || axes.len() > 2 || expected != values.len() || expected == 0 {
            return Err(Error::ShapeMismatch(format!(
                "table with {} values does not fill {} time x {:?} nodes",
                values.len(),
                times.len(),
                axes.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        Ok(Self { times, axes, values })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Piecewise-constant lookup at the nearest tabulated node.
    pub fn lookup(&self, t: S, x: &Point<S>) -> S {
        let n = nearest_index(&self.times, t);
        let i0 = nearest_index(&self.axes[0], x[0]);
        let mut j = i0;
        if self.axes.len() == 2 {
            j += self.axes[0].len() * nearest_index(&self.axes[1], x[1]);
        }
        let ns: usize = self.axes.iter().map(Vec::len).product();
        self.values[n * ns + j]
    }

    pub fn sup(&self) -> S {
        self.values.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let records = crate::io::read_field_csv::<S>(path)?;
        Self::from_records(&records).map_err(|e| match e {
            Error::ShapeMismatch(msg) => Error::Parse {
                path: path.display().to_string(),
                message: msg,
            },
            other => other,
        })
    }

    /// Builds from `(t, x[, y], value)` rows in any order.
    pub fn from_records(records: &crate::io::FieldRecords<S>) -> Result<Self> {
        let uniq = |vals: Vec<S>| {
            let mut v = vals;
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            v
        };
        let times = uniq(records.rows.iter().map(|r| r.0).collect());
        let mut axes = vec![uniq(records.rows.iter().map(|r| r.1[0]).collect())];
        if records.dim == 2 {
            axes.push(uniq(records.rows.iter().map(|r| r.1[1]).collect()));
        }
        let ns: usize = axes.iter().map(Vec::len).product();
        let mut values = vec![S::nan(); times.len() * ns];
        for (t, x, v) in &records.rows {
            let n = exact_index(&times, *t);
            let mut j = exact_index(&axes[0], x[0]);
            if records.dim == 2 {
                j += axes[0].len() * exact_index(&axes[1], x[1]);
            }
            values[n * ns + j] = *v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::ShapeMismatch(
                "table rows do not cover a full tensor grid".into(),
            ));
        }
        Self::new(times, axes, values)
    }
}

fn exact_index<S: Real>(sorted: &[S], v: S) -> usize {
    sorted
        .binary_search_by(|p| p.partial_cmp(&v).unwrap())
        .unwrap_or(0)
}

fn nearest_index<S: Real>(sorted: &[S], v: S) -> usize {
    match sorted.binary_search_by(|p| p.partial_cmp(&v).unwrap_or(std::cmp::Ordering::Less)) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i >= sorted.len() => sorted.len() - 1,
        Err(i) => {
            if v - sorted[i - 1] <= sorted[i] - v {
                i - 1
            } else {
                i
            }
        }
    }
}

/// Drift and cost read from field files; `b = table + a`.
#[derive(Clone, Debug)]
pub struct Tabulated<S> {
    drift: Vec<Table<S>>,
    cost: Table<S>,
    amax: S,
    sources: Vec<String>,
}

impl<S: Real> Tabulated<S> {
    pub fn new(drift: Vec<Table<S>>, cost: Table<S>, amax: S) -> Result<Self> {
        if drift.len() != cost.dim() || drift.iter().any(|d| d.dim() != cost.dim()) {
            return Err(Error::ShapeMismatch(
                "tabulated drift needs one table per axis, same dimension as cost".into(),
            ));
        }
        Ok(Self {
            drift,
            cost,
            amax,
            sources: Vec::new(),
        })
    }

    pub fn load(drift_paths: &[&Path], cost_path: &Path, amax: S) -> Result<Self> {
        let drift = drift_paths
            .iter()
            .map(|p| Table::load(p))
            .collect::<Result<Vec<_>>>()?;
        let cost = Table::load(cost_path)?;
        let mut t = Self::new(drift, cost, amax)?;
        t.sources = drift_paths
            .iter()
            .chain(std::iter::once(&cost_path))
            .map(|p| p.display().to_string())
            .collect();
        Ok(t)
    }
}

impl<S: Real> Coefficients<S> for Tabulated<S> {
    fn name(&self) -> &str {
        "tabulated"
    }
    fn dim(&self) -> usize {
        self.cost.dim()
    }
    fn eval(&self, t: S, x: &Point<S>, a: &Point<S>) -> Coeff<S> {
        let mut drift = [S::zero(); 2];
        for (axis, table) in self.drift.iter().enumerate() {
            drift[axis] = table.lookup(t, x) + a[axis];
        }
        Coeff {
            drift,
            cost: self.cost.lookup(t, x),
        }
    }
    fn bound(&self, _t: S, _x: &Point<S>) -> S {
        let b: S = self.drift.iter().map(|d| d.sup() + self.amax).sum();
        b + self.cost.sup()
    }
    fn admits(&self, a: &Point<S>) -> bool {
        a[..self.dim()].iter().all(|v| v.abs() <= self.amax)
    }
    fn params(&self) -> BTreeMap<String, String> {
        BTreeMap::from([("files".to_string(), self.sources.join(";"))])
    }
}

/// Samples one action's drift and cost at every grid node.
pub fn sample_to_grid<S: Real>(
    oracle: &dyn Coefficients<S>,
    grid: &Grid<S>,
    action: &Point<S>,
) -> Result<(VectorField<S>, Field<S>)> {
    if !oracle.admits(action) {
        return Err(Error::ActionOutsideUniverse(
            format!("{:?}", &action[..oracle.dim()]),
            oracle.name().to_string(),
        ));
    }
    let ns = grid.space_len();
    let mut drift = vec![Vec::with_capacity(grid.len()); grid.dim()];
    let mut cost = Vec::with_capacity(grid.len());
    for n in 0..grid.time_levels() {
        let t = grid.time(n);
        for j in 0..ns {
            let c = oracle.eval(t, &grid.point(j), action);
            for (axis, d) in drift.iter_mut().enumerate() {
                d.push(c.drift[axis]);
            }
            cost.push(c.cost);
        }
    }
    let comps = drift
        .into_iter()
        .map(|v| Field::from_values(grid, v))
        .collect::<Result<Vec<_>>>()?;
    Ok((VectorField::new(comps)?, Field::from_values(grid, cost)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundViolation {
    pub t: f64,
    pub x: Vec<f64>,
    pub action: usize,
    pub magnitude: f64,
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub checked: usize,
    /// Smallest `Phi - (|b| + |f|)` seen.
    pub min_slack: f64,
    /// Largest `Phi - (|b| + |f|)` seen.
    pub max_slack: f64,
    pub violations: Vec<BoundViolation>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Scans `|b| + |f| <= Phi` at every node and action.
pub fn scan_bound<S: Real>(
    oracle: &dyn Coefficients<S>,
    grid: &Grid<S>,
    actions: &ActionSet<S>,
) -> Result<BoundReport> {
    actions.validate_for(oracle)?;
    let mut report = BoundReport {
        checked: 0,
        min_slack: f64::INFINITY,
        max_slack: f64::NEG_INFINITY,
        violations: Vec::new(),
    };
    for n in 0..grid.time_levels() {
        let t = grid.time(n);
        for j in 0..grid.space_len() {
            let x = grid.point(j);
            let phi = oracle.bound(t, &x).as_f64();
            for (ai, a) in actions.iter().enumerate() {
                let c = eval_coeff(oracle, t, &x, a)?;
                let mag = c.magnitude().as_f64();
                let slack = phi - mag;
                report.checked += 1;
                report.min_slack = report.min_slack.min(slack);
                report.max_slack = report.max_slack.max(slack);
                let tol = 8.0 * S::epsilon().as_f64() * phi.abs().max(1.0);
                if slack < -tol {
                    report.violations.push(BoundViolation {
                        t: t.as_f64(),
                        x: x[..grid.dim()].iter().map(|v| v.as_f64()).collect(),
                        action: ai,
                        magnitude: mag,
                        phi,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Like [`scan_bound`] but fails on the first violating `(t, x, a)`.
pub fn verify_bound<S: Real>(
    oracle: &dyn Coefficients<S>,
    grid: &Grid<S>,
    actions: &ActionSet<S>,
) -> Result<BoundReport> {
    let report = scan_bound(oracle, grid, actions)?;
    if let Some(v) = report.violations.first() {
        return Err(Error::BoundViolation {
            t: v.t,
            x: format!("{:?}", v.x),
            action: v.action,
            lhs: v.magnitude,
            phi: v.phi,
        });
    }
    Ok(report)
}

/// Parameter value in a catalog entry's flat map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Number(f64),
    Text(String),
}

pub type Params = BTreeMap<String, Param>;

pub struct CatalogEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static str,
}

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        name: "counterexample",
        summary: "b(x,a) = 0 if x = a else 1, f = |x|^2, any real action",
        params: "",
    },
    CatalogEntry {
        name: "constant_drift",
        summary: "b = c + a, |a| <= amax",
        params: "c=0, amax=1, cost=quadratic",
    },
    CatalogEntry {
        name: "step_drift",
        summary: "b = c sign(x_0) + a with sign(0) = +1",
        params: "c=0.5, amax=1, cost=quadratic",
    },
    CatalogEntry {
        name: "checkerboard",
        summary: "b = +-1 on a space-time checkerboard, plus a",
        params: "kx=1, kt=0, amax=1, cost=quadratic",
    },
    CatalogEntry {
        name: "bang_bang",
        summary: "b = a with A = {-1, 1}",
        params: "cost=quadratic",
    },
    CatalogEntry {
        name: "smooth_baseline",
        summary: "smooth data with closed-form value g(T-s) (1 + cos(2 pi x / L) / 2)",
        params: "beta=0.5, kappa=0.5, amax=1",
    },
    CatalogEntry {
        name: "tabulated",
        summary: "drift/cost loaded from field CSV files, b = table + a",
        params: "drift=<path>, drift_y=<path>, cost=<path>, amax=1",
    },
];

fn number<S: Real>(params: &Params, key: &str, default: f64) -> Result<S> {
    match params.get(key) {
        None => Ok(S::lit(default)),
        Some(Param::Number(v)) if v.is_finite() => Ok(S::lit(*v)),
        Some(other) => Err(Error::Parse {
            path: format!("coefficients.params.{key}"),
            message: format!("expected a finite number, got {other:?}"),
        }),
    }
}

fn text<'a>(params: &'a Params, key: &str) -> Result<Option<&'a str>> {
    match params.get(key) {
        None => Ok(None),
        Some(Param::Text(s)) => Ok(Some(s)),
        Some(other) => Err(Error::Parse {
            path: format!("coefficients.params.{key}"),
            message: format!("expected a string, got {other:?}"),
        }),
    }
}

fn cost_model<S: Real>(params: &Params) -> Result<CostModel<S>> {
    match params.get("cost") {
        None => Ok(CostModel::Quadratic),
        Some(Param::Number(k)) => Ok(CostModel::Constant(S::lit(*k))),
        Some(Param::Text(s)) => match s.as_str() {
            "quadratic" => Ok(CostModel::Quadratic),
            "zero" => Ok(CostModel::Zero),
            "one" => Ok(CostModel::Constant(S::one())),
            other => Err(Error::Parse {
                path: "coefficients.params.cost".into(),
                message: format!("unknown cost model `{other}`"),
            }),
        },
    }
}

/// Instantiates a catalog entry on a grid; relative table paths resolve against `base_dir`.
pub fn from_catalog<S: Real>(
    name: &str,
    params: &Params,
    grid: &Grid<S>,
    base_dir: &Path,
) -> Result<SharedCoefficients<S>> {
    let dim = grid.dim();
    let oracle: SharedCoefficients<S> = match name {
        "counterexample" => Arc::new(Counterexample::new(dim)),
        "constant_drift" => Arc::new(AdditiveDrift::constant(
            dim,
            number(params, "c", 0.0)?,
            number(params, "amax", 1.0)?,
            cost_model(params)?,
        )),
        "step_drift" => Arc::new(AdditiveDrift::step(
            dim,
            number(params, "c", 0.5)?,
            number(params, "amax", 1.0)?,
            cost_model(params)?,
        )),
        "checkerboard" => Arc::new(AdditiveDrift::checkerboard(
            grid,
            number(params, "kx", 1.0)?,
            number(params, "kt", 0.0)?,
            number(params, "amax", 1.0)?,
            cost_model(params)?,
        )),
        "bang_bang" => Arc::new(BangBang::new(dim, cost_model(params)?)),
        "smooth_baseline" => Arc::new(SmoothBaseline::new(
            dim,
            grid.length(0),
            grid.t_final(),
            number(params, "beta", 0.5)?,
            number(params, "kappa", 0.5)?,
            number(params, "amax", 1.0)?,
        )),
        "tabulated" => {
            let resolve = |key: &str| -> Result<Option<std::path::PathBuf>> {
                Ok(text(params, key)?.map(|p| base_dir.join(p)))
            };
            let missing = |key: &str| Error::Parse {
                path: format!("coefficients.params.{key}"),
                message: "required for `tabulated`".into(),
            };
            let drift = resolve("drift")?.ok_or_else(|| missing("drift"))?;
            let cost = resolve("cost")?.ok_or_else(|| missing("cost"))?;
            let mut drifts = vec![drift];
            if dim == 2 {
                drifts.push(resolve("drift_y")?.ok_or_else(|| missing("drift_y"))?);
            }
            let refs: Vec<&Path> = drifts.iter().map(|p| p.as_path()).collect();
            Arc::new(Tabulated::load(&refs, &cost, number(params, "amax", 1.0)?)?)
        }
        other => return Err(Error::UnknownCatalogEntry(other.to_string())),
    };
    Ok(oracle)
}

/// Default action list of an entry when a scenario does not list its own.
pub fn default_actions<S: Real>(name: &str, dim: usize) -> ActionSet<S> {
    match name {
        "bang_bang" if dim == 1 => ActionSet::scalars(&[-S::one(), S::one()]).unwrap(),
        "bang_bang" => ActionSet::new(
            2,
            vec![
                [-S::one(), -S::one()],
                [-S::one(), S::one()],
                [S::one(), -S::one()],
                [S::one(), S::one()],
            ],
        )
        .unwrap(),
        _ => ActionSet::singleton(dim, [S::zero(); 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainKind;

    fn torus(nx: usize) -> Grid<f64> {
        Grid::new(DomainKind::Torus, 1, &[(0.0, 1.0)], &[nx], 1.0, 2).unwrap()
    }

    #[test]
    fn counterexample_switches_drift_on_diagonal() {
        let c = Counterexample::new(1);
        let on = eval_coeff::<f64>(&c, 0.3, &[0.5, 0.0], &[0.5, 0.0]).unwrap();
        let off = eval_coeff::<f64>(&c, 0.3, &[0.5, 0.0], &[0.3, 0.0]).unwrap();
        assert_eq!(on.drift[0], 0.0);
        assert_eq!(off.drift[0], 1.0);
        let q = eval_coeff::<f64>(&c, 0.0, &[2.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(q.cost, 4.0);
    }

    #[test]
    fn eval_rejects_foreign_action() {
        let b = BangBang::<f64>::new(1, CostModel::Quadratic);
        assert!(matches!(
            eval_coeff(&b, 0.0, &[0.0, 0.0], &[0.5, 0.0]),
            Err(Error::ActionOutsideUniverse(..))
        ));
    }

    #[test]
    fn sample_constant_and_step() {
        let g = torus(8);
        let c = AdditiveDrift::constant(1, 1.0, 1.0, CostModel::Zero);
        let (b, _) = sample_to_grid(&c, &g, &[0.0, 0.0]).unwrap();
        assert!(b.component(0).values().iter().all(|&v| v == 1.0));

        let bx = Grid::new(DomainKind::Box, 1, &[(-1.0, 1.0)], &[5], 1.0, 1).unwrap();
        let s = AdditiveDrift::step(1, 1.0, 1.0, CostModel::Zero);
        let (b, _) = sample_to_grid(&s, &bx, &[0.0, 0.0]).unwrap();
        assert_eq!(b.component(0).at(0, 2), 1.0);
        assert_eq!(b.component(0).at(0, 1), -1.0);
    }

    #[test]
    fn checkerboard_cell_centers() {
        let g = torus(4);
        let cb = AdditiveDrift::checkerboard(&g, 1.0, 0.0, 1.0, CostModel::Zero);
        let (b, _) = sample_to_grid(&cb, &g, &[0.0, 0.0]).unwrap();
        assert_eq!(b.component(0).level(0), &[1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn bound_checks() {
        let bx = Grid::new(DomainKind::Box, 1, &[(-6.0, 6.0)], &[49], 1.0, 4).unwrap();
        let c = Counterexample::new(1);
        let nodes: Vec<f64> = (0..49).step_by(6).map(|i| bx.coord(0, i)).collect();
        let acts = ActionSet::scalars(&nodes).unwrap();
        let r = verify_bound(&c, &bx, &acts).unwrap();
        assert!(r.passed());
        assert!(r.min_slack >= 0.0);

        let forced = AdditiveDrift::constant(1, 0.0, 0.0, CostModel::Constant(1.0));
        struct ZeroBound(AdditiveDrift<f64>);
        impl Coefficients<f64> for ZeroBound {
            fn name(&self) -> &str {
                "forced"
            }
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, t: f64, x: &Point<f64>, a: &Point<f64>) -> Coeff<f64> {
                self.0.eval(t, x, a)
            }
            fn bound(&self, _: f64, _: &Point<f64>) -> f64 {
                0.0
            }
        }
        let zb = ZeroBound(forced);
        let single = ActionSet::singleton(1, [0.0, 0.0]);
        let err = verify_bound(&zb, &bx, &single).unwrap_err();
        match err {
            Error::BoundViolation { t, x, .. } => {
                assert_eq!(t, 0.0);
                assert_eq!(x, "[-6.0]");
            }
            other => panic!("unexpected {other}"),
        }

        let zero = AdditiveDrift::constant(1, 0.0, 0.0, CostModel::Zero);
        struct Exact(AdditiveDrift<f64>);
        impl Coefficients<f64> for Exact {
            fn name(&self) -> &str {
                "zero"
            }
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, t: f64, x: &Point<f64>, a: &Point<f64>) -> Coeff<f64> {
                self.0.eval(t, x, a)
            }
            fn bound(&self, _: f64, _: &Point<f64>) -> f64 {
                0.0
            }
        }
        let r = verify_bound(&Exact(zero), &bx, &single).unwrap();
        assert_eq!((r.min_slack, r.max_slack), (0.0, 0.0));
    }

    #[test]
    fn every_catalog_entry_is_dominated() {
        let g = torus(32);
        for entry in CATALOG.iter().filter(|e| e.name != "tabulated") {
            let o = from_catalog::<f64>(entry.name, &Params::new(), &g, Path::new(".")).unwrap();
            let acts = if entry.name == "counterexample" {
                ActionSet::scalars(&[g.coord(0, 3), 0.25]).unwrap()
            } else if entry.name == "bang_bang" {
                default_actions("bang_bang", 1)
            } else {
                ActionSet::scalars(&[-1.0, 0.0, 1.0]).unwrap()
            };
            let r = scan_bound(o.as_ref(), &g, &acts).unwrap();
            assert!(r.passed(), "{} violates its bound", entry.name);
        }
    }

    #[test]
    fn smooth_baseline_manufactured_solution() {
        // residual of the PDE for action 0 by centred finite differences of the closed form
        let sb = SmoothBaseline::new(1, 1.0, 1.0, 0.5, 0.5, 1.0);
        let h = 1e-4;
        for &(s, x) in &[(0.1, 0.2), (0.5, 0.77), (0.9, 0.05)] {
            let u = |s: f64, x: f64| sb.exact_value(s, &[x, 0.0]);
            let us = (u(s + h, x) - u(s - h, x)) / (2.0 * h);
            let ux = (u(s, x + h) - u(s, x - h)) / (2.0 * h);
            let uxx = (u(s, x + h) - 2.0 * u(s, x) + u(s, x - h)) / (h * h);
            let c = sb.eval(s, &[x, 0.0], &[0.0, 0.0]);
            let r = us + uxx + c.drift[0] * ux + c.cost;
            assert!(r.abs() < 1e-5, "residual {r}");
        }
    }

    #[test]
    fn dyadic_family_prefix_and_truncation() {
        let fam = CountableFamily::Dyadic;
        assert_eq!(fam.prefix(7), vec![0.0, 1.0, -1.0, 0.5, -0.5, 0.25, -0.25]);
        let a3: ActionSet<f64> = fam.action_set(3).unwrap();
        assert!(a3.is_truncation());
        let a9: ActionSet<f64> = fam.action_set(9).unwrap();
        for i in 0..3 {
            assert_eq!(a3.get(i), a9.get(i));
        }
    }

    #[test]
    fn action_set_rules() {
        assert!(ActionSet::<f64>::scalars(&[]).is_err());
        assert!(ActionSet::scalars(&[1.0, 1.0]).is_err());
        let a = ActionSet::scalars(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.truncate(2).unwrap().len(), 2);
        assert_eq!(a.truncate(5).unwrap().len(), 3);
        assert!(a.truncate(0).is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let g = torus(16);
        for entry in CATALOG.iter().filter(|e| e.name != "tabulated") {
            let o = from_catalog::<f64>(entry.name, &Params::new(), &g, Path::new(".")).unwrap();
            let a = if entry.name == "bang_bang" { [1.0, 0.0] } else { [0.0, 0.0] };
            let x = [0.3711, 0.0];
            let c1 = o.eval(0.4, &x, &a);
            let c2 = o.eval(0.4, &x, &a);
            assert_eq!(c1.drift[0].to_bits(), c2.drift[0].to_bits());
            assert_eq!(c1.cost.to_bits(), c2.cost.to_bits());
        }
    }
}
