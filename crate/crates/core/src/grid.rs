//! Space-time discretization of `[0, T] x D` with `D` a torus or a box.
//!
//! Torus nodes are cell centered (`lo + (i + 1/2) dx`), box nodes include both
//! endpoints (`lo + i dx`). Time levels are `t_n = n dt`, `n = 0..=nt`, with the
//! last level pinned to `T`. Quadrature follows node placement: midpoint in
//! space on the torus, trapezoid on the box, trapezoid in time.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Point, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Torus,
    Box,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainKind::Torus => f.write_str("torus"),
            DomainKind::Box => f.write_str("box"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<S> {
    kind: DomainKind,
    dim: usize,
    lo: Point<S>,
    hi: Point<S>,
    nx: [usize; 2],
    t_final: S,
    nt: usize,
    dx: Point<S>,
    dt: S,
}

impl<S: Real> Grid<S> {
    /// Builds a grid; `extent[axis] = (lo, hi)` (for the torus `hi - lo` is the period).
    pub fn new(
        kind: DomainKind,
        dim: usize,
        extent: &[(S, S)],
        nx: &[usize],
        t_final: S,
        nt: usize,
    ) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if extent.len() != dim || nx.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents and node counts, got {} and {}",
                extent.len(),
                nx.len()
            )));
        }
        if !(t_final > S::zero()) || !t_final.is_finite() {
            return Err(Error::InvalidGrid(format!("T must be positive, got {t_final}")));
        }
        if nt < 1 {
            return Err(Error::InvalidGrid("nt must be at least 1".into()));
        }
        let mut lo = [S::zero(); 2];
        let mut hi = [S::zero(); 2];
        let mut n = [1usize; 2];
        let mut dx = [S::one(); 2];
        for axis in 0..dim {
            let (a, b) = extent[axis];
            if !(b - a > S::zero()) || !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "degenerate extent [{a}, {b}] on axis {axis}"
                )));
            }
            if nx[axis] < 2 {
                return Err(Error::InvalidGrid(format!(
                    "nx must be at least 2 on axis {axis}, got {}",
                    nx[axis]
                )));
            }
            lo[axis] = a;
            hi[axis] = b;
            n[axis] = nx[axis];
            let cells = match kind {
                DomainKind::Torus => nx[axis],
                DomainKind::Box => nx[axis] - 1,
            };
            dx[axis] = (b - a) / S::from_usize_lossy(cells);
        }
        Ok(Self {
            kind,
            dim,
            lo,
            hi,
            nx: n,
            t_final,
            nt,
            dx,
            dt: t_final / S::from_usize_lossy(nt),
        })
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nx(&self, axis: usize) -> usize {
        self.nx[axis]
    }
    pub fn dx(&self, axis: usize) -> S {
        self.dx[axis]
    }
    pub fn dx_max(&self) -> S {
        (0..self.dim).map(|a| self.dx[a]).fold(S::zero(), S::max)
    }
    pub fn lo(&self, axis: usize) -> S {
        self.lo[axis]
    }
    pub fn hi(&self, axis: usize) -> S {
        self.hi[axis]
    }
    pub fn length(&self, axis: usize) -> S {
        self.hi[axis] - self.lo[axis]
    }
    pub fn dt(&self) -> S {
        self.dt
    }
    pub fn t_final(&self) -> S {
        self.t_final
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn time_levels(&self) -> usize {
        self.nt + 1
    }
    pub fn space_len(&self) -> usize {
        self.nx[0] * self.nx[1]
    }
    pub fn len(&self) -> usize {
        self.time_levels() * self.space_len()
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, n: usize) -> S {
        if n >= self.nt {
            self.t_final
        } else {
            S::from_usize_lossy(n) * self.dt
        }
    }

    pub fn coord(&self, axis: usize, i: usize) -> S {
        let i = S::from_usize_lossy(i);
        match self.kind {
            DomainKind::Torus => self.lo[axis] + (i + S::lit(0.5)) * self.dx[axis],
            DomainKind::Box => self.lo[axis] + i * self.dx[axis],
        }
    }

    #[inline]
    pub fn unflatten(&self, j: usize) -> [usize; 2] {
        [j % self.nx[0], j / self.nx[0]]
    }

    #[inline]
    pub fn flatten(&self, idx: [usize; 2]) -> usize {
        idx[0] + self.nx[0] * idx[1]
    }

    pub fn point(&self, j: usize) -> Point<S> {
        let idx = self.unflatten(j);
        let mut p = [S::zero(); 2];
        for axis in 0..self.dim {
            p[axis] = self.coord(axis, idx[axis]);
        }
        p
    }

    /// Box nodes on the outer edge; the torus has none.
    pub fn is_boundary(&self, j: usize) -> bool {
        if self.kind == DomainKind::Torus {
            return false;
        }
        let idx = self.unflatten(j);
        (0..self.dim).any(|a| idx[a] == 0 || idx[a] + 1 == self.nx[a])
    }

    /// Maps a point into the fundamental cell `[lo, hi)` on the torus; identity on the box.
    pub fn wrap(&self, x: Point<S>) -> Point<S> {
        let mut out = x;
        if self.kind == DomainKind::Torus {
            for axis in 0..self.dim {
                let len = self.length(axis);
                let mut r = (x[axis] - self.lo[axis]) % len;
                if r < S::zero() {
                    r += len;
                }
                if r >= len {
                    r = S::zero();
                }
                out[axis] = self.lo[axis] + r;
            }
        }
        out
    }

    /// Euclidean distance, using the shortest image on the torus.
    pub fn distance(&self, x: &Point<S>, y: &Point<S>) -> S {
        let mut acc = S::zero();
        for axis in 0..self.dim {
            let mut d = (x[axis] - y[axis]).abs();
            if self.kind == DomainKind::Torus {
                let len = self.length(axis);
                d = d % len;
                d = d.min(len - d);
            }
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Nearest spatial node; points outside the box clamp to the edge.
    pub fn nearest_node(&self, x: &Point<S>) -> usize {
        let x = self.wrap(*x);
        let mut idx = [0usize; 2];
        for axis in 0..self.dim {
            let n = self.nx[axis];
            let rel = (x[axis] - self.lo[axis]) / self.dx[axis];
            let i = match self.kind {
                DomainKind::Torus => {
                    let k = rel.floor().to_isize().unwrap_or(0);
                    k.rem_euclid(n as isize) as usize
                }
                DomainKind::Box => {
                    let k = rel.round().to_isize().unwrap_or(0);
                    k.clamp(0, n as isize - 1) as usize
                }
            };
            idx[axis] = i;
        }
        self.flatten(idx)
    }

    /// Most recent time level at or before `t`, restricted to `0..nt`.
    pub fn level_at_or_before(&self, t: S) -> usize {
        let k = (t / self.dt + S::lit(1e-9)).floor().to_isize().unwrap_or(0);
        k.clamp(0, self.nt as isize - 1) as usize
    }

    /// Nearest time level in `0..=nt`.
    pub fn nearest_level(&self, t: S) -> usize {
        let k = (t / self.dt).round().to_isize().unwrap_or(0);
        k.clamp(0, self.nt as isize) as usize
    }

    /// Per-node spatial quadrature weights.
    pub fn space_weights(&self) -> Vec<S> {
        let mut w1: [Vec<S>; 2] = [vec![S::one()], vec![S::one()]];
        for axis in 0..self.dim {
            let n = self.nx[axis];
            let mut w = vec![self.dx[axis]; n];
            if self.kind == DomainKind::Box {
                w[0] = self.dx[axis] * S::lit(0.5);
                w[n - 1] = self.dx[axis] * S::lit(0.5);
            }
            w1[axis] = w;
        }
        (0..self.space_len())
            .map(|j| {
                let idx = self.unflatten(j);
                let mut w = w1[0][idx[0]];
                if self.dim == 2 {
                    w *= w1[1][idx[1]];
                }
                w
            })
            .collect()
    }

    /// Trapezoid weights over the `nt + 1` time levels.
    pub fn time_weights(&self) -> Vec<S> {
        let mut w = vec![self.dt; self.time_levels()];
        w[0] = self.dt * S::lit(0.5);
        w[self.nt] = self.dt * S::lit(0.5);
        w
    }

    /// Space-time measure of the cylinder.
    pub fn measure(&self) -> S {
        let mut m = self.t_final;
        for axis in 0..self.dim {
            m *= self.length(axis);
        }
        m
    }

    /// Forward difference `(u[i+1] - u[i]) / dx` along `axis`.
    ///
    /// At the upper box edge the backward difference is returned instead.
    #[inline]
    pub fn diff_forward(&self, level: &[S], j: usize, axis: usize) -> S {
        match self.neighbor(j, axis, 1) {
            Some(k) => (level[k] - level[j]) / self.dx[axis],
            None => self.diff_backward(level, j, axis),
        }
    }

    /// Backward difference `(u[i] - u[i-1]) / dx`; forward at the lower box edge.
    #[inline]
    pub fn diff_backward(&self, level: &[S], j: usize, axis: usize) -> S {
        match self.neighbor(j, axis, -1) {
            Some(k) => (level[j] - level[k]) / self.dx[axis],
            None => match self.neighbor(j, axis, 1) {
                Some(k) => (level[k] - level[j]) / self.dx[axis],
                None => S::zero(),
            },
        }
    }

    /// Central difference; one-sided at box edges.
    #[inline]
    pub fn diff_central(&self, level: &[S], j: usize, axis: usize) -> S {
        match (self.neighbor(j, axis, -1), self.neighbor(j, axis, 1)) {
            (Some(l), Some(r)) => (level[r] - level[l]) / (S::lit(2.0) * self.dx[axis]),
            (None, Some(r)) => (level[r] - level[j]) / self.dx[axis],
            (Some(l), None) => (level[j] - level[l]) / self.dx[axis],
            (None, None) => S::zero(),
        }
    }

    /// Neighbor of node `j` one step along `axis`, wrapping on the torus.
    #[inline]
    pub fn neighbor(&self, j: usize, axis: usize, step: isize) -> Option<usize> {
        let mut idx = self.unflatten(j);
        let n = self.nx[axis] as isize;
        let k = idx[axis] as isize + step;
        let k = match self.kind {
            DomainKind::Torus => k.rem_euclid(n),
            DomainKind::Box if k < 0 || k >= n => return None,
            DomainKind::Box => k,
        };
        idx[axis] = k as usize;
        Some(self.flatten(idx))
    }
}

/// Scalar samples on every space-time node, stored level by level.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<S> {
    grid: Grid<S>,
    values: Vec<S>,
}

impl<S: Real> Field<S> {
    pub fn zeros(grid: &Grid<S>) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![S::zero(); grid.len()],
        }
    }

    pub fn constant(grid: &Grid<S>, c: S) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid<S>, f: impl Fn(S, &Point<S>) -> S) -> Self {
        let ns = grid.space_len();
        let mut values = Vec::with_capacity(grid.len());
        for n in 0..grid.time_levels() {
            let t = grid.time(n);
            for j in 0..ns {
                values.push(f(t, &grid.point(j)));
            }
        }
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_values(grid: &Grid<S>, values: Vec<S>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "field needs {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_values_unchecked(grid: &Grid<S>, values: Vec<S>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }
    pub fn values(&self) -> &[S] {
        &self.values
    }
    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn level(&self, n: usize) -> &[S] {
        let ns = self.grid.space_len();
        &self.values[n * ns..(n + 1) * ns]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [S] {
        let ns = self.grid.space_len();
        &mut self.values[n * ns..(n + 1) * ns]
    }

    #[inline]
    pub fn at(&self, n: usize, j: usize) -> S {
        self.values[n * self.grid.space_len() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Field<S>, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sup_norm(&self) -> S {
        self.values.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_value(&self) -> S {
        self.values.iter().copied().fold(S::neg_infinity(), S::max)
    }

    pub fn min_value(&self) -> S {
        self.values.iter().copied().fold(S::infinity(), S::min)
    }

    /// `sup |self - other|`.
    pub fn sup_distance(&self, other: &Field<S>) -> Result<S> {
        self.check_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Linear interpolation in space at level `n`, clamped to the box.
    pub fn interpolate_level(&self, n: usize, x: &Point<S>) -> S {
        let g = &self.grid;
        let level = self.level(n);
        let x = g.wrap(*x);
        let mut base = [0usize; 2];
        let mut frac = [S::zero(); 2];
        let mut upper = [0usize; 2];
        for axis in 0..g.dim() {
            let nx = g.nx(axis);
            let offset = match g.kind() {
                DomainKind::Torus => S::lit(0.5),
                DomainKind::Box => S::zero(),
            };
            let rel = (x[axis] - g.lo(axis)) / g.dx(axis) - offset;
            match g.kind() {
                DomainKind::Torus => {
                    let k = rel.floor();
                    let i = k.to_isize().unwrap_or(0).rem_euclid(nx as isize) as usize;
                    base[axis] = i;
                    upper[axis] = (i + 1) % nx;
                    frac[axis] = rel - k;
                }
                DomainKind::Box => {
                    let last = S::from_usize_lossy(nx - 1);
                    let r = rel.max(S::zero()).min(last);
                    let i = r.floor().to_usize().unwrap_or(0).min(nx - 2);
                    base[axis] = i;
                    upper[axis] = i + 1;
                    frac[axis] = r - S::from_usize_lossy(i);
                }
            }
        }
        if g.dim() == 1 {
            let a = level[base[0]];
            let b = level[upper[0]];
            a + (b - a) * frac[0]
        } else {
            let v = |i0: usize, i1: usize| level[g.flatten([i0, i1])];
            let (fx, fy) = (frac[0], frac[1]);
            let bottom = v(base[0], base[1]) * (S::one() - fx) + v(upper[0], base[1]) * fx;
            let top = v(base[0], upper[1]) * (S::one() - fx) + v(upper[0], upper[1]) * fx;
            bottom * (S::one() - fy) + top * fy
        }
    }

    fn check_same_shape(&self, other: &Field<S>) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "fields have {} and {} values",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(())
    }
}

/// One scalar field per spatial axis.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<S> {
    components: Vec<Field<S>>,
}

impl<S: Real> VectorField<S> {
    pub fn new(components: Vec<Field<S>>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::ShapeMismatch("vector field needs a component".into()))?;
        if components.len() != first.grid().dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} components for a {}-d grid",
                components.len(),
                first.grid().dim()
            )));
        }
        if components.iter().any(|c| c.values().len() != first.values().len()) {
            return Err(Error::ShapeMismatch("component sizes differ".into()));
        }
        Ok(Self { components })
    }

    pub fn component(&self, axis: usize) -> &Field<S> {
        &self.components[axis]
    }

    pub fn arity(&self) -> usize {
        self.components.len()
    }

    pub fn grid(&self) -> &Grid<S> {
        self.components[0].grid()
    }

    #[inline]
    pub fn at(&self, n: usize, j: usize) -> Point<S> {
        let mut p = [S::zero(); 2];
        for (axis, c) in self.components.iter().enumerate() {
            p[axis] = c.at(n, j);
        }
        p
    }

    pub fn sup_norm(&self) -> S {
        self.components
            .iter()
            .fold(S::zero(), |m, c| m.max(c.sup_norm()))
    }
}

pub type BoundaryFn<S> = Arc<dyn Fn(S, &Point<S>) -> S + Send + Sync>;

#[derive(Clone)]
pub enum BoundaryCondition<S> {
    Periodic,
    /// Values imposed on the outer ring of box nodes.
    DirichletExact(BoundaryFn<S>),
}

impl<S> fmt::Debug for BoundaryCondition<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryCondition::Periodic => f.write_str("Periodic"),
            BoundaryCondition::DirichletExact(_) => f.write_str("DirichletExact(..)"),
        }
    }
}

impl<S: Real> BoundaryCondition<S> {
    pub fn dirichlet(g: impl Fn(S, &Point<S>) -> S + Send + Sync + 'static) -> Self {
        BoundaryCondition::DirichletExact(Arc::new(g))
    }

    pub fn zero_dirichlet() -> Self {
        Self::dirichlet(|_, _| S::zero())
    }

    /// The natural condition for a domain: periodic on the torus, zero on the box.
    pub fn natural(grid: &Grid<S>) -> Self {
        match grid.kind() {
            DomainKind::Torus => BoundaryCondition::Periodic,
            DomainKind::Box => Self::zero_dirichlet(),
        }
    }

    pub fn validate(&self, grid: &Grid<S>) -> Result<()> {
        match (self, grid.kind()) {
            (BoundaryCondition::Periodic, DomainKind::Torus)
            | (BoundaryCondition::DirichletExact(_), DomainKind::Box) => Ok(()),
            (BoundaryCondition::Periodic, DomainKind::Box) => Err(Error::InvalidArgument(
                "periodic boundary requires a torus".into(),
            )),
            (BoundaryCondition::DirichletExact(_), DomainKind::Torus) => Err(
                Error::InvalidArgument("dirichlet boundary requires a box".into()),
            ),
        }
    }

    pub fn value(&self, t: S, x: &Point<S>) -> Option<S> {
        match self {
            BoundaryCondition::Periodic => None,
            BoundaryCondition::DirichletExact(g) => Some(g(t, x)),
        }
    }
}

/// Exponent for [`lp_norm`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub fn parse(p: f64) -> Result<Self> {
        if p.is_infinite() && p > 0.0 {
            Ok(Exponent::Infinity)
        } else if p >= 1.0 {
            Ok(Exponent::Finite(p))
        } else {
            Err(Error::InvalidArgument(format!("L^p exponent must be >= 1, got {p}")))
        }
    }
}

/// Discrete `L^p(Q_T)` norm.
pub fn lp_norm<S: Real>(field: &Field<S>, p: f64) -> Result<S> {
    lp_norm_where(field, p, |_, _| true)
}

/// Discrete `L^p` norm restricted to nodes for which `keep(n, j)` holds.
pub fn lp_norm_where<S: Real>(
    field: &Field<S>,
    p: f64,
    keep: impl Fn(usize, usize) -> bool,
) -> Result<S> {
    let exponent = Exponent::parse(p)?;
    let grid = field.grid();
    let ns = grid.space_len();
    match exponent {
        Exponent::Infinity => {
            let mut m = S::zero();
            for n in 0..grid.time_levels() {
                for j in 0..ns {
                    if keep(n, j) {
                        m = m.max(field.at(n, j).abs());
                    }
                }
            }
            Ok(m)
        }
        Exponent::Finite(p) => {
            let ws = grid.space_weights();
            let wt = grid.time_weights();
            let ps = S::lit(p);
            let mut terms = Vec::with_capacity(field.values().len());
            for n in 0..grid.time_levels() {
                for j in 0..ns {
                    if keep(n, j) {
                        let v = field.at(n, j).abs();
                        let vp = if p == 1.0 {
                            v
                        } else if p == 2.0 {
                            v * v
                        } else {
                            v.powf(ps)
                        };
                        terms.push(wt[n] * ws[j] * vp);
                    }
                }
            }
            let total = pairwise_sum(&terms);
            Ok(if p == 1.0 { total } else { total.powf(S::one() / ps) })
        }
    }
}

/// Finite-difference scheme for [`spatial_gradient`].
#[derive(Clone, Copy, Debug)]
pub enum GradientScheme<'a, S> {
    Central,
    /// One-sided differences chosen by the sign of the given drift:
    /// forward where the drift component is nonnegative, backward otherwise.
    Upwind(&'a VectorField<S>),
}

pub fn spatial_gradient<S: Real>(
    field: &Field<S>,
    scheme: GradientScheme<'_, S>,
) -> Result<VectorField<S>> {
    let grid = field.grid();
    if let GradientScheme::Upwind(sign) = scheme {
        if sign.arity() != grid.dim() || sign.component(0).values().len() != grid.len() {
            return Err(Error::ShapeMismatch(
                "upwind sign field does not match the grid".into(),
            ));
        }
    }
    let ns = grid.space_len();
    let mut comps = Vec::with_capacity(grid.dim());
    for axis in 0..grid.dim() {
        let mut out = Vec::with_capacity(grid.len());
        for n in 0..grid.time_levels() {
            let level = field.level(n);
            for j in 0..ns {
                let d = match scheme {
                    GradientScheme::Central => grid.diff_central(level, j, axis),
                    GradientScheme::Upwind(sign) => {
                        if sign.component(axis).at(n, j) >= S::zero() {
                            grid.diff_forward(level, j, axis)
                        } else {
                            grid.diff_backward(level, j, axis)
                        }
                    }
                };
                out.push(d);
            }
        }
        comps.push(Field::from_values_unchecked(grid, out));
    }
    VectorField::new(comps)
}

/// Hölder seminorm `max |f(x) - f(y)| / |x - y|^alpha` over all node pairs of one level.
pub fn holder_seminorm<S: Real>(slice: &[S], alpha: S, grid: &Grid<S>) -> Result<S> {
    if !(alpha > S::zero() && alpha <= S::one()) {
        return Err(Error::InvalidArgument(format!(
            "Hölder exponent must lie in (0, 1], got {alpha}"
        )));
    }
    if slice.len() != grid.space_len() {
        return Err(Error::ShapeMismatch(format!(
            "slice has {} values, grid level has {}",
            slice.len(),
            grid.space_len()
        )));
    }
    let points: Vec<Point<S>> = (0..slice.len()).map(|j| grid.point(j)).collect();
    let mut best = S::zero();
    for i in 0..slice.len() {
        for k in (i + 1)..slice.len() {
            let d = grid.distance(&points[i], &points[k]);
            if d > S::zero() {
                best = best.max((slice[i] - slice[k]).abs() / d.powf(alpha));
            }
        }
    }
    Ok(best)
}
