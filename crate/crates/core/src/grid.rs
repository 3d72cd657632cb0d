//! Periodic uniform lattices, nodal scalar fields and the discrete operators on them.
//!
//! The Laplacian is the standard second-order centered stencil. Gradient
//! products are built from the forward/backward difference pair so that
//! `Σ a·Δb = −Σ ⟨∇a, ∇b⟩` holds exactly (up to rounding) on every grid.
//! Quadrature uses uniform weights normalized so that the background volume
//! is one.
//!
//! Fields vary only along the `active_dims` axes. The ambient dimension `n`
//! enters the conformal exponents but never the stencils; suppressed axes
//! contribute a factor one to every integral.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Smallest admissible number of nodes along an active axis.
pub const MIN_POINTS: usize = 8;

#[derive(Clone)]
pub struct GridSpec {
    ambient_n: usize,
    points: Vec<usize>,
    periods: Vec<f64>,
    len: usize,
    strides: Vec<usize>,
    // per axis neighbour tables, periodic wrap-around
    plus: Vec<Vec<usize>>,
    minus: Vec<Vec<usize>>,
}

impl GridSpec {
    pub fn new(ambient_n: usize, points: Vec<usize>, periods: Vec<f64>) -> Result<Arc<Self>> {
        let dims = points.len();
        if ambient_n < 3 {
            return Err(Error::InvalidGrid(format!(
                "ambient dimension must be at least 3, got {ambient_n}"
            )));
        }
        if !(1..=3).contains(&dims) {
            return Err(Error::InvalidGrid(format!(
                "active dimensions must be 1, 2 or 3, got {dims}"
            )));
        }
        if dims > ambient_n {
            return Err(Error::InvalidGrid(format!(
                "{dims} active axes exceed ambient dimension {ambient_n}"
            )));
        }
        if periods.len() != dims {
            return Err(Error::InvalidGrid(format!(
                "{} periods given for {dims} axes",
                periods.len()
            )));
        }
        if let Some(&p) = points.iter().find(|&&p| p < MIN_POINTS) {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_POINTS} points per axis, got {p}"
            )));
        }
        if let Some(&l) = periods.iter().find(|&&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::InvalidGrid(format!("period must be positive, got {l}")));
        }

        let len = points.iter().product();
        let mut strides = vec![1; dims];
        for axis in (0..dims.saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * points[axis + 1];
        }
        let mut plus = Vec::with_capacity(dims);
        let mut minus = Vec::with_capacity(dims);
        for axis in 0..dims {
            let (n, s) = (points[axis], strides[axis]);
            let mut p = Vec::with_capacity(len);
            let mut m = Vec::with_capacity(len);
            for idx in 0..len {
                let i = (idx / s) % n;
                p.push(if i + 1 < n { idx + s } else { idx - (n - 1) * s });
                m.push(if i > 0 { idx - s } else { idx + (n - 1) * s });
            }
            plus.push(p);
            minus.push(m);
        }

        Ok(Arc::new(Self {
            ambient_n,
            points,
            periods,
            len,
            strides,
            plus,
            minus,
        }))
    }

    /// One-dimensional grid of `points` nodes over a period of 2π.
    pub fn periodic_1d(ambient_n: usize, points: usize) -> Result<Arc<Self>> {
        Self::new(ambient_n, vec![points], vec![std::f64::consts::TAU])
    }

    pub fn ambient_n(&self) -> usize {
        self.ambient_n
    }

    pub fn active_dims(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.periods[axis] / self.points[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.active_dims())
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Quadrature weight of a single node; the weights sum to one.
    pub fn node_weight(&self) -> f64 {
        1.0 / self.len as f64
    }

    /// Coordinate of `node` along `axis`, in `[0, period)`.
    pub fn coordinate(&self, node: usize, axis: usize) -> f64 {
        let i = (node / self.strides[axis]) % self.points[axis];
        i as f64 * self.spacing(axis)
    }

    pub(crate) fn plus(&self, axis: usize) -> &[usize] {
        &self.plus[axis]
    }

    pub(crate) fn minus(&self, axis: usize) -> &[usize] {
        &self.minus[axis]
    }
}

impl PartialEq for GridSpec {
    fn eq(&self, other: &Self) -> bool {
        self.ambient_n == other.ambient_n
            && self.points == other.points
            && self.periods == other.periods
    }
}

impl fmt::Debug for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridSpec")
            .field("ambient_n", &self.ambient_n)
            .field("points", &self.points)
            .field("periods", &self.periods)
            .finish()
    }
}

/// Real values at every node of a grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<GridSpec>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<GridSpec>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::FieldLength {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node });
        }
        Ok(Self { grid, values })
    }

    /// Builds a field without the finiteness scan. Lengths must match.
    pub(crate) fn from_raw(grid: Arc<GridSpec>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Arc<GridSpec>, value: f64) -> Self {
        let values = vec![value; grid.len()];
        Self { grid, values }
    }

    /// Evaluates `f` at the coordinates of every node. The closure sees the
    /// coordinates of the active axes only.
    pub fn from_fn(grid: Arc<GridSpec>, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        let dims = grid.active_dims();
        let mut coords = vec![0.0; dims];
        let values = (0..grid.len())
            .map(|node| {
                for (axis, c) in coords.iter_mut().enumerate() {
                    *c = grid.coordinate(node, axis);
                }
                f(&coords)
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub(crate) fn ensure_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        Self::from_raw(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.ensure_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_raw(self.grid.clone(), values))
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    /// `self + c·other`
    pub fn axpy(&self, c: f64, other: &ScalarField) -> Result<ScalarField> {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest pointwise difference to `other`.
    pub fn sup_distance(&self, other: &ScalarField) -> Result<f64> {
        self.ensure_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

/// Discrete Laplacian of the flat background metric (negative semi-definite).
pub fn laplacian0(field: &ScalarField) -> ScalarField {
    let grid = field.grid();
    let v = field.values();
    let mut out = vec![0.0; v.len()];
    for axis in 0..grid.active_dims() {
        let inv_h2 = 1.0 / grid.spacing(axis).powi(2);
        let (p, m) = (grid.plus(axis), grid.minus(axis));
        for (i, o) in out.iter_mut().enumerate() {
            *o += (v[p[i]] - 2.0 * v[i] + v[m[i]]) * inv_h2;
        }
    }
    ScalarField::from_raw(grid.clone(), out)
}

/// Pointwise `⟨∇a, ∇b⟩` of the flat background metric, the average of the
/// forward and backward difference products along each axis.
pub fn grad_inner(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
    a.ensure_same_grid(b)?;
    let grid = a.grid();
    let (x, y) = (a.values(), b.values());
    let mut out = vec![0.0; x.len()];
    for axis in 0..grid.active_dims() {
        let inv_h2 = 1.0 / grid.spacing(axis).powi(2);
        let (p, m) = (grid.plus(axis), grid.minus(axis));
        for (i, o) in out.iter_mut().enumerate() {
            let fwd = (x[p[i]] - x[i]) * (y[p[i]] - y[i]);
            let bwd = (x[i] - x[m[i]]) * (y[i] - y[m[i]]);
            *o += 0.5 * (fwd + bwd) * inv_h2;
        }
    }
    Ok(ScalarField::from_raw(grid.clone(), out))
}

/// Edge-summed Dirichlet form `∫ w⊗w ⟨∇a, ∇b⟩ dVol₀`.
///
/// Every lattice edge `(i, j)` contributes `w_i w_j (a_j − a_i)(b_j − b_i) / h²`.
/// With `w ≡ 1` this equals `integrate0(grad_inner(a, b))`, and it is the exact
/// discrete counterpart of `−∫ a Δ₀(w b)`-type integrations by parts used by the
/// evolution identities.
pub fn dirichlet_form(a: &ScalarField, b: &ScalarField, w: &ScalarField) -> Result<f64> {
    a.ensure_same_grid(b)?;
    a.ensure_same_grid(w)?;
    let grid = a.grid();
    let (x, y, z) = (a.values(), b.values(), w.values());
    let mut total = 0.0;
    for axis in 0..grid.active_dims() {
        let inv_h2 = 1.0 / grid.spacing(axis).powi(2);
        let p = grid.plus(axis);
        let mut sum = 0.0;
        for i in 0..x.len() {
            let j = p[i];
            sum += z[i] * z[j] * (x[j] - x[i]) * (y[j] - y[i]);
        }
        total += sum * inv_h2;
    }
    Ok(total * grid.node_weight())
}

/// `∫ field dVol₀` with `Vol₀ = 1`.
pub fn integrate0(field: &ScalarField) -> f64 {
    field.values().iter().sum::<f64>() * field.grid().node_weight()
}

/// Exponent `2n/(n−2)` of the conformal volume density.
pub fn volume_exponent(n: usize) -> f64 {
    2.0 * n as f64 / (n as f64 - 2.0)
}

pub(crate) fn ensure_positive(u: &ScalarField) -> Result<()> {
    match u.values().iter().position(|&v| !(v > 0.0)) {
        Some(node) => Err(Error::NotPositive {
            node,
            value: u.values()[node],
        }),
        None => Ok(()),
    }
}

/// `∫ field dVol_g` for `g = u^{4/(n−2)} g₀`, i.e. `∫ field·u^{2n/(n−2)} dVol₀`.
pub fn integrate_g(field: &ScalarField, u: &ScalarField) -> Result<f64> {
    field.ensure_same_grid(u)?;
    ensure_positive(u)?;
    let q = volume_exponent(u.grid().ambient_n());
    let sum: f64 = field
        .values()
        .iter()
        .zip(u.values())
        .map(|(&f, &w)| f * w.powf(q))
        .sum();
    Ok(sum * u.grid().node_weight())
}

/// `(∫ |field|^p dVol_g)^{1/p}`.
pub fn lp_norm_g(field: &ScalarField, p: f64, u: &ScalarField) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("L^p norm needs p >= 1, got {p}")));
    }
    let powered = field.map(|v| v.abs().powf(p));
    Ok(integrate_g(&powered, u)?.powf(1.0 / p))
}

pub fn field_min(field: &ScalarField) -> f64 {
    field.values().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn field_max(field: &ScalarField) -> f64 {
    field.values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
