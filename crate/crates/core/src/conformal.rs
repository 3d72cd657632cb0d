//! Conformal geometry of `g = u^{4/(n−2)} g₀` on a prescribed background.
//!
//! The background is a scalar field `S₀` paired with the flat lattice
//! Laplacian, so `L = S₀ − c_n Δ₀` is defined directly from data. Any sign
//! pattern of `S₀` is allowed, including constant negative curvature which no
//! genuine flat-torus conformal factor could produce.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fzoo::FSpec;
use crate::grid::{self, GridSpec, ScalarField};

/// Exponents attached to the ambient dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    pub n: usize,
    /// `(n+2)/(n−2)`
    pub beta: f64,
    /// `4(n−1)/(n−2)`
    pub c_n: f64,
    /// `2n/(n−2)`, volume density exponent
    pub vol_exp: f64,
    /// `(n−2)/4`, factor in front of the u-equation
    pub flow_factor: f64,
    /// `4/(n−2)`, metric exponent
    pub metric_exp: f64,
}

impl Constants {
    pub fn new(n: usize) -> Self {
        let nf = n as f64;
        Self {
            n,
            beta: (nf + 2.0) / (nf - 2.0),
            c_n: 4.0 * (nf - 1.0) / (nf - 2.0),
            vol_exp: 2.0 * nf / (nf - 2.0),
            flow_factor: (nf - 2.0) / 4.0,
            metric_exp: 4.0 / (nf - 2.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvatureCase {
    Negative,
    Flat,
    Positive,
    Mixed,
}

#[derive(Clone, Debug)]
pub struct Background {
    s0: ScalarField,
    constants: Constants,
    case: CurvatureCase,
    s0_min: f64,
    s0_max: f64,
}

impl Background {
    pub fn new(s0: ScalarField) -> Self {
        let s0_min = grid::field_min(&s0);
        let s0_max = grid::field_max(&s0);
        let case = if s0_max < 0.0 {
            CurvatureCase::Negative
        } else if s0_min == 0.0 && s0_max == 0.0 {
            CurvatureCase::Flat
        } else if s0_min > 0.0 {
            CurvatureCase::Positive
        } else {
            CurvatureCase::Mixed
        };
        let constants = Constants::new(s0.grid().ambient_n());
        Self { s0, constants, case, s0_min, s0_max }
    }

    pub fn constant(grid: Arc<GridSpec>, value: f64) -> Self {
        Self::new(ScalarField::constant(grid, value))
    }

    pub fn s0(&self) -> &ScalarField {
        &self.s0
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        self.s0.grid()
    }

    pub fn n(&self) -> usize {
        self.constants.n
    }

    pub fn constants(&self) -> Constants {
        self.constants
    }

    pub fn case(&self) -> CurvatureCase {
        self.case
    }

    pub fn s0_min(&self) -> f64 {
        self.s0_min
    }

    pub fn s0_max(&self) -> f64 {
        self.s0_max
    }
}

/// Positive conformal factor at time `t`.
#[derive(Clone, Debug)]
pub struct ConformalState {
    pub u: ScalarField,
    pub t: f64,
}

impl ConformalState {
    pub fn new(u: ScalarField, t: f64) -> Result<Self> {
        if !u.is_finite() {
            let node = u.values().iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite { node });
        }
        grid::ensure_positive(&u)?;
        Ok(Self { u, t })
    }
}

/// `L(u) = S₀ u − c_n Δ₀ u`.
pub fn conformal_laplacian(bg: &Background, u: &ScalarField) -> Result<ScalarField> {
    bg.s0().ensure_same_grid(u)?;
    let lap = grid::laplacian0(u);
    let c_n = bg.constants.c_n;
    let values = bg
        .s0()
        .values()
        .iter()
        .zip(u.values())
        .zip(lap.values())
        .map(|((&s, &w), &d)| s * w - c_n * d)
        .collect();
    Ok(ScalarField::from_raw(u.grid().clone(), values))
}

/// `S = u^{−β} L(u)`.
pub fn scalar_curvature(bg: &Background, u: &ScalarField) -> Result<ScalarField> {
    grid::ensure_positive(u)?;
    let lu = conformal_laplacian(bg, u)?;
    let beta = bg.constants.beta;
    lu.zip_map(u, |l, w| l * w.powf(-beta))
}

/// `Δ_g ξ = u^{−4/(n−2)} (Δ₀ξ + (2/u)⟨∇u, ∇ξ⟩)`.
pub fn metric_laplacian(bg: &Background, u: &ScalarField, xi: &ScalarField) -> Result<ScalarField> {
    grid::ensure_positive(u)?;
    bg.s0().ensure_same_grid(u)?;
    let cross = grid::grad_inner(u, xi)?;
    let lap = grid::laplacian0(xi);
    let m = bg.constants.metric_exp;
    let values = u
        .values()
        .iter()
        .zip(lap.values())
        .zip(cross.values())
        .map(|((&w, &d), &g)| w.powf(-m) * (d + 2.0 * g / w))
        .collect();
    Ok(ScalarField::from_raw(u.grid().clone(), values))
}

pub fn volume(u: &ScalarField) -> Result<f64> {
    grid::integrate_g(&ScalarField::constant(u.grid().clone(), 1.0), u)
}

/// Applies `f` to every node of `s`, failing on the first value outside the domain.
pub fn apply_f(f: &FSpec, s: &ScalarField) -> Result<ScalarField> {
    for &v in s.values() {
        f.ensure_in_domain(v)?;
    }
    Ok(s.map(|v| f.f(v)))
}

/// `A = Vol_g^{−1} ∫ f(S) dVol_g`.
pub fn average_f(bg: &Background, u: &ScalarField, f: &FSpec) -> Result<f64> {
    let s = scalar_curvature(bg, u)?;
    let fs = apply_f(f, &s)?;
    Ok(grid::integrate_g(&fs, u)? / volume(u)?)
}

/// Average scalar curvature `σ`.
pub fn sigma(bg: &Background, u: &ScalarField) -> Result<f64> {
    let s = scalar_curvature(bg, u)?;
    Ok(grid::integrate_g(&s, u)? / volume(u)?)
}

/// `Vol_g^{(2−n)/n} ∫ S dVol_g`.
pub fn einstein_hilbert(bg: &Background, u: &ScalarField) -> Result<f64> {
    let s = scalar_curvature(bg, u)?;
    let n = bg.n() as f64;
    Ok(volume(u)?.powf((2.0 - n) / n) * grid::integrate_g(&s, u)?)
}

/// Curvature quantities of one state, computed once and shared by the
/// integrator and the diagnostics.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub s: ScalarField,
    pub fs: ScalarField,
    pub vol: f64,
    pub a: f64,
}

pub fn evaluate(bg: &Background, u: &ScalarField, f: &FSpec) -> Result<Evaluation> {
    let s = scalar_curvature(bg, u)?;
    let fs = apply_f(f, &s)?;
    let vol = volume(u)?;
    let a = grid::integrate_g(&fs, u)? / vol;
    Ok(Evaluation { s, fs, vol, a })
}
