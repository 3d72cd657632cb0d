//! Measurable checks of the bounds and evolution identities satisfied by the flow.
//!
//! Each check is a pure function of a trajectory, its background and `f`
//! (plus the run configuration for checks that launch their own runs). All
//! checks sit behind the [`Check`] trait and are looked up by id in a
//! [`CheckRegistry`]. A check never errors: problems are reported as
//! `fail`, `inconclusive` or `not_applicable`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conformal::{self, Background, CurvatureCase};
use crate::error::Result;
use crate::flow::{self, FlowKind, RunConfig, Termination, Trajectory};
use crate::fzoo::FSpec;
use crate::grid::{self, ScalarField};

/// Default slack on maximum-principle inequalities.
pub const DEFAULT_ETA: f64 = 1e-6;
/// Relative tolerance of the evolution identities.
pub const IDENTITY_TOL: f64 = 1e-3;
/// Fits whose RMS log-residual exceeds this are inconclusive.
pub const FIT_RESIDUAL_LIMIT: f64 = 0.1;
/// Fraction of the run discarded as initial transient before fitting.
pub const FIT_SKIP: f64 = 0.1;
pub const RESCALE_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
    NotApplicable,
}

/// Portion of the trajectory a report looked at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub records: usize,
    pub snapshots: usize,
}

impl Segment {
    fn of(traj: &Trajectory) -> Self {
        Self {
            t_start: traj.records.first().map_or(0.0, |r| r.t),
            t_end: traj.final_time(),
            records: traj.records.len(),
            snapshots: traj.snapshots.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub id: String,
    pub status: Status,
    pub measured: BTreeMap<String, f64>,
    pub predicted: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub segment: Segment,
}

impl TheoremReport {
    fn new(id: &str, traj: &Trajectory) -> Self {
        Self {
            id: id.to_string(),
            status: Status::Pass,
            measured: BTreeMap::new(),
            predicted: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            notes: Vec::new(),
            segment: Segment::of(traj),
        }
    }

    fn not_applicable(mut self, why: impl Into<String>) -> Self {
        self.status = Status::NotApplicable;
        self.notes.push(why.into());
        self
    }

    fn measure(&mut self, key: &str, v: f64) {
        self.measured.insert(key.to_string(), v);
    }

    fn predict(&mut self, key: &str, v: f64) {
        self.predicted.insert(key.to_string(), v);
    }

    fn tolerance(&mut self, key: &str, v: f64) {
        self.tolerances.insert(key.to_string(), v);
    }

    /// Records a sub-check; any failure fails the report.
    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.status = Status::Fail;
            self.notes.push(format!("violated: {}", what.into()));
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// True for a definite failure; inconclusive and inapplicable reports are not failures.
    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

/// Inputs shared by all checks.
#[derive(Clone, Copy)]
pub struct CheckContext<'a> {
    pub traj: &'a Trajectory,
    pub bg: &'a Background,
    pub f: &'a FSpec,
    pub config: Option<&'a RunConfig>,
    /// Slack for maximum-principle inequalities.
    pub eta: f64,
}

impl<'a> CheckContext<'a> {
    pub fn new(traj: &'a Trajectory, bg: &'a Background, f: &'a FSpec) -> Self {
        Self { traj, bg, f, config: None, eta: DEFAULT_ETA }
    }

    pub fn with_config(mut self, config: &'a RunConfig) -> Self {
        self.config = Some(config);
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }
}

pub trait Check: Send + Sync {
    fn id(&self) -> &'static str;
    fn run(&self, ctx: &CheckContext<'_>) -> TheoremReport;
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

/// Initial curvature extrema, i.e. those of the curvature of `u₀^{4/(n−2)} g₀`.
fn initial_range(traj: &Trajectory) -> Option<(f64, f64)> {
    traj.records.first().map(|r| (r.s_min, r.s_max))
}

/// `(min, max)` of `−f'` sampled on `[lo, hi]`.
fn slope_extremes(f: &FSpec, lo: f64, hi: f64, samples: usize) -> (f64, f64) {
    let samples = samples.max(2);
    let step = (hi - lo) / (samples - 1) as f64;
    (0..samples)
        .map(|k| {
            let x = if k + 1 == samples { hi } else { lo + k as f64 * step };
            -f.fp(x)
        })
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

/// Constants of the negative-case decay estimate on `[s_lo, s_hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativePrediction {
    /// `c = −max f'` on the interval
    pub c: f64,
    /// `B = −c · S_max(0)`
    pub b: f64,
    /// `C = max |f'| · (S_max(0) − S_min(0))`
    pub c_big: f64,
    /// `(n−2) C / (4B)`, log-width of the u band
    pub band: f64,
    /// `(n−2)/4 · C · exp((n−2)C/(4B))`, prefactor of the `∂_t u` envelope
    pub c_tilde: f64,
}

pub fn negative_prediction(f: &FSpec, n: usize, s_lo: f64, s_hi: f64) -> NegativePrediction {
    let (c, fp_max) = slope_extremes(f, s_lo, s_hi, 10_001);
    let b = -c * s_hi;
    let c_big = fp_max * (s_hi - s_lo);
    let k = (n as f64 - 2.0) / 4.0;
    let band = if c_big == 0.0 { 0.0 } else { k * c_big / b };
    NegativePrediction { c, b, c_big, band, c_tilde: k * c_big * band.exp() }
}

/// Least-squares fit `log y ≈ log C − B t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c_fit: f64,
    pub b_fit: f64,
    pub window: (f64, f64),
    /// RMS residual of the log fit.
    pub residual: f64,
    pub points: usize,
}

/// Fits `‖f(S) − A‖_∞` over the run after dropping the first `skip` fraction
/// of its duration. Values at rounding level are ignored.
pub fn fit_decay(traj: &Trajectory, skip: f64) -> Option<DecayFit> {
    let t_end = traj.final_time();
    let t0 = skip * t_end;
    let pts: Vec<(f64, f64)> = traj
        .records
        .iter()
        .filter(|r| r.t >= t0 && r.fsa_sup > 1e-13)
        .map(|r| (r.t, r.fsa_sup.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |(a, b), &(t, y)| (a + t, b + y));
    let (mt, my) = (st / m, sy / m);
    let (sxx, sxy) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), &(t, y)| (a + (t - mt).powi(2), b + (t - mt) * (y - my)));
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let residual = (pts
        .iter()
        .map(|&(t, y)| (y - intercept - slope * t).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Some(DecayFit {
        c_fit: intercept.exp(),
        b_fit: -slope,
        window: (pts[0].0, pts[pts.len() - 1].0),
        residual,
        points: pts.len(),
    })
}

fn is_negative_case(traj: &Trajectory) -> bool {
    traj.flow == FlowKind::Normalized && initial_range(traj).is_some_and(|(_, hi)| hi < 0.0)
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

/// Running-extremum bullets and the negative-case containment.
pub fn check_minmax_principle(ctx: &CheckContext<'_>) -> TheoremReport {
    let traj = ctx.traj;
    let mut rep = TheoremReport::new("minmax", traj);
    if traj.flow != FlowKind::Normalized {
        return rep.not_applicable("stated for the normalized flow");
    }
    let Some((lo0, hi0)) = initial_range(traj) else {
        return rep.not_applicable("empty trajectory");
    };
    let eta = ctx.eta;
    rep.tolerance("eta", eta);

    let (mut max_rise, mut min_drop) = (0.0f64, 0.0f64);
    for w in traj.records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.s_max <= 0.0 {
            max_rise = max_rise.max(b.s_max - a.s_max);
        }
        if a.s_min <= 0.0 {
            min_drop = min_drop.max(a.s_min - b.s_min);
        }
    }
    rep.measure("smax_rise_where_nonpositive", max_rise);
    rep.measure("smin_drop_where_nonpositive", min_drop);
    rep.require(max_rise <= eta, "S_max increased while nonpositive");
    rep.require(min_drop <= eta, "S_min decreased while nonpositive");

    let s_min_all = traj.records.iter().map(|r| r.s_min).fold(f64::INFINITY, f64::min);
    let s_max_all = traj.records.iter().map(|r| r.s_max).fold(f64::NEG_INFINITY, f64::max);
    rep.measure("s_min", s_min_all);
    rep.measure("s_max", s_max_all);
    if lo0 >= 0.0 {
        rep.require(s_min_all >= -eta, "S_min stays nonnegative from a nonnegative start");
    }
    if is_negative_case(traj) {
        rep.predict("containment_lo", lo0);
        rep.predict("containment_hi", hi0);
        rep.require(
            s_min_all >= lo0 - eta && s_max_all <= hi0 + eta,
            format!("S within [{lo0}, {hi0}]"),
        );
    }
    rep
}

/// Fitted versus predicted exponential decay of `‖f(S) − A‖_∞` (negative case).
pub fn check_decay(ctx: &CheckContext<'_>) -> TheoremReport {
    let traj = ctx.traj;
    let mut rep = TheoremReport::new("decay", traj);
    if !is_negative_case(traj) {
        return rep.not_applicable("needs a normalized run with negative initial curvature");
    }
    let (lo, hi) = initial_range(traj).unwrap();
    let pred = negative_prediction(ctx.f, ctx.bg.n(), lo, hi);
    rep.predict("B", pred.b);
    rep.predict("C", pred.c_big);
    rep.tolerance("B_ratio", 0.9);
    rep.tolerance("envelope_factor", 1.1);

    let series_max = traj.records.iter().map(|r| r.fsa_sup).fold(0.0, f64::max);
    if pred.c_big <= 1e-14 {
        rep.measure("series_max", series_max);
        rep.require(series_max <= 1e-12, "constant curvature start keeps f(S) − A at zero");
        rep.notes.push("C = 0: bound holds vacuously".into());
        return rep;
    }

    let mut worst = 0.0f64;
    for r in &traj.records {
        let env = pred.c_big * (-pred.b * r.t).exp();
        worst = worst.max(r.fsa_sup / env);
    }
    rep.measure("envelope_ratio_max", worst);
    rep.require(worst <= 1.1, "‖f(S) − A‖ under 1.1 · C e^{−Bt}");

    match fit_decay(traj, FIT_SKIP) {
        None => {
            rep.status = Status::Inconclusive;
            rep.notes.push("not enough points above rounding level to fit".into());
        }
        Some(fit) => {
            rep.measure("B_fit", fit.b_fit);
            rep.measure("C_fit", fit.c_fit);
            rep.measure("fit_residual", fit.residual);
            rep.measure("fit_t_start", fit.window.0);
            rep.measure("fit_t_end", fit.window.1);
            if fit.residual > FIT_RESIDUAL_LIMIT {
                if rep.status == Status::Pass {
                    rep.status = Status::Inconclusive;
                }
                rep.notes.push(format!("fit residual {} above {FIT_RESIDUAL_LIMIT}", fit.residual));
            } else {
                rep.require(fit.b_fit >= 0.9 * pred.b, "B_fit ≥ 0.9 B");
            }
        }
    }
    rep
}

/// Bounds on the conformal factor in the negative, flat and positive cases.
pub fn check_u_bounds(ctx: &CheckContext<'_>) -> TheoremReport {
    let traj = ctx.traj;
    let mut rep = TheoremReport::new("u_bounds", traj);
    let Some(first) = traj.records.first() else {
        return rep.not_applicable("empty trajectory");
    };
    if traj.flow != FlowKind::Normalized {
        return rep.not_applicable("stated for the normalized flow");
    }
    let n = ctx.bg.n();
    let k = (n as f64 - 2.0) / 4.0;
    let q = grid::volume_exponent(n);

    if is_negative_case(traj) {
        let pred = negative_prediction(ctx.f, n, first.s_min, first.s_max);
        rep.predict("band_lo", (-pred.band).exp());
        rep.predict("band_hi", pred.band.exp());
        rep.predict("c_tilde", pred.c_tilde);
        rep.predict("B", pred.b);
        let u_lo = traj.records.iter().map(|r| r.u_min).fold(f64::INFINITY, f64::min);
        let u_hi = traj.records.iter().map(|r| r.u_max).fold(f64::NEG_INFINITY, f64::max);
        rep.measure("u_min", u_lo);
        rep.measure("u_max", u_hi);
        rep.tolerance("rounding", 1e-12);
        rep.require(
            u_lo >= (-pred.band).exp() - 1e-12 && u_hi <= pred.band.exp() + 1e-12,
            "u inside exp(±(n−2)C/4B)",
        );
        if (first.u_min - 1.0).abs() > 1e-12 || (first.u_max - 1.0).abs() > 1e-12 {
            rep.notes.push("band is derived for u₀ = 1".into());
        }
        rep.tolerance("envelope_factor", 1.1);
        let mut worst = 0.0f64;
        for r in &traj.records {
            let env = pred.c_tilde * (-pred.b * r.t).exp();
            let ratio = if env > 0.0 { r.dudt_sup / env } else if r.dudt_sup <= 1e-14 { 0.0 } else { f64::INFINITY };
            worst = worst.max(ratio);
        }
        rep.measure("dudt_envelope_ratio_max", worst);
        rep.require(worst <= 1.1, "‖∂_t u‖ under 1.1 · c̃ e^{−Bt}");
        return rep;
    }

    match ctx.bg.case() {
        CurvatureCase::Flat => {
            let r0 = first.u_min / first.u_max;
            let kk = r0.powf(q);
            rep.predict("r0", r0);
            rep.predict("k", kk);
            rep.tolerance("slack", 1e-8);
            let mut r_min = f64::INFINITY;
            let mut low_min = f64::INFINITY;
            for r in &traj.records {
                r_min = r_min.min(r.u_min / r.u_max);
                // u_min^q relative to the state's volume
                let vol = if traj.renormalized { 1.0 } else { r.vol };
                low_min = low_min.min(r.u_min.powf(q) / vol);
            }
            rep.measure("ratio_min", r_min);
            rep.measure("umin_q_min", low_min);
            rep.require(r_min >= r0 - 1e-8, "u_min/u_max ≥ its initial value");
            rep.require(low_min >= kk - 1e-8, "u_min^{2n/(n−2)} ≥ k at unit volume");
        }
        CurvatureCase::Positive => {
            let Some(inf) = ctx.f.bounded_below() else {
                return rep.not_applicable("positive case bound needs f bounded below");
            };
            if !ctx.f.in_domain(0.0) {
                return rep.not_applicable("0 outside the domain of f");
            }
            let ft0 = ctx.f.f(0.0) - inf;
            rep.predict("f_tilde_0", ft0);
            rep.notes.push(
                "band exponent uses (n−2)/4 from integrating the u-equation, not 4/(n−2)".into(),
            );
            let (u0_lo, u0_hi) = (first.u_min, first.u_max);
            let mut worst = 0.0f64;
            for r in &traj.records {
                let e = (k * ft0 * r.t).exp();
                worst = worst.max(u0_lo / e - r.u_min).max(r.u_max - u0_hi * e);
            }
            rep.measure("band_violation", worst);
            rep.tolerance("rounding", 1e-12);
            rep.require(worst <= 1e-12, "u within exp(±(n−2)/4 · f̃(0) t)");
        }
        _ => return rep.not_applicable("no u bound for this curvature case"),
    }
    rep
}

/// Three-point derivative on a nonuniform grid, centered at the middle point.
fn centered_difference(t: [f64; 3], q: [f64; 3]) -> f64 {
    let h1 = t[1] - t[0];
    let h2 = t[2] - t[1];
    (h1 * h1 * q[2] - h2 * h2 * q[0] + (h2 * h2 - h1 * h1) * q[1]) / (h1 * h2 * (h1 + h2))
}

/// Values and time derivatives (from the flow equations) of the tracked integrals at one state.
#[derive(Clone, Debug)]
pub struct IdentityTerms {
    /// `(value, predicted derivative)` per quantity name.
    pub values: BTreeMap<String, (f64, f64)>,
    /// `(n/2) ∫ |f(S) − A| dVol_g`, the scale for the volume defect.
    pub volume_scale: f64,
}

/// Right-hand sides of the evolution identities at state `u`.
///
/// With `φ = f(S) − A` (or `f(S)` for the non-normalized flow), any
/// `Q = ∫ F(S) dVol_g` obeys
/// `Q' = (n−1) ∫ ⟨∇f(S), ∇F'(S)⟩_g dVol_g + ∫ φ ((n/2) F − S F') dVol_g`.
/// The gradient term is evaluated as the edge sum `dirichlet_form(f(S), F'(S), u)`,
/// the exact discrete counterpart of the metric pairing (`|∇·|²_g dVol_g = u² dVol₀`).
pub fn identity_terms(
    bg: &Background,
    u: &ScalarField,
    f: &FSpec,
    kind: FlowKind,
    p_list: &[f64],
) -> Result<IdentityTerms> {
    let ev = conformal::evaluate(bg, u, f)?;
    let n = bg.n() as f64;
    let nm1 = n - 1.0;
    let s = &ev.s;
    let a = ev.a;
    let shift = if kind == FlowKind::Normalized { a } else { 0.0 };
    let phi = ev.fs.map(|v| v - shift);
    let vol = ev.vol;
    let int_g = |field: &ScalarField| grid::integrate_g(field, u);

    // Q' for Q = ∫F(S) dVol_g, given F and F' as fields
    let q_dot = |ff: &ScalarField, ffp: &ScalarField| -> Result<f64> {
        let grad = nm1 * grid::dirichlet_form(&ev.fs, ffp, u)?;
        let local = ScalarField::from_raw(
            u.grid().clone(),
            (0..u.len())
                .map(|i| phi.values()[i] * (0.5 * n * ff.values()[i] - s.values()[i] * ffp.values()[i]))
                .collect(),
        );
        Ok(grad + int_g(&local)?)
    };

    let one = ScalarField::constant(u.grid().clone(), 1.0);
    let vol_dot = 0.5 * n * int_g(&phi)?;
    let mut values = BTreeMap::new();
    values.insert("vol".to_string(), (vol, vol_dot));

    let int_f = int_g(&ev.fs)?;
    let int_f_dot = q_dot(&ev.fs, &s.map(|x| f.fp(x)))?;
    let a_dot = (int_f_dot - a * vol_dot) / vol;
    values.insert("A".to_string(), (int_f / vol, a_dot));

    let int_s = int_g(s)?;
    let int_s_dot = q_dot(s, &one)?;
    let sigma = int_s / vol;
    let sigma_dot = (int_s_dot - sigma * vol_dot) / vol;
    values.insert("sigma".to_string(), (sigma, sigma_dot));
    // alternative form, (n−2)/2 ∫ (S − σ)(f(S) − A) / Vol
    let alt = (n - 2.0) / 2.0 * int_g(&s.zip_map(&phi, |x, p| (x - sigma) * p)?)? / vol;
    values.insert("sigma_alt".to_string(), (sigma, alt));

    let pow = |x: f64, p: f64| x.abs().powf(p);
    let dpow = |x: f64, p: f64| if x == 0.0 { 0.0 } else { p * x.abs().powf(p - 1.0) * x.signum() };

    for &p in p_list {
        let ff = s.map(|x| pow(x, p));
        let ffp = s.map(|x| dpow(x, p));
        values.insert(format!("S_p{p}"), (int_g(&ff)?, q_dot(&ff, &ffp)?));

        let ff = s.map(|x| pow(x - sigma, p));
        let ffp = s.map(|x| dpow(x - sigma, p));
        let moving = sigma_dot * int_g(&ffp)?;
        values.insert(format!("S_minus_sigma_p{p}"), (int_g(&ff)?, q_dot(&ff, &ffp)? - moving));

        let ff = ev.fs.map(|v| pow(v - a, p));
        let g = ev.fs.map(|v| dpow(v - a, p));
        let ffp = g.zip_map(s, |gv, x| gv * f.fp(x))?;
        let moving = a_dot * int_g(&g)?;
        values.insert(format!("fSA_p{p}"), (int_g(&ff)?, q_dot(&ff, &ffp)? - moving));
    }
    let volume_scale = 0.5 * n * int_g(&phi.map(f64::abs))?;
    Ok(IdentityTerms { values, volume_scale })
}

/// Per-quantity maximum relative defect between centered time differences and
/// the analytic right-hand sides, over the interior snapshots.
pub fn identity_defects(
    bg: &Background,
    traj: &Trajectory,
    f: &FSpec,
    p_list: &[f64],
) -> Result<BTreeMap<String, f64>> {
    let terms: Vec<IdentityTerms> = traj
        .snapshots
        .iter()
        .map(|s| identity_terms(bg, &s.u, f, traj.flow, p_list))
        .collect::<Result<_>>()?;
    let ts: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
    let mut out = BTreeMap::new();
    if terms.len() < 3 {
        return Ok(out);
    }
    for key in terms[0].values.keys() {
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for k in 1..terms.len() - 1 {
            let (r, d) = if key == "sigma_alt" {
                // compare the alternative form against the primary derivative
                (terms[k].values[key].1, terms[k].values["sigma"].1)
            } else {
                let q = [terms[k - 1].values[key].0, terms[k].values[key].0, terms[k + 1].values[key].0];
                (terms[k].values[key].1, centered_difference([ts[k - 1], ts[k], ts[k + 1]], q))
            };
            err = err.max((d - r).abs());
            scale = scale.max(if key == "vol" { terms[k].volume_scale } else { r.abs() });
        }
        out.insert(key.clone(), if scale > 0.0 { err / scale } else { err });
    }
    Ok(out)
}

/// Steps in the dense window re-run when the trajectory itself is too sparse.
pub const IDENTITY_WINDOW: usize = 200;

fn is_dense(traj: &Trajectory) -> bool {
    !traj.renormalized && traj.snapshots.windows(2).all(|w| w[1].step == w[0].step + 1)
}

pub fn check_evolution_identities(ctx: &CheckContext<'_>, p_list: &[f64]) -> TheoremReport {
    let mut rep = TheoremReport::new("identities", ctx.traj);
    // the identities hold for the unrescaled flow, differentiated step by step
    let rerun;
    let traj = if is_dense(ctx.traj) {
        ctx.traj
    } else if let Some(config) = ctx.config {
        let mut c = config.clone();
        c.renormalize_volume = false;
        c.snapshot_cadence = 1;
        c.log_cadence = 1;
        c.stop_tol = 0.0;
        match flow::run_until(&c, &flow::SchemeRegistry::builtin(), |r| r.step >= IDENTITY_WINDOW) {
            Ok(t) => {
                rep.notes.push(format!(
                    "trajectory is sparse or renormalized; re-ran {} dense steps without renormalization",
                    t.steps()
                ));
                rep.measure("dense_steps", t.steps() as f64);
                rerun = t;
                &rerun
            }
            Err(e) => {
                rep.status = Status::Inconclusive;
                rep.notes.push(format!("dense re-run failed: {e}"));
                return rep;
            }
        }
    } else {
        rep.status = Status::Inconclusive;
        rep.notes.push("needs a snapshot every step without renormalization, or the run configuration".into());
        return rep;
    };
    if traj.snapshots.len() < 3 {
        rep.status = Status::Inconclusive;
        rep.notes.push("needs at least three snapshots".into());
        return rep;
    }
    rep.tolerance("relative_defect", IDENTITY_TOL);
    match identity_defects(ctx.bg, traj, ctx.f, p_list) {
        Err(e) => {
            rep.status = Status::Inconclusive;
            rep.notes.push(format!("could not evaluate: {e}"));
        }
        Ok(defects) => {
            for (k, v) in defects {
                rep.measure(&k, v);
                rep.require(v <= IDENTITY_TOL, format!("{k} identity (defect {v:e})"));
            }
        }
    }
    rep
}

/// `‖S‖_{n/2}` nonincreasing and `‖S‖_p ≤ ‖S(0)‖_{n/2}` for `p ∈ {1, 2, n/2}`.
pub fn check_lnhalf_monotone(ctx: &CheckContext<'_>) -> TheoremReport {
    let traj = ctx.traj;
    let mut rep = TheoremReport::new("lnhalf", traj);
    let Some(first) = traj.records.first() else {
        return rep.not_applicable("empty trajectory");
    };
    if traj.flow != FlowKind::Normalized || first.s_min < 0.0 {
        return rep.not_applicable("needs a normalized run with nonnegative initial curvature");
    }
    if !traj.renormalized {
        rep.notes.push("norm comparison assumes unit volume".into());
    }
    let tol = 1e-8;
    rep.tolerance("slack", tol);
    let bound = first.lpn2;
    rep.predict("lnhalf_initial", bound);
    let rise = traj
        .records
        .windows(2)
        .map(|w| w[1].lpn2 - w[0].lpn2)
        .fold(0.0, f64::max);
    rep.measure("lnhalf_max_rise", rise);
    rep.require(rise <= tol, "‖S‖_{n/2} nonincreasing");
    for (name, get) in [
        ("l1_max", (|r: &flow::Record| r.lp1) as fn(&flow::Record) -> f64),
        ("l2_max", |r: &flow::Record| r.lp2),
        ("lnhalf_max", |r: &flow::Record| r.lpn2),
    ] {
        let m = traj.records.iter().map(get).fold(0.0, f64::max);
        rep.measure(name, m);
        rep.require(m <= bound + tol, format!("{name} ≤ ‖S(0)‖_{{n/2}}"));
    }
    let s_min = traj.records.iter().map(|r| r.s_min).fold(f64::INFINITY, f64::min);
    rep.measure("s_min", s_min);
    rep.require(s_min >= -tol, "S stays nonnegative");
    rep
}

/// Exponential lower bound on `S_min` and, for `f` bounded below, upper bound on `S_max`.
pub fn check_positive_s_bounds(ctx: &CheckContext<'_>) -> TheoremReport {
    let traj = ctx.traj;
    let f = ctx.f;
    let mut rep = TheoremReport::new("positive_bounds", traj);
    let Some(first) = traj.records.first() else {
        return rep.not_applicable("empty trajectory");
    };
    if traj.flow != FlowKind::Normalized || first.s_min < 0.0 {
        return rep.not_applicable("needs a normalized run with nonnegative initial curvature");
    }
    if !f.in_domain(0.0) {
        return rep.not_applicable("0 outside the domain of f");
    }
    let f0 = f.f(0.0);
    let tol = 1e-8;
    rep.tolerance("slack", tol);

    // A under f − f(0)
    let mut a_run = f64::INFINITY;
    let mut worst_lower = f64::NEG_INFINITY;
    for r in &traj.records {
        a_run = a_run.min(r.a - f0);
        let bound = first.s_min * (a_run * r.t).exp();
        worst_lower = worst_lower.max(bound - r.s_min);
    }
    rep.measure("a_min", a_run);
    rep.measure("smin_lower_violation", worst_lower);
    rep.require(worst_lower <= tol, "S_min ≥ S_min(0) e^{a t}");

    if let Some(g) = f.growth() {
        let n = ctx.bg.n() as f64;
        // certificate for f − f(0)
        let nu = (g.nu + f0).max(0.0);
        let a_pred = -(g.mu * first.lpn2.powf(g.kappa) + nu);
        rep.predict("a_growth", a_pred);
        if g.kappa > n / 2.0 {
            rep.notes.push(format!("κ = {} exceeds n/2; growth estimate not covered", g.kappa));
        } else {
            rep.require(a_pred <= a_run + tol, "growth certificate bounds A from below");
        }
    }

    if let Some(inf) = f.bounded_below() {
        let mut c_run = f64::NEG_INFINITY;
        let mut worst_upper = f64::NEG_INFINITY;
        for r in &traj.records {
            c_run = c_run.max(r.a - inf);
            let bound = first.s_max * (c_run * r.t).exp();
            worst_upper = worst_upper.max(r.s_max - bound);
        }
        rep.measure("C_used", c_run);
        rep.measure("smax_upper_violation", worst_upper);
        rep.notes.push("upper bound uses C = running sup of (A − inf f)".into());
        rep.require(worst_upper <= tol, "S_max ≤ S_max(0) e^{C t}");
    }
    rep
}

/// Vanishing of `∫ u^β S dVol₀` on a flat background and the sign of `S_min`.
pub fn check_flat_identity(ctx: &CheckContext<'_>) -> TheoremReport {
    let traj = ctx.traj;
    let mut rep = TheoremReport::new("flat_identity", traj);
    if ctx.bg.case() != CurvatureCase::Flat {
        return rep.not_applicable("background is not flat");
    }
    let Some(first) = traj.records.first() else {
        return rep.not_applicable("empty trajectory");
    };
    let moment = traj.records.iter().map(|r| r.flat_moment.abs()).fold(0.0, f64::max);
    rep.measure("moment_max", moment);
    rep.tolerance("moment", 1e-9);
    rep.require(moment <= 1e-9, "∫ u^β S dVol₀ = 0");
    let s_min = traj.records.iter().map(|r| r.s_min).fold(f64::INFINITY, f64::min);
    let s_min_max = traj.records.iter().map(|r| r.s_min).fold(f64::NEG_INFINITY, f64::max);
    rep.predict("s_min_floor", first.s_min);
    rep.measure("s_min", s_min);
    rep.measure("s_min_largest", s_min_max);
    rep.tolerance("s_min_floor", 1e-6);
    rep.require(s_min >= first.s_min - 1e-6, "S_min ≥ S_min(0)");
    rep.require(s_min_max <= 1e-9, "S_min ≤ 0");
    rep
}

/// Conditions at a stationary end state.
pub fn check_stationary_limit(ctx: &CheckContext<'_>) -> TheoremReport {
    let traj = ctx.traj;
    let f = ctx.f;
    let mut rep = TheoremReport::new("stationary", traj);
    if traj.termination != Termination::Stationary {
        return rep.not_applicable(format!("run ended with {}", traj.termination.as_str()));
    }
    let (Some(last), Some(snap)) = (traj.records.last(), traj.snapshots.last()) else {
        return rep.not_applicable("no final state");
    };
    let spread = last.s_max - last.s_min;
    let spread_tol = 1e-6 * last.sigma.abs().max(1.0);
    rep.measure("spread", spread);
    rep.tolerance("spread", spread_tol);
    rep.require(spread <= spread_tol, "S_max − S_min small");

    let s = match conformal::scalar_curvature(ctx.bg, &snap.u) {
        Ok(s) => s,
        Err(e) => {
            rep.status = Status::Inconclusive;
            rep.notes.push(e.to_string());
            return rep;
        }
    };
    // bisection on the observed hull, widened slightly, inside the domain
    let d = f.domain();
    let pad = 1e-3 * (1.0 + last.s_max.abs().max(last.s_min.abs()));
    let mut lo = last.s_min - pad;
    let mut hi = last.s_max + pad;
    if !d.contains(lo) {
        lo = last.s_min;
    }
    if !d.contains(hi) {
        hi = last.s_max;
    }
    match f.inverse(last.a, lo, hi) {
        Ok(target) => {
            let dev = s.values().iter().fold(0.0, |m: f64, &v| m.max((v - target).abs()));
            rep.measure("f_inverse_A", target);
            rep.measure("deviation", dev);
            rep.tolerance("deviation", 1e-6);
            rep.require(dev <= 1e-6, "S = f⁻¹(A) pointwise");
        }
        Err(e) => {
            rep.require(false, format!("f⁻¹(A) not found: {e}"));
        }
    }
    if is_negative_case(traj) {
        rep.require(last.s_max < 0.0, "limit curvature negative");
    }
    rep
}

/// Runs the normalized flow directly and via the rescaled non-normalized flow
/// and compares the two.
pub fn check_rescale_equivalence(ctx: &CheckContext<'_>) -> TheoremReport {
    let traj = ctx.traj;
    let mut rep = TheoremReport::new("rescale", traj);
    let Some(config) = ctx.config else {
        return rep.not_applicable("needs the run configuration");
    };
    if flow::homogeneity_degree(&config.f).is_err() {
        return rep.not_applicable(format!("`{}` is not homogeneous", config.f.name()));
    }
    match rescale_distance(config) {
        Ok((dist, matched, t_end)) => {
            rep.measure("sup_distance", dist);
            rep.measure("matched_times", matched as f64);
            rep.measure("t_end", t_end);
            rep.tolerance("sup_distance", RESCALE_TOL);
            if matched == 0 {
                rep.status = Status::Inconclusive;
                rep.notes.push("no overlapping times".into());
            } else {
                rep.require(dist <= RESCALE_TOL, "rescaled run matches normalized run");
            }
        }
        Err(e) => {
            rep.status = Status::Fail;
            rep.notes.push(format!("runs failed: {e}"));
        }
    }
    rep
}

/// Sup-norm distance between a direct normalized run of `config` and the
/// Hamilton-rescaled non-normalized run, with the number of compared times
/// and the normalized end time.
pub fn rescale_distance(config: &RunConfig) -> Result<(f64, usize, f64)> {
    let alpha = flow::homogeneity_degree(&config.f)?;
    let mut norm = config.clone();
    norm.flow = FlowKind::Normalized;
    norm.stop_tol = 0.0;
    norm.log_cadence = 1;
    if norm.snapshot_cadence == 0 {
        norm.snapshot_cadence = 10;
    }
    let direct = flow::run(&norm)?;
    let t_end = direct.final_time();

    let mut plain = norm.clone();
    plain.flow = FlowKind::NonNormalized;
    plain.renormalize_volume = false;
    // start both flows from the same state
    if norm.renormalize_volume {
        plain.u0 = flow::renormalize_volume(&norm.u0)?.0;
    }
    plain.t_final = f64::MAX;
    // dense reference, so interpolating it in τ adds no error of its own
    plain.snapshot_cadence = 1;
    if !direct.termination.is_success() {
        return Err(crate::error::Error::InvalidParameter(format!(
            "normalized run ended with {}",
            direct.termination.as_str()
        )));
    }
    // integrate τ alongside the run and stop once it passes the normalized end
    let (mut prev_t, mut prev_a, mut eta, mut tau) = (0.0, f64::NAN, 0.0, 0.0);
    let raw = flow::run_until(&plain, &flow::SchemeRegistry::builtin(), |r| {
        if !prev_a.is_nan() {
            let dt = r.t - prev_t;
            let eta_new = eta + 0.5 * dt * (prev_a + r.a);
            tau += 0.5 * dt * ((-alpha * eta).exp() + (-alpha * eta_new).exp());
            eta = eta_new;
        }
        prev_t = r.t;
        prev_a = r.a;
        tau >= t_end
    })?;
    let rescaled = flow::hamilton_rescale(&config.background, &raw, &config.f)?;
    let (dist, matched) = flow::interpolated_distance(&direct, &rescaled)?;
    Ok((dist, matched, t_end))
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

struct FnCheck {
    id: &'static str,
    run: fn(&CheckContext<'_>) -> TheoremReport,
}

impl Check for FnCheck {
    fn id(&self) -> &'static str {
        self.id
    }
    fn run(&self, ctx: &CheckContext<'_>) -> TheoremReport {
        (self.run)(ctx)
    }
}

/// The identity check with a fixed list of exponents.
pub struct IdentityCheck {
    pub p_list: Vec<f64>,
}

impl Check for IdentityCheck {
    fn id(&self) -> &'static str {
        "identities"
    }
    fn run(&self, ctx: &CheckContext<'_>) -> TheoremReport {
        let mut p = self.p_list.clone();
        if p.is_empty() {
            p = vec![2.0, ctx.bg.n() as f64 / 2.0];
            p.dedup();
        }
        check_evolution_identities(ctx, &p)
    }
}

pub struct CheckRegistry {
    checks: BTreeMap<String, Arc<dyn Check>>,
    order: Vec<String>,
}

impl Default for CheckRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl CheckRegistry {
    pub fn empty() -> Self {
        Self { checks: BTreeMap::new(), order: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        let plain: [(&'static str, fn(&CheckContext<'_>) -> TheoremReport); 8] = [
            ("minmax", check_minmax_principle),
            ("decay", check_decay),
            ("u_bounds", check_u_bounds),
            ("lnhalf", check_lnhalf_monotone),
            ("positive_bounds", check_positive_s_bounds),
            ("flat_identity", check_flat_identity),
            ("stationary", check_stationary_limit),
            ("rescale", check_rescale_equivalence),
        ];
        for (id, run) in plain {
            r.register(Arc::new(FnCheck { id, run }));
        }
        r.register(Arc::new(IdentityCheck { p_list: Vec::new() }));
        r
    }

    pub fn register(&mut self, check: Arc<dyn Check>) {
        let id = check.id().to_string();
        if !self.checks.contains_key(&id) {
            self.order.push(id.clone());
        }
        self.checks.insert(id, check);
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn Check>> {
        self.checks.get(id).cloned().ok_or_else(|| crate::error::Error::Unknown {
            kind: "check",
            name: id.to_string(),
        })
    }

    /// Runs the named checks in order; `None` runs all of them.
    pub fn run(&self, ids: Option<&[String]>, ctx: &CheckContext<'_>) -> Result<Vec<TheoremReport>> {
        let ids: Vec<String> = match ids {
            Some(ids) => ids.to_vec(),
            None => self.order.clone(),
        };
        ids.iter().map(|id| Ok(self.get(id)?.run(ctx))).collect()
    }
}

/// True when any report is a definite failure.
pub fn any_failed(reports: &[TheoremReport]) -> bool {
    reports.iter().any(TheoremReport::failed)
}

/// Fixed-width summary table, one line per report.
pub fn summary_table(reports: &[TheoremReport]) -> String {
    let mut out = format!("{:<16} {:<15} {}\n", "check", "status", "notes");
    for r in reports {
        let status = serde_json::to_value(r.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        out.push_str(&format!("{:<16} {:<15} {}\n", r.id, status, r.notes.join("; ")));
    }
    out
}
