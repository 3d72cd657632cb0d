//! Time integration of `∂_t u = (n−2)/4 (f(S) − A) u` and its non-normalized twin.
//!
//! Explicit method of lines. `A` is recomputed from the stage state at every
//! stage of a step, with the same quadrature as the volume. Schemes are trait
//! objects looked up by name in a [`SchemeRegistry`].

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conformal::{self, Background, ConformalState, Evaluation};
use crate::error::{Error, Result};
use crate::fzoo::{self, FSpec};
use crate::grid::{self, ScalarField};

pub const BLOWUP_THRESHOLD: f64 = 1e8;
pub const POSITIVITY_FLOOR: f64 = 1e-10;
pub const DEFAULT_SAFETY: f64 = 0.8;
pub const DEFAULT_STOP_TOL: f64 = 1e-8;

/// Samples used for the per-step parabolicity margin over `[S_min, S_max]`.
const MARGIN_SAMPLES: usize = 257;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Normalized,
    #[serde(alias = "non_normalized", alias = "nonnormalized")]
    NonNormalized,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DtPolicy {
    Fixed(f64),
    Adaptive { safety: f64 },
    /// Replays a recorded step sequence; the run ends when it is exhausted.
    Replay(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TimeReached,
    Stationary,
    Blowup,
    FDomainViolation,
    PositivityLost,
    ParabolicityLost,
}

impl Termination {
    pub fn is_success(self) -> bool {
        matches!(self, Termination::TimeReached | Termination::Stationary)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::TimeReached => "time_reached",
            Termination::Stationary => "stationary",
            Termination::Blowup => "blowup",
            Termination::FDomainViolation => "f_domain_violation",
            Termination::PositivityLost => "positivity_lost",
            Termination::ParabolicityLost => "parabolicity_lost",
        }
    }
}

// ---------------------------------------------------------------------------
// Right-hand sides and linearizations
// ---------------------------------------------------------------------------

/// `(n−2)/4 (f(S) − A) u`
pub fn rhs_normalized(bg: &Background, u: &ScalarField, f: &FSpec) -> Result<ScalarField> {
    let ev = conformal::evaluate(bg, u, f)?;
    Ok(rhs_from(bg, u, &ev, FlowKind::Normalized))
}

/// `(n−2)/4 f(S) u`
pub fn rhs_nonnormalized(bg: &Background, u: &ScalarField, f: &FSpec) -> Result<ScalarField> {
    let s = conformal::scalar_curvature(bg, u)?;
    let fs = conformal::apply_f(f, &s)?;
    let k = bg.constants().flow_factor;
    fs.zip_map(u, |v, w| k * v * w)
}

pub fn rhs(bg: &Background, u: &ScalarField, f: &FSpec, kind: FlowKind) -> Result<ScalarField> {
    match kind {
        FlowKind::Normalized => rhs_normalized(bg, u, f),
        FlowKind::NonNormalized => rhs_nonnormalized(bg, u, f),
    }
}

fn rhs_from(bg: &Background, u: &ScalarField, ev: &Evaluation, kind: FlowKind) -> ScalarField {
    let k = bg.constants().flow_factor;
    let a = match kind {
        FlowKind::Normalized => ev.a,
        FlowKind::NonNormalized => 0.0,
    };
    let values = ev
        .fs
        .values()
        .iter()
        .zip(u.values())
        .map(|(&v, &w)| k * (v - a) * w)
        .collect();
    ScalarField::from_raw(u.grid().clone(), values)
}

/// `F(u) = f(S) u`.
pub fn f_operator(bg: &Background, u: &ScalarField, f: &FSpec) -> Result<ScalarField> {
    let s = conformal::scalar_curvature(bg, u)?;
    conformal::apply_f(f, &s)?.zip_map(u, |v, w| v * w)
}

/// `N(u) = (f(S) − A) u`.
pub fn normalized_operator(bg: &Background, u: &ScalarField, f: &FSpec) -> Result<ScalarField> {
    let ev = conformal::evaluate(bg, u, f)?;
    ev.fs.zip_map(u, |v, w| (v - ev.a) * w)
}

/// `DF(u)h = f(S)h + f'(S)(u^{1−β} L(h) − β S h)`.
pub fn frechet_apply(bg: &Background, u: &ScalarField, h: &ScalarField, f: &FSpec) -> Result<ScalarField> {
    u.ensure_same_grid(h)?;
    let s = conformal::scalar_curvature(bg, u)?;
    for &v in s.values() {
        f.ensure_in_domain(v)?;
    }
    let lh = conformal::conformal_laplacian(bg, h)?;
    let beta = bg.constants().beta;
    let values = (0..u.len())
        .map(|i| {
            let (w, si, hi) = (u.values()[i], s.values()[i], h.values()[i]);
            f.f(si) * hi + f.fp(si) * (w.powf(1.0 - beta) * lh.values()[i] - beta * si * hi)
        })
        .collect();
    Ok(ScalarField::from_raw(u.grid().clone(), values))
}

/// Derivative of `N(u) = (f(S) − A)u` along `h`: `DF(u)h − A h − DA(h) u`, where
/// `DA(h) = Vol^{-1} ∫ [f'(S) DS(h) + q (f(S) − A) h/u] dVol_g`,
/// `DS(h) = u^{−β} L(h) − β S h/u` and `q = 2n/(n−2)`.
pub fn frechet_normalized_apply(
    bg: &Background,
    u: &ScalarField,
    h: &ScalarField,
    f: &FSpec,
) -> Result<ScalarField> {
    u.ensure_same_grid(h)?;
    let ev = conformal::evaluate(bg, u, f)?;
    let lh = conformal::conformal_laplacian(bg, h)?;
    let c = bg.constants();
    let (beta, q) = (c.beta, c.vol_exp);
    let ds: Vec<f64> = (0..u.len())
        .map(|i| {
            let (w, si, hi) = (u.values()[i], ev.s.values()[i], h.values()[i]);
            w.powf(-beta) * lh.values()[i] - beta * si * hi / w
        })
        .collect();
    let integrand: Vec<f64> = (0..u.len())
        .map(|i| {
            let (w, si, hi) = (u.values()[i], ev.s.values()[i], h.values()[i]);
            f.fp(si) * ds[i] + q * (ev.fs.values()[i] - ev.a) * hi / w
        })
        .collect();
    let da = grid::integrate_g(&ScalarField::from_raw(u.grid().clone(), integrand), u)? / ev.vol;
    let values = (0..u.len())
        .map(|i| {
            let (w, si, hi) = (u.values()[i], ev.s.values()[i], h.values()[i]);
            let df = ev.fs.values()[i] * hi + f.fp(si) * w * ds[i];
            df - ev.a * hi - da * w
        })
        .collect();
    Ok(ScalarField::from_raw(u.grid().clone(), values))
}

/// `(min u, min −f'(S))`; both positive means the state is admissible.
pub fn check_parabolic_validity(bg: &Background, u: &ScalarField, f: &FSpec) -> Result<(f64, f64)> {
    let s = conformal::scalar_curvature(bg, u)?;
    for &v in s.values() {
        f.ensure_in_domain(v)?;
    }
    let fp_margin = s.values().iter().map(|&v| -f.fp(v)).fold(f64::INFINITY, f64::min);
    Ok((grid::field_min(u), fp_margin))
}

/// `safety · h_min² / (2 · dims · max κ)` with `κ = (n−1)|f'(S)| u^{1−β}`.
pub fn stable_dt(bg: &Background, u: &ScalarField, f: &FSpec, safety: f64) -> Result<f64> {
    let s = conformal::scalar_curvature(bg, u)?;
    stable_dt_for(bg, u, &s, f, safety)
}

fn stable_dt_for(bg: &Background, u: &ScalarField, s: &ScalarField, f: &FSpec, safety: f64) -> Result<f64> {
    let (lo, hi) = (grid::field_min(s), grid::field_max(s));
    let margin = fzoo::check_decreasing(f, (lo, hi), MARGIN_SAMPLES)?;
    if !(margin > 0.0) {
        return Err(Error::ParabolicityLost { margin, lo, hi });
    }
    let c = bg.constants();
    let nm1 = c.n as f64 - 1.0;
    let kappa = s
        .values()
        .iter()
        .zip(u.values())
        .map(|(&si, &w)| nm1 * f.fp(si).abs() * w.powf(1.0 - c.beta))
        .fold(0.0, f64::max);
    let g = u.grid();
    let h = g.min_spacing();
    Ok(safety * h * h / (2.0 * g.active_dims() as f64 * kappa))
}

/// `u · Vol_g^{−(n−2)/(2n)}`, returned with the volume before correction.
pub fn renormalize_volume(u: &ScalarField) -> Result<(ScalarField, f64)> {
    let vol = conformal::volume(u)?;
    let q = grid::volume_exponent(u.grid().ambient_n());
    Ok((u.scale(vol.powf(-1.0 / q)), vol))
}

// ---------------------------------------------------------------------------
// Schemes
// ---------------------------------------------------------------------------

pub type RhsFn<'a> = dyn FnMut(&ScalarField) -> Result<ScalarField> + 'a;

pub trait Scheme: Send + Sync {
    fn name(&self) -> &'static str;
    fn order(&self) -> u32;
    fn advance(&self, rhs: &mut RhsFn<'_>, u: &ScalarField, dt: f64) -> Result<ScalarField>;
}

#[derive(Debug, Clone, Copy)]
pub struct Euler;

impl Scheme for Euler {
    fn name(&self) -> &'static str {
        "euler"
    }
    fn order(&self) -> u32 {
        1
    }
    fn advance(&self, rhs: &mut RhsFn<'_>, u: &ScalarField, dt: f64) -> Result<ScalarField> {
        u.axpy(dt, &rhs(u)?)
    }
}

/// Classical fourth-order Runge–Kutta.
#[derive(Debug, Clone, Copy)]
pub struct Rk4;

impl Scheme for Rk4 {
    fn name(&self) -> &'static str {
        "rk4"
    }
    fn order(&self) -> u32 {
        4
    }
    fn advance(&self, rhs: &mut RhsFn<'_>, u: &ScalarField, dt: f64) -> Result<ScalarField> {
        let k1 = rhs(u)?;
        let k2 = rhs(&u.axpy(0.5 * dt, &k1)?)?;
        let k3 = rhs(&u.axpy(0.5 * dt, &k2)?)?;
        let k4 = rhs(&u.axpy(dt, &k3)?)?;
        let values = (0..u.len())
            .map(|i| {
                let incr = k1.values()[i] + 2.0 * k2.values()[i] + 2.0 * k3.values()[i] + k4.values()[i];
                u.values()[i] + dt / 6.0 * incr
            })
            .collect();
        Ok(ScalarField::from_raw(u.grid().clone(), values))
    }
}

pub struct SchemeRegistry {
    schemes: BTreeMap<String, Arc<dyn Scheme>>,
}

impl Default for SchemeRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl SchemeRegistry {
    pub fn builtin() -> Self {
        let mut r = Self { schemes: BTreeMap::new() };
        r.register(Arc::new(Euler));
        r.register(Arc::new(Rk4));
        r
    }

    pub fn register(&mut self, scheme: Arc<dyn Scheme>) {
        self.schemes.insert(scheme.name().to_string(), scheme);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Scheme>> {
        self.schemes.get(name).cloned().ok_or_else(|| Error::Unknown {
            kind: "scheme",
            name: name.to_string(),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.schemes.keys().map(String::as_str)
    }
}

/// One explicit step of the chosen flow.
pub fn step(
    bg: &Background,
    state: &ConformalState,
    f: &FSpec,
    dt: f64,
    scheme: &dyn Scheme,
    kind: FlowKind,
) -> Result<ConformalState> {
    let mut r = |v: &ScalarField| rhs(bg, v, f, kind);
    let u = scheme.advance(&mut r, &state.u, dt)?;
    ConformalState::new(u, state.t + dt)
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub background: Background,
    pub f: FSpec,
    pub u0: ScalarField,
    pub t_final: f64,
    pub dt_policy: DtPolicy,
    pub scheme: String,
    pub stop_tol: f64,
    pub renormalize_volume: bool,
    pub log_cadence: usize,
    /// Snapshot every this many steps; 0 keeps only the first and last state.
    pub snapshot_cadence: usize,
    pub flow: FlowKind,
}

impl RunConfig {
    pub fn new(background: Background, f: FSpec, u0: ScalarField, t_final: f64) -> Self {
        Self {
            background,
            f,
            u0,
            t_final,
            dt_policy: DtPolicy::Adaptive { safety: DEFAULT_SAFETY },
            scheme: "rk4".into(),
            stop_tol: DEFAULT_STOP_TOL,
            renormalize_volume: true,
            log_cadence: 1,
            snapshot_cadence: 0,
            flow: FlowKind::Normalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        match &self.dt_policy {
            DtPolicy::Adaptive { safety } if !(*safety > 0.0 && *safety <= 1.0) => {
                return bad(format!("safety must lie in (0, 1], got {safety}"));
            }
            DtPolicy::Fixed(dt) if !(*dt > 0.0 && dt.is_finite()) => {
                return bad(format!("fixed dt must be positive, got {dt}"));
            }
            DtPolicy::Replay(seq) if seq.iter().any(|d| !(*d > 0.0)) => {
                return bad("replayed dt sequence must be positive".into());
            }
            _ => {}
        }
        if !(self.stop_tol >= 0.0) {
            return bad(format!("stop_tol must be nonnegative, got {}", self.stop_tol));
        }
        if self.log_cadence == 0 {
            return bad("log_cadence must be at least 1".into());
        }
        self.background.s0().ensure_same_grid(&self.u0)?;
        ConformalState::new(self.u0.clone(), 0.0)?;
        Ok(())
    }
}

/// Scalar diagnostics of one logged state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: usize,
    pub t: f64,
    /// Step that produced this state; 0 for the initial state.
    pub dt: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub a: f64,
    pub sigma: f64,
    /// Volume before the renormalization that followed the step.
    pub vol: f64,
    pub fsa_sup: f64,
    pub lp1: f64,
    pub lp2: f64,
    pub lpn2: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// `‖∂_t u‖_∞` of the flow being run.
    pub dudt_sup: f64,
    /// `∫ u^β S dVol₀`
    pub flat_moment: f64,
    /// Running `∫₀ᵗ (∫|S|^{n²/(2(n−2))} dVol_g)^{(n−2)/n} dt`.
    pub step3: f64,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub u: ScalarField,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub flow: FlowKind,
    pub records: Vec<Record>,
    pub snapshots: Vec<Snapshot>,
    pub termination: Termination,
    pub message: Option<String>,
    /// Every step size taken, in order.
    pub dts: Vec<f64>,
    pub initial_volume: f64,
    /// Whether every state was rescaled to unit volume.
    pub renormalized: bool,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.dts.len()
    }

    pub fn final_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t)
    }

    pub fn last_snapshot(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }
}

fn step3_integrand(bg: &Background, u: &ScalarField, s: &ScalarField) -> Result<f64> {
    let n = bg.n() as f64;
    let p = n * n / (2.0 * (n - 2.0));
    let integral = grid::integrate_g(&s.map(|v| v.abs().powf(p)), u)?;
    Ok(integral.powf((n - 2.0) / n))
}

/// Diagnostics of a single state, as logged by [`run`].
pub fn record_state(
    bg: &Background,
    u: &ScalarField,
    ev: &Evaluation,
    kind: FlowKind,
) -> Result<Record> {
    let s = &ev.s;
    let n = bg.n() as f64;
    let beta = bg.constants().beta;
    let sig = grid::integrate_g(s, u)? / ev.vol;
    let fsa_sup = ev.fs.values().iter().fold(0.0, |m: f64, &v| m.max((v - ev.a).abs()));
    let dudt = rhs_from(bg, u, ev, kind).sup_norm();
    let moment = grid::integrate0(&s.zip_map(u, |v, w| v * w.powf(beta))?);
    Ok(Record {
        step: 0,
        t: 0.0,
        dt: 0.0,
        s_min: grid::field_min(s),
        s_max: grid::field_max(s),
        a: ev.a,
        sigma: sig,
        vol: ev.vol,
        fsa_sup,
        lp1: grid::lp_norm_g(s, 1.0, u)?,
        lp2: grid::lp_norm_g(s, 2.0, u)?,
        lpn2: grid::lp_norm_g(s, n / 2.0, u)?,
        u_min: grid::field_min(u),
        u_max: grid::field_max(u),
        dudt_sup: dudt,
        flat_moment: moment,
        step3: 0.0,
    })
}

fn classify(err: &Error) -> Option<Termination> {
    match err {
        Error::NotPositive { .. } => Some(Termination::PositivityLost),
        Error::FDomainViolation { .. } => Some(Termination::FDomainViolation),
        Error::ParabolicityLost { .. } => Some(Termination::ParabolicityLost),
        Error::NonFinite { .. } => Some(Termination::Blowup),
        _ => None,
    }
}

/// Integrates a configuration to completion with the built-in schemes.
pub fn run(config: &RunConfig) -> Result<Trajectory> {
    run_until(config, &SchemeRegistry::builtin(), |_| false)
}

/// Integrates until the configured end or until `stop` returns true for the
/// record of the current state (checked before every step).
pub fn run_until(
    config: &RunConfig,
    schemes: &SchemeRegistry,
    mut stop: impl FnMut(&Record) -> bool,
) -> Result<Trajectory> {
    config.validate()?;
    let scheme = schemes.get(&config.scheme)?;
    let bg = &config.background;
    let f = &config.f;
    let kind = config.flow;

    let initial_volume = conformal::volume(&config.u0)?;
    let mut u = if config.renormalize_volume {
        renormalize_volume(&config.u0)?.0
    } else {
        config.u0.clone()
    };
    let mut traj = Trajectory {
        flow: kind,
        records: Vec::new(),
        snapshots: Vec::new(),
        termination: Termination::TimeReached,
        message: None,
        dts: Vec::new(),
        initial_volume,
        renormalized: config.renormalize_volume,
    };

    let mut t = 0.0;
    let mut vol_pre = initial_volume;
    let mut last_dt = 0.0;
    let mut step3 = 0.0;
    let mut prev_step3_integrand: Option<f64> = None;
    let end = config.t_final * (1.0 - 1e-12);

    loop {
        let k = traj.dts.len();
        let ev = match conformal::evaluate(bg, &u, f) {
            Ok(ev) => ev,
            Err(e) => {
                traj.message = Some(e.to_string());
                traj.termination = classify(&e).ok_or(e)?;
                finish_at_current(&mut traj, k, t, &u);
                break;
            }
        };
        let integrand = step3_integrand(bg, &u, &ev.s)?;
        if let Some(prev) = prev_step3_integrand {
            step3 += 0.5 * last_dt * (prev + integrand);
        }
        prev_step3_integrand = Some(integrand);

        let mut rec = record_state(bg, &u, &ev, kind)?;
        rec.step = k;
        rec.t = t;
        rec.dt = last_dt;
        rec.vol = vol_pre;
        rec.step3 = step3;

        let blown = rec.u_max > BLOWUP_THRESHOLD
            || rec.s_max.abs().max(rec.s_min.abs()) > BLOWUP_THRESHOLD;
        let outcome = if blown {
            Some(Termination::Blowup)
        } else if rec.fsa_sup <= config.stop_tol {
            Some(Termination::Stationary)
        } else if t >= end || stop(&rec) {
            Some(Termination::TimeReached)
        } else {
            None
        };

        let snap_due = k == 0 || (config.snapshot_cadence > 0 && k % config.snapshot_cadence == 0);
        if k % config.log_cadence == 0 || outcome.is_some() {
            traj.records.push(rec);
        }
        if snap_due || outcome.is_some() {
            traj.snapshots.push(Snapshot { step: k, t, u: u.clone() });
        }
        if let Some(term) = outcome {
            traj.termination = term;
            break;
        }

        let dt = match &config.dt_policy {
            DtPolicy::Fixed(dt) => *dt,
            DtPolicy::Adaptive { safety } => match stable_dt_for(bg, &u, &ev.s, f, *safety) {
                Ok(dt) => dt,
                Err(e) => {
                    traj.termination = classify(&e).ok_or(e)?;
                    break;
                }
            },
            DtPolicy::Replay(seq) => match seq.get(k) {
                Some(&dt) => dt,
                None => {
                    traj.message = Some(format!("replayed dt sequence exhausted after {k} steps"));
                    finish_at_current(&mut traj, k, t, &u);
                    break;
                }
            },
        };
        let dt = match config.dt_policy {
            DtPolicy::Replay(_) => dt,
            _ => dt.min(config.t_final - t),
        };

        let mut r = |v: &ScalarField| rhs(bg, v, f, kind);
        let next = match scheme.advance(&mut r, &u, dt) {
            Ok(next) => next,
            Err(e) => {
                traj.message = Some(e.to_string());
                traj.termination = classify(&e).ok_or(e)?;
                finish_at_current(&mut traj, k, t, &u);
                break;
            }
        };
        if !next.is_finite() {
            traj.termination = Termination::Blowup;
            finish_at_current(&mut traj, k, t, &u);
            break;
        }
        if grid::field_min(&next) < POSITIVITY_FLOOR {
            traj.termination = Termination::PositivityLost;
            traj.message = Some(format!("min u = {:e} after step {}", grid::field_min(&next), k + 1));
            finish_at_current(&mut traj, k, t, &u);
            break;
        }
        let (next, vol) = if config.renormalize_volume {
            renormalize_volume(&next)?
        } else {
            let vol = conformal::volume(&next)?;
            (next, vol)
        };
        vol_pre = vol;
        u = next;
        t += dt;
        last_dt = dt;
        traj.dts.push(dt);
    }
    Ok(traj)
}

// Makes sure the final valid state is logged when a run stops mid-step.
fn finish_at_current(traj: &mut Trajectory, k: usize, t: f64, u: &ScalarField) {
    if traj.snapshots.last().map_or(true, |s| s.step != k) {
        traj.snapshots.push(Snapshot { step: k, t, u: u.clone() });
    }
}

// ---------------------------------------------------------------------------
// Hamilton rescaling
// ---------------------------------------------------------------------------

/// Relative tolerance for the homogeneity precondition.
pub const HOMOGENEITY_TOL: f64 = 1e-9;

/// Ensures `f` declares a homogeneity degree that survives sampling.
pub fn homogeneity_degree(f: &FSpec) -> Result<f64> {
    let alpha = f.alpha().ok_or_else(|| Error::NotHomogeneous {
        name: f.name().to_string(),
        defect: f64::NAN,
    })?;
    let triples = fzoo::sample_triples(f);
    let scale = triples
        .iter()
        .map(|&(l, x, y)| (f.f(l * x) - f.f(l * y)).abs())
        .filter(|v| v.is_finite())
        .fold(1.0, f64::max);
    let defect = fzoo::homogeneity_check(f, alpha, &triples);
    if !(defect <= HOMOGENEITY_TOL * scale) {
        return Err(Error::NotHomogeneous { name: f.name().to_string(), defect });
    }
    Ok(alpha)
}

/// Time `η(t) = ∫₀ᵗ A` and `τ(t) = ∫₀ᵗ e^{−αη}` by trapezoid quadrature over
/// the logged records of a non-normalized run.
pub fn rescaling_clock(records: &[Record], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let mut eta = Vec::with_capacity(records.len());
    let mut tau = Vec::with_capacity(records.len());
    let (mut e, mut s) = (0.0, 0.0);
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            let p = &records[i - 1];
            let dt = r.t - p.t;
            let e_new = e + 0.5 * dt * (p.a + r.a);
            s += 0.5 * dt * ((-alpha * e).exp() + (-alpha * e_new).exp());
            e = e_new;
        }
        eta.push(e);
        tau.push(s);
    }
    (eta, tau)
}

fn interpolate(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    let k = ts.partition_point(|&x| x <= t);
    if k == 0 {
        return vs[0];
    }
    if k >= ts.len() {
        return *vs.last().unwrap();
    }
    let (t0, t1) = (ts[k - 1], ts[k]);
    let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    vs[k - 1] + w * (vs[k] - vs[k - 1])
}

/// Maps a non-normalized trajectory `v(t)` onto the normalized flow:
/// `u(τ) = e^{−(n−2)η/4} v(t)`. Records are recomputed from the rescaled
/// snapshots, so the result carries one record per snapshot.
pub fn hamilton_rescale(bg: &Background, traj: &Trajectory, f: &FSpec) -> Result<Trajectory> {
    if traj.flow != FlowKind::NonNormalized {
        return Err(Error::InvalidParameter(
            "rescaling expects a non-normalized trajectory".into(),
        ));
    }
    let alpha = homogeneity_degree(f)?;
    if traj.records.is_empty() {
        return Err(Error::InvalidParameter("trajectory has no records".into()));
    }
    let (eta, tau) = rescaling_clock(&traj.records, alpha);
    let ts: Vec<f64> = traj.records.iter().map(|r| r.t).collect();
    let k = bg.constants().flow_factor;

    let mut out = Trajectory {
        flow: FlowKind::Normalized,
        records: Vec::new(),
        snapshots: Vec::new(),
        termination: traj.termination,
        message: traj.message.clone(),
        dts: Vec::new(),
        initial_volume: traj.initial_volume,
        renormalized: false,
    };
    let mut prev_tau = 0.0;
    for snap in &traj.snapshots {
        let e = interpolate(&ts, &eta, snap.t);
        let t_new = interpolate(&ts, &tau, snap.t);
        let u = snap.u.scale((-k * e).exp());
        let ev = conformal::evaluate(bg, &u, f)?;
        let mut rec = record_state(bg, &u, &ev, FlowKind::Normalized)?;
        rec.step = snap.step;
        rec.t = t_new;
        rec.dt = t_new - prev_tau;
        if !out.snapshots.is_empty() {
            out.dts.push(t_new - prev_tau);
        }
        prev_tau = t_new;
        out.records.push(rec);
        out.snapshots.push(Snapshot { step: snap.step, t: t_new, u });
    }
    Ok(out)
}

/// Largest sup-norm gap between the snapshots of `reference` and `other`
/// linearly interpolated in time, over the overlapping time range.
pub fn interpolated_distance(reference: &Trajectory, other: &Trajectory) -> Result<(f64, usize)> {
    let ts: Vec<f64> = other.snapshots.iter().map(|s| s.t).collect();
    let (Some(&lo), Some(&hi)) = (ts.first(), ts.last()) else {
        return Ok((0.0, 0));
    };
    let mut worst = 0.0f64;
    let mut matched = 0;
    for snap in &reference.snapshots {
        if snap.t < lo || snap.t > hi {
            continue;
        }
        let k = ts.partition_point(|&x| x <= snap.t).clamp(1, ts.len().max(2) - 1);
        let (a, b) = if ts.len() == 1 {
            (&other.snapshots[0], &other.snapshots[0])
        } else {
            (&other.snapshots[k - 1], &other.snapshots[k])
        };
        let w = if b.t > a.t { (snap.t - a.t) / (b.t - a.t) } else { 0.0 };
        let interp = a.u.zip_map(&b.u, |x, y| x + w * (y - x))?;
        worst = worst.max(snap.u.sup_distance(&interp)?);
        matched += 1;
    }
    Ok((worst, matched))
}
