//! Each check must pass on a genuine run and fail once the run is tampered with.

use std::sync::Arc;

use conflow::conformal::{self, Background, ConformalState};
use conflow::diagnostics::{self, CheckContext, CheckRegistry, Status, TheoremReport};
use conflow::flow::{self, FlowKind, Rk4, RunConfig, Termination, Trajectory};
use conflow::fzoo::{self, FSpec, FnProfile, Interval};
use conflow::grid::{GridSpec, ScalarField};

fn line(n: usize) -> Arc<GridSpec> {
    GridSpec::periodic_1d(4, n).unwrap()
}

fn negative() -> (RunConfig, Trajectory) {
    let g = line(32);
    let bg = Background::new(ScalarField::from_fn(g.clone(), |x| -1.5 + 0.4 * x[0].sin()).unwrap());
    let mut cfg = RunConfig::new(bg, fzoo::classical(), ScalarField::constant(g, 1.0), 20.0);
    cfg.snapshot_cadence = 50;
    let traj = flow::run(&cfg).unwrap();
    (cfg, traj)
}

fn flat() -> (RunConfig, Trajectory) {
    let g = line(32);
    let bg = Background::constant(g.clone(), 0.0);
    let u0 = ScalarField::from_fn(g.clone(), |x| 1.0 + 0.3 * x[0].cos()).unwrap();
    let cfg = RunConfig::new(bg, fzoo::classical(), u0, 0.5);
    let traj = flow::run(&cfg).unwrap();
    (cfg, traj)
}

fn positive(f: FSpec) -> (RunConfig, Trajectory) {
    let g = line(32);
    let bg = Background::new(ScalarField::from_fn(g.clone(), |x| 1.0 + 0.5 * x[0].sin()).unwrap());
    let cfg = RunConfig::new(bg, f, ScalarField::constant(g, 1.0), 1.0);
    let traj = flow::run(&cfg).unwrap();
    (cfg, traj)
}

fn run(id: &str, cfg: &RunConfig, traj: &Trajectory) -> TheoremReport {
    let reg = CheckRegistry::builtin();
    reg.get(id).unwrap().run(&CheckContext::new(traj, &cfg.background, &cfg.f))
}

fn assert_control(id: &str, cfg: &RunConfig, traj: &Trajectory, tamper: impl FnOnce(&mut Trajectory)) {
    let good = run(id, cfg, traj);
    assert_eq!(good.status, Status::Pass, "{id} on the genuine run: {:?}", good.notes);
    let mut bad = traj.clone();
    tamper(&mut bad);
    let rep = run(id, cfg, &bad);
    assert_eq!(rep.status, Status::Fail, "{id} on the tampered run");
}

fn mid(traj: &Trajectory) -> usize {
    traj.records.len() / 2
}

#[test]
fn minmax_catches_rising_max() {
    let (cfg, traj) = negative();
    assert_control("minmax", &cfg, &traj, |t| {
        let i = mid(t);
        t.records[i].s_max += 1e-3;
    });
}

#[test]
fn decay_catches_slow_tail() {
    let (cfg, traj) = negative();
    assert_control("decay", &cfg, &traj, |t| {
        let last = t.records.len() - 1;
        t.records[last].fsa_sup = t.records[0].fsa_sup;
    });
}

#[test]
fn u_bounds_catches_escape() {
    let (cfg, traj) = negative();
    assert_control("u_bounds", &cfg, &traj, |t| {
        let i = mid(t);
        t.records[i].u_max = 100.0;
    });
    let (cfg, traj) = flat();
    assert_control("u_bounds", &cfg, &traj, |t| {
        let i = mid(t);
        t.records[i].u_min *= 0.5;
    });
}

#[test]
fn lnhalf_catches_growth() {
    let (cfg, traj) = positive(fzoo::classical());
    assert_control("lnhalf", &cfg, &traj, |t| {
        let i = mid(t);
        t.records[i].lpn2 += 1e-3;
    });
}

#[test]
fn positive_bounds_catch_collapse() {
    let (cfg, traj) = positive(fzoo::expdecay(1.0).unwrap());
    assert_control("positive_bounds", &cfg, &traj, |t| {
        let i = mid(t);
        t.records[i].s_min = 1e-6;
    });
    let (cfg, traj) = positive(fzoo::expdecay(1.0).unwrap());
    assert_control("positive_bounds", &cfg, &traj, |t| {
        let i = mid(t);
        t.records[i].s_max = 1e3;
    });
}

#[test]
fn flat_identity_catches_moment() {
    let (cfg, traj) = flat();
    assert_control("flat_identity", &cfg, &traj, |t| {
        let i = mid(t);
        t.records[i].flat_moment = 1e-4;
    });
}

#[test]
fn stationary_catches_spread() {
    let (cfg, traj) = negative();
    assert_eq!(traj.termination, Termination::Stationary);
    assert_control("stationary", &cfg, &traj, |t| {
        let last = t.records.len() - 1;
        t.records[last].s_max += 1e-3;
    });
}

#[test]
fn checks_outside_their_case_are_not_applicable() {
    let (cfg, traj) = flat();
    for id in ["decay", "lnhalf", "positive_bounds"] {
        assert_eq!(run(id, &cfg, &traj).status, Status::NotApplicable, "{id}");
    }
    let (cfg, traj) = negative();
    assert_eq!(run("flat_identity", &cfg, &traj).status, Status::NotApplicable);
    assert_eq!(run("rescale", &cfg, &traj).status, Status::NotApplicable, "rescale needs the config");
}

#[test]
fn registry_lists_and_rejects() {
    let reg = CheckRegistry::builtin();
    let ids: Vec<_> = reg.ids().collect();
    assert!(ids.contains(&"minmax") && ids.contains(&"identities"));
    assert!(reg.get("nonsense").is_err());
    let (cfg, traj) = flat();
    let reps = reg.run(Some(&[]), &CheckContext::new(&traj, &cfg.background, &cfg.f)).unwrap();
    assert!(reps.is_empty());
    assert!(!diagnostics::any_failed(&reps));
}

/// An increasing f bypasses certification; the flow it drives breaks containment.
#[test]
fn minmax_catches_increasing_f() {
    let (cfg, good) = negative();
    let wrong = FSpec::new("increasing", Arc::new(FnProfile::new(|x| x, |_| 1.0, |_| 0.0)), Interval::REAL_LINE);
    let mut state = ConformalState::new(cfg.u0.clone(), 0.0).unwrap();
    let mut traj = good.clone();
    traj.records.clear();
    traj.snapshots.clear();
    let dt = 1e-4;
    for k in 0..50 {
        let ev = conformal::evaluate(&cfg.background, &state.u, &wrong).unwrap();
        let mut rec = flow::record_state(&cfg.background, &state.u, &ev, FlowKind::Normalized).unwrap();
        rec.step = k;
        rec.t = state.t;
        traj.records.push(rec);
        state = flow::step(&cfg.background, &state, &wrong, dt, &Rk4, FlowKind::Normalized).unwrap();
    }
    traj.termination = Termination::TimeReached;
    let rep = run("minmax", &cfg, &traj);
    assert_eq!(rep.status, Status::Fail, "{:?}", rep.measured);
}
