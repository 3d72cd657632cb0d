//! Batch front end: `run`, `verify`, `sweep` and `compare`.
//!
//! Each command returns a process exit code: 0 on success, 2 when a flow
//! terminated abnormally or a check/comparison failed, 1 on bad input.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};

use conflow::config::{BuildOptions, LoadedConfig};
use conflow::diagnostics::{self, CheckContext, CheckRegistry, Status, TheoremReport};
use conflow::flow::{self, FlowKind, RunConfig, Trajectory};
use conflow::io;

pub mod sweep;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

/// Tolerances enforced by `compare`.
pub const SHIFT_TOL: f64 = 1e-10;
pub const RESCALE_TOL: f64 = diagnostics::RESCALE_TOL;

pub const REPORT_FILE: &str = "report.json";
pub const COMPARE_FILE: &str = "compare.json";

#[derive(Clone, Debug)]
pub struct Options {
    /// Output root; each run writes into a subdirectory named after its config.
    pub out: PathBuf,
    /// Seed for the random probes of monotonicity certification.
    pub seed: Option<u64>,
    pub jobs: usize,
    pub quiet: bool,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            out: PathBuf::from("conflow-out"),
            seed: None,
            jobs: 0,
            quiet: false,
        }
    }
}

impl Options {
    fn build(&self) -> BuildOptions {
        BuildOptions {
            seed: self.seed,
            ..BuildOptions::default()
        }
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

/// A configuration ready to run, plus what is written next to its results.
pub struct Prepared {
    pub loaded: LoadedConfig,
    pub config: RunConfig,
}

pub fn prepare(loaded: LoadedConfig, opts: &Options) -> anyhow::Result<Prepared> {
    let config = loaded.build(&opts.build())?;
    Ok(Prepared { loaded, config })
}

pub struct Completed {
    pub dir: PathBuf,
    pub traj: Trajectory,
    pub summary: io::Summary,
}

/// Runs a prepared configuration and writes its results into `dir`.
pub fn execute(p: &Prepared, dir: &Path) -> anyhow::Result<Completed> {
    let traj = flow::run(&p.config)?;
    let doc = p.loaded.portable()?;
    let summary = io::write_run(dir, &doc, &p.config.background, p.config.f.name(), &traj)
        .with_context(|| format!("writing results to {}", dir.display()))?;
    Ok(Completed {
        dir: dir.to_path_buf(),
        traj,
        summary,
    })
}

fn termination_code(t: flow::Termination) -> i32 {
    if t.is_success() {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

pub fn cmd_run(config_path: &Path, opts: &Options) -> i32 {
    let prepared = match LoadedConfig::load(config_path)
        .map_err(anyhow::Error::from)
        .and_then(|l| prepare(l, opts))
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {}: {e:#}", config_path.display());
            return EXIT_INPUT;
        }
    };
    let dir = opts.out.join(stem(config_path));
    match execute(&prepared, &dir) {
        Ok(done) => {
            let s = &done.summary;
            opts.say(format!(
                "{}: {} after {} steps at t={} ({})",
                config_path.display(),
                s.termination.as_str(),
                s.steps,
                s.t_end,
                dir.display()
            ));
            if let Some(m) = &s.message {
                eprintln!("{m}");
            }
            termination_code(s.termination)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    }
}

/// A trajectory with the background, f and settings that produced it.
pub struct Loaded {
    pub traj: Trajectory,
    pub config: RunConfig,
    pub checks: Option<Vec<String>>,
    pub dir: PathBuf,
}

/// Reads a run directory written by `run`.
pub fn load_run_dir(dir: &Path, opts: &Options) -> anyhow::Result<Loaded> {
    if !dir.join(io::SUMMARY_FILE).is_file() {
        bail!("{} is not a run directory (no {})", dir.display(), io::SUMMARY_FILE);
    }
    let loaded = LoadedConfig::load(&dir.join(io::CONFIG_FILE))?;
    let mut config = loaded.build(&opts.build())?;
    let s0 = io::read_field(&dir.join(io::BACKGROUND_FILE))?;
    if !s0.same_grid(config.background.s0()) {
        bail!("background field in {} does not match its config grid", dir.display());
    }
    config.background = conflow::Background::new(s0);
    let traj = io::read_trajectory(dir).with_context(|| format!("reading {}", dir.display()))?;
    Ok(Loaded {
        traj,
        config,
        checks: loaded.doc.checks,
        dir: dir.to_path_buf(),
    })
}

/// Loads a run directory, or runs a config file first and loads the result.
fn load_or_run(input: &Path, opts: &Options) -> anyhow::Result<Loaded> {
    if input.is_dir() {
        return load_run_dir(input, opts);
    }
    if !input.is_file() {
        bail!("{} does not exist", input.display());
    }
    let loaded = LoadedConfig::load(input)?;
    let checks = loaded.doc.checks.clone();
    let prepared = prepare(loaded, opts)?;
    let dir = opts.out.join(stem(input));
    let done = execute(&prepared, &dir)?;
    Ok(Loaded {
        traj: done.traj,
        config: prepared.config,
        checks,
        dir,
    })
}

/// Runs the selected checks concurrently; reports come back in request order.
pub fn run_checks(
    registry: &CheckRegistry,
    ids: &[String],
    traj: &Trajectory,
    config: &RunConfig,
) -> anyhow::Result<Vec<TheoremReport>> {
    let checks = ids
        .iter()
        .map(|id| registry.get(id))
        .collect::<conflow::Result<Vec<_>>>()?;
    let ctx = CheckContext::new(traj, &config.background, &config.f).with_config(config);
    Ok(checks.par_iter().map(|c| c.run(&ctx)).collect())
}

fn reports_json(reports: &[TheoremReport]) -> Value {
    let mut map = Map::new();
    for r in reports {
        map.insert(r.id.clone(), serde_json::to_value(r).unwrap_or(Value::Null));
    }
    Value::Object(map)
}

/// `checks = None` falls back to the config's list, then to every check.
pub fn cmd_verify(input: &Path, checks: Option<Vec<String>>, opts: &Options) -> i32 {
    let loaded = match load_or_run(input, opts) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_INPUT;
        }
    };
    let registry = CheckRegistry::builtin();
    let ids = checks
        .or(loaded.checks.clone())
        .unwrap_or_else(|| registry.ids().map(str::to_string).collect());
    let reports = match run_checks(&registry, &ids, &loaded.traj, &loaded.config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_INPUT;
        }
    };
    let path = loaded.dir.join(REPORT_FILE);
    if let Err(e) = io::write_json(&path, &reports_json(&reports)) {
        eprintln!("error: writing {}: {e}", path.display());
        return EXIT_INPUT;
    }
    opts.say(diagnostics::summary_table(&reports));
    opts.say(format!("report written to {}", path.display()));
    if diagnostics::any_failed(&reports) {
        EXIT_FAILED
    } else {
        EXIT_OK
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CompareMode {
    /// Same flow with f and f + c: the u series must coincide.
    Shift,
    /// Normalized run against a non-normalized run after Hamilton rescaling.
    Rescale,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub mode: CompareMode,
    pub distance: f64,
    pub tolerance: f64,
    pub matched: usize,
    pub compared_to: usize,
    pub passed: bool,
}

pub fn compare(a: &Loaded, b: &Loaded, mode: CompareMode) -> anyhow::Result<Comparison> {
    let (dist, matched, tolerance) = match mode {
        CompareMode::Shift => {
            if a.traj.flow != b.traj.flow {
                bail!("shift comparison needs two runs of the same flow");
            }
            let (d, m) = flow::interpolated_distance(&a.traj, &b.traj)?;
            (d, m, SHIFT_TOL)
        }
        CompareMode::Rescale => {
            if a.traj.flow != FlowKind::Normalized || b.traj.flow != FlowKind::NonNormalized {
                bail!("rescale comparison takes a normalized run, then a non-normalized one");
            }
            if b.traj.renormalized {
                bail!("the non-normalized run must not renormalize its volume");
            }
            let rescaled = flow::hamilton_rescale(&b.config.background, &b.traj, &b.config.f)?;
            let (d, m) = flow::interpolated_distance(&a.traj, &rescaled)?;
            (d, m, RESCALE_TOL)
        }
    };
    let total = a.traj.snapshots.len();
    Ok(Comparison {
        mode,
        distance: dist,
        tolerance,
        matched,
        compared_to: total,
        passed: matched > 0 && dist <= tolerance,
    })
}

pub fn cmd_compare(run_a: &Path, run_b: &Path, mode: CompareMode, opts: &Options) -> i32 {
    let result = load_run_dir(run_a, opts)
        .and_then(|a| Ok((a, load_run_dir(run_b, opts)?)))
        .and_then(|(a, b)| compare(&a, &b, mode));
    let cmp = match result {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_INPUT;
        }
    };
    opts.say(format!(
        "{:?}: sup distance {:.3e} over {} of {} snapshots (tolerance {:e}) -> {}",
        cmp.mode,
        cmp.distance,
        cmp.matched,
        cmp.compared_to,
        cmp.tolerance,
        if cmp.passed { "pass" } else { "fail" }
    ));
    if let Err(e) = fs::create_dir_all(&opts.out)
        .map_err(conflow::Error::from)
        .and_then(|_| io::write_json(&opts.out.join(COMPARE_FILE), &cmp))
    {
        eprintln!("error: writing comparison: {e}");
        return EXIT_INPUT;
    }
    if cmp.passed {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

pub use sweep::cmd_sweep;

/// Status label used in tables.
pub fn status_str(s: Status) -> &'static str {
    match s {
        Status::Pass => "pass",
        Status::Fail => "fail",
        Status::Inconclusive => "inconclusive",
        Status::NotApplicable => "not_applicable",
    }
}
