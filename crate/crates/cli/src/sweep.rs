//! Parameter sweeps over a base configuration.
//!
//! A plan is JSON:
//!
//! ```json
//! {
//!   "base": "negative.json",
//!   "axes": {"f": ["classical", {"name": "expdecay", "alpha": 1}], "grid.points": [[64], [128]]},
//!   "variations": [{"id": "fixed", "set": {"time.dt": {"fixed": 0.0005}}}],
//!   "out": "sweep",
//!   "jobs": 4
//! }
//! ```
//!
//! Every explicit variation (or the base alone, when there are none) is crossed
//! with the cartesian product of the axes. Runs go to `<out>/<id>/` and the
//! aggregate table to `<out>/aggregate.csv` once all of them have finished.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use conflow::config::{set_path, LoadedConfig};
use conflow::diagnostics::{self, CheckContext};

use crate::{execute, prepare, status_str, Options, EXIT_FAILED, EXIT_INPUT, EXIT_OK};

pub const AGGREGATE_FILE: &str = "aggregate.csv";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variation {
    pub id: String,
    #[serde(default)]
    pub set: Map<String, Value>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDoc {
    /// A config path relative to the plan, or an inline config document.
    pub base: Value,
    #[serde(default)]
    pub axes: Map<String, Value>,
    #[serde(default)]
    pub variations: Vec<Variation>,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub jobs: Option<usize>,
}

/// One fully expanded run of a sweep.
#[derive(Clone, Debug)]
pub struct Job {
    pub id: String,
    pub doc: Value,
}

#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub jobs: Vec<Job>,
    pub base_dir: PathBuf,
    pub out: PathBuf,
    pub parallelism: usize,
}

fn label(v: &Value) -> String {
    let raw = match v {
        Value::String(s) => s.clone(),
        Value::Array(xs) => xs.iter().map(label).collect::<Vec<_>>().join("x"),
        // name first, then the parameters in key order
        Value::Object(m) => m
            .get("name")
            .into_iter()
            .chain(m.iter().filter(|(k, _)| *k != "name").map(|(_, v)| v))
            .map(label)
            .collect::<Vec<_>>()
            .join("-"),
        other => other.to_string(),
    };
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '-' })
        .collect()
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "._-=".contains(c))
}

impl SweepPlan {
    pub fn parse(text: &str, plan_dir: &Path, out_root: &Path, default_name: &str) -> anyhow::Result<Self> {
        let plan: PlanDoc = serde_json::from_str(text).context("parsing sweep plan")?;
        let (base, base_dir) = match &plan.base {
            Value::String(p) => {
                let path = plan_dir.join(p);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading base config {}", path.display()))?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (serde_json::from_str::<Value>(&text)?, dir)
            }
            Value::Object(_) => (plan.base.clone(), plan_dir.to_path_buf()),
            _ => bail!("`base` must be a path or a config object"),
        };

        let mut stems: Vec<(String, Value)> = if plan.variations.is_empty() {
            vec![(String::new(), base)]
        } else {
            let mut out = Vec::new();
            for var in &plan.variations {
                let mut doc = base.clone();
                for (path, value) in &var.set {
                    set_path(&mut doc, path, value.clone())?;
                }
                out.push((var.id.clone(), doc));
            }
            out
        };

        for (path, values) in &plan.axes {
            let Value::Array(values) = values else {
                bail!("axis `{path}` must list its values");
            };
            if values.is_empty() {
                bail!("axis `{path}` has no values");
            }
            let mut next = Vec::with_capacity(stems.len() * values.len());
            for (id, doc) in &stems {
                for v in values {
                    let mut d = doc.clone();
                    set_path(&mut d, path, v.clone())?;
                    let part = format!("{}={}", path, label(v));
                    let id = if id.is_empty() { part } else { format!("{id}_{part}") };
                    next.push((id, d));
                }
            }
            stems = next;
        }

        let mut seen = BTreeSet::new();
        let mut jobs = Vec::with_capacity(stems.len());
        for (id, doc) in stems {
            let id = if id.is_empty() { default_name.to_string() } else { id };
            if !valid_id(&id) {
                bail!("variation id `{id}` is not usable as a directory name");
            }
            if !seen.insert(id.clone()) {
                bail!("variation id `{id}` appears twice");
            }
            jobs.push(Job { id, doc });
        }

        Ok(Self {
            jobs,
            base_dir,
            out: out_root.join(plan.out.as_deref().unwrap_or(default_name)),
            parallelism: plan.jobs.unwrap_or(1).max(1),
        })
    }

    pub fn load(path: &Path, out_root: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sweep".into());
        Self::parse(&text, &dir, out_root, &name)
    }
}

/// One row of the aggregate table.
#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub id: String,
    pub case: String,
    pub f: String,
    pub points: String,
    pub termination: String,
    pub steps: Option<usize>,
    pub t_end: Option<f64>,
    #[serde(rename = "B_pred")]
    pub b_pred: Option<f64>,
    #[serde(rename = "B_fit")]
    pub b_fit: Option<f64>,
    pub fit_residual: Option<f64>,
    pub decay: String,
    pub error: String,
}

fn run_job(job: &Job, plan: &SweepPlan, opts: &Options) -> (Row, i32) {
    let mut row = Row {
        id: job.id.clone(),
        case: String::new(),
        f: String::new(),
        points: String::new(),
        termination: String::new(),
        steps: None,
        t_end: None,
        b_pred: None,
        b_fit: None,
        fit_residual: None,
        decay: String::new(),
        error: String::new(),
    };
    let prepared = match LoadedConfig::from_value(job.doc.clone(), &plan.base_dir)
        .map_err(anyhow::Error::from)
        .and_then(|l| prepare(l, opts))
    {
        Ok(p) => p,
        Err(e) => {
            row.termination = "config_error".into();
            row.error = format!("{e:#}");
            return (row, EXIT_INPUT);
        }
    };
    let cfg = &prepared.config;
    row.case = format!("{:?}", cfg.background.case()).to_lowercase();
    row.f = cfg.f.name().to_string();
    row.points = cfg
        .background
        .grid()
        .points()
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x");

    let done = match execute(&prepared, &plan.out.join(&job.id)) {
        Ok(d) => d,
        Err(e) => {
            row.termination = "error".into();
            row.error = format!("{e:#}");
            return (row, EXIT_INPUT);
        }
    };
    row.termination = done.summary.termination.as_str().into();
    row.steps = Some(done.summary.steps);
    row.t_end = Some(done.summary.t_end);
    let ctx = CheckContext::new(&done.traj, &cfg.background, &cfg.f).with_config(cfg);
    let decay = diagnostics::check_decay(&ctx);
    row.b_pred = decay.predicted.get("B").copied();
    row.b_fit = decay.measured.get("B_fit").copied();
    row.fit_residual = decay.measured.get("fit_residual").copied();
    row.decay = status_str(decay.status).into();
    let code = if done.summary.termination.is_success() { EXIT_OK } else { EXIT_FAILED };
    (row, code)
}

/// Runs every job on a bounded pool. Each run is single-threaded and writes
/// only its own directory, so the pool size never changes any run's output.
pub fn run_plan(plan: &SweepPlan, opts: &Options) -> anyhow::Result<(Vec<Row>, i32)> {
    std::fs::create_dir_all(&plan.out)?;
    let threads = if opts.jobs > 0 { opts.jobs } else { plan.parallelism };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let results: Vec<(Row, i32)> = pool.install(|| plan.jobs.par_iter().map(|j| run_job(j, plan, opts)).collect());

    let mut w = csv::Writer::from_path(plan.out.join(AGGREGATE_FILE))?;
    for (row, _) in &results {
        w.serialize(row)?;
    }
    w.flush()?;
    let code = results.iter().map(|(_, c)| *c).max().unwrap_or(EXIT_OK);
    // input errors outrank abnormal terminations
    let code = if results.iter().any(|(_, c)| *c == EXIT_INPUT) { EXIT_INPUT } else { code };
    Ok((results.into_iter().map(|(r, _)| r).collect(), code))
}

pub fn cmd_sweep(plan_path: &Path, opts: &Options) -> i32 {
    let plan = match SweepPlan::load(plan_path, &opts.out) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_INPUT;
        }
    };
    match run_plan(&plan, opts) {
        Ok((rows, code)) => {
            for r in &rows {
                let b = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
                opts.say(format!(
                    "{:<40} {:<10} {:<20} B_pred={:<8} B_fit={:<8} {}",
                    r.id,
                    r.case,
                    r.termination,
                    b(r.b_pred),
                    b(r.b_fit),
                    r.error
                ));
            }
            opts.say(format!("aggregate written to {}", plan.out.join(AGGREGATE_FILE).display()));
            code
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    }
}
