//! JSON run configuration.
//!
//! A document has the sections `grid`, `background`, `u0`, `f`, `time`,
//! `outputs` and `checks`. Fields are written as short strings:
//! `constant:<v>`, `sinusoidal:<mean>,<amp>,<axis>`, `cosine:<mean>,<amp>,<axis>`
//! or `file:<path>`. Relative file paths resolve against the config's directory.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::conformal::Background;
use crate::error::{Error, Result};
use crate::flow::{self, DtPolicy, FlowKind, RunConfig};
use crate::fzoo::{FConfig, FunctionRegistry};
use crate::grid::{GridSpec, ScalarField};
use crate::io;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub points: Vec<usize>,
    /// One period per axis, or a single value for all of them. Defaults to 2π.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Periods>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Periods {
    Same(f64),
    PerAxis(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DtSection {
    Adaptive {
        #[serde(default = "default_safety")]
        safety: f64,
    },
    Fixed(f64),
}

fn default_safety() -> f64 {
    flow::DEFAULT_SAFETY
}

impl Default for DtSection {
    fn default() -> Self {
        DtSection::Adaptive { safety: default_safety() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub dt: DtSection,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "yes")]
    pub renormalize_volume: bool,
    #[serde(default = "one")]
    pub log_cadence: usize,
    #[serde(default = "default_flow")]
    pub flow: FlowKind,
}

fn default_scheme() -> String {
    "rk4".into()
}
fn default_stop_tol() -> f64 {
    flow::DEFAULT_STOP_TOL
}
fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn default_flow() -> FlowKind {
    FlowKind::Normalized
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Snapshot every this many steps; 0 keeps only the first and last state.
    #[serde(default)]
    pub snapshot_cadence: usize,
}

/// The document as written on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub grid: GridSection,
    pub background: String,
    pub u0: String,
    pub f: FConfig,
    pub time: TimeSection,
    #[serde(default)]
    pub outputs: OutputSection,
    /// Check ids for `verify`; absent means every registered check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FieldSpec {
    Constant(f64),
    Sinusoidal { mean: f64, amplitude: f64, axis: usize },
    Cosine { mean: f64, amplitude: f64, axis: usize },
    File(PathBuf),
}

fn numbers(kind: &str, body: &str, want: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = body
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("{kind}: {e} in `{body}`")))?;
    if vals.len() != want && !(want == 3 && vals.len() == 2) {
        return Err(Error::Config(format!("{kind} takes {want} numbers, got `{body}`")));
    }
    Ok(vals)
}

fn axis_of(kind: &str, vals: &[f64]) -> Result<usize> {
    let a = vals.get(2).copied().unwrap_or(0.0);
    if a < 0.0 || a.fract() != 0.0 {
        return Err(Error::Config(format!("{kind}: axis must be a nonnegative integer, got {a}")));
    }
    Ok(a as usize)
}

impl FieldSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, body) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("field spec `{s}` lacks a `kind:` prefix")))?;
        let kind = kind.trim();
        match kind {
            "constant" => Ok(FieldSpec::Constant(numbers(kind, body, 1)?[0])),
            "sinusoidal" | "cosine" => {
                let v = numbers(kind, body, 3)?;
                let axis = axis_of(kind, &v)?;
                let (mean, amplitude) = (v[0], v[1]);
                Ok(if kind == "cosine" {
                    FieldSpec::Cosine { mean, amplitude, axis }
                } else {
                    FieldSpec::Sinusoidal { mean, amplitude, axis }
                })
            }
            "file" => Ok(FieldSpec::File(PathBuf::from(body.trim()))),
            other => Err(Error::Unknown {
                kind: "field kind",
                name: other.to_string(),
            }),
        }
    }

    pub fn to_spec_string(&self) -> String {
        match self {
            FieldSpec::Constant(v) => format!("constant:{v}"),
            FieldSpec::Sinusoidal { mean, amplitude, axis } => format!("sinusoidal:{mean},{amplitude},{axis}"),
            FieldSpec::Cosine { mean, amplitude, axis } => format!("cosine:{mean},{amplitude},{axis}"),
            FieldSpec::File(p) => format!("file:{}", p.display()),
        }
    }

    pub fn build(&self, grid: &Arc<GridSpec>, base: &Path) -> Result<ScalarField> {
        let wave = |mean: f64, amplitude: f64, axis: usize, cos: bool| {
            if axis >= grid.active_dims() {
                return Err(Error::Config(format!(
                    "axis {axis} out of range for a {}-axis grid",
                    grid.active_dims()
                )));
            }
            let k = TAU / grid.periods()[axis];
            ScalarField::from_fn(grid.clone(), |x| {
                let phase = k * x[axis];
                mean + amplitude * if cos { phase.cos() } else { phase.sin() }
            })
        };
        match self {
            FieldSpec::Constant(v) => ScalarField::new(grid.clone(), vec![*v; grid.len()]),
            FieldSpec::Sinusoidal { mean, amplitude, axis } => wave(*mean, *amplitude, *axis, false),
            FieldSpec::Cosine { mean, amplitude, axis } => wave(*mean, *amplitude, *axis, true),
            FieldSpec::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                let field = io::read_field(&path)?;
                if **field.grid() != **grid {
                    return Err(Error::Config(format!(
                        "{} was written on a different grid",
                        path.display()
                    )));
                }
                // rebuild on the shared grid so fields compare as same-grid
                ScalarField::new(grid.clone(), field.into_values())
            }
        }
    }

    /// Makes a relative file path absolute with respect to `base`.
    pub fn absolutized(&self, base: &Path) -> FieldSpec {
        match self {
            FieldSpec::File(p) if !p.is_absolute() => {
                let joined = base.join(p);
                FieldSpec::File(joined.canonicalize().unwrap_or(joined))
            }
            other => other.clone(),
        }
    }
}

/// Options that are not part of the document.
#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub certification_samples: usize,
    pub seed: Option<u64>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            certification_samples: crate::fzoo::DEFAULT_SAMPLES,
            seed: None,
        }
    }
}

/// A parsed document together with the directory its relative paths refer to.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub doc: ConfigDoc,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_value(value: Value, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let doc: ConfigDoc =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            doc,
            base_dir: base_dir.into(),
        })
    }

    pub fn from_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_value(value, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base)
    }

    pub fn grid(&self) -> Result<Arc<GridSpec>> {
        let g = &self.doc.grid;
        let periods = match &g.period {
            None => vec![TAU; g.points.len()],
            Some(Periods::Same(l)) => vec![*l; g.points.len()],
            Some(Periods::PerAxis(v)) => v.clone(),
        };
        GridSpec::new(g.n, g.points.clone(), periods)
    }

    /// Builds and validates the run configuration, certifying `f` on the way.
    pub fn build(&self, opts: &BuildOptions) -> Result<RunConfig> {
        let grid = self.grid()?;
        let s0 = FieldSpec::parse(&self.doc.background)?.build(&grid, &self.base_dir)?;
        let u0 = FieldSpec::parse(&self.doc.u0)?.build(&grid, &self.base_dir)?;
        let registry =
            FunctionRegistry::builtin().with_certification(opts.certification_samples, opts.seed);
        let f = registry.build(&self.doc.f)?;
        let t = &self.doc.time;
        let mut cfg = RunConfig::new(Background::new(s0), f, u0, t.t_final);
        cfg.dt_policy = match t.dt {
            DtSection::Adaptive { safety } => DtPolicy::Adaptive { safety },
            DtSection::Fixed(dt) => DtPolicy::Fixed(dt),
        };
        flow::SchemeRegistry::builtin().get(&t.scheme)?;
        cfg.scheme = t.scheme.clone();
        cfg.stop_tol = t.stop_tol;
        cfg.renormalize_volume = t.renormalize_volume;
        cfg.log_cadence = t.log_cadence;
        cfg.flow = t.flow;
        cfg.snapshot_cadence = self.doc.outputs.snapshot_cadence;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The document with every `file:` path made absolute, for copying next to results.
    pub fn portable(&self) -> Result<ConfigDoc> {
        let mut doc = self.doc.clone();
        doc.background = FieldSpec::parse(&doc.background)?
            .absolutized(&self.base_dir)
            .to_spec_string();
        doc.u0 = FieldSpec::parse(&doc.u0)?.absolutized(&self.base_dir).to_spec_string();
        Ok(doc)
    }
}

/// Sets `value` at a dotted path such as `time.dt` or `grid.points`, creating
/// intermediate objects as needed.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        if key.is_empty() {
            return Err(Error::Config(format!("empty segment in path `{path}`")));
        }
        if !cur.is_object() {
            if cur.is_null() {
                *cur = Value::Object(Default::default());
            } else {
                return Err(Error::Config(format!("`{path}` descends into a non-object")));
            }
        }
        let map = cur.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            map.insert((*key).to_string(), value);
            return Ok(());
        }
        cur = map.entry((*key).to_string()).or_insert(Value::Null);
    }
    unreachable!("split always yields at least one segment")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn doc() -> Value {
        json!({
            "grid": {"n": 4, "points": [32]},
            "background": "sinusoidal:-1.5,0.4,0",
            "u0": "constant:1",
            "f": "classical",
            "time": {"t_final": 0.5}
        })
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = LoadedConfig::from_value(doc(), ".").unwrap().build(&BuildOptions::default()).unwrap();
        assert_eq!(cfg.dt_policy, DtPolicy::Adaptive { safety: 0.8 });
        assert_eq!(cfg.scheme, "rk4");
        assert_eq!(cfg.stop_tol, 1e-8);
        assert!(cfg.renormalize_volume);
        assert_eq!(cfg.flow, FlowKind::Normalized);
        assert_eq!(cfg.snapshot_cadence, 0);
        let s0 = cfg.background.s0();
        let h = TAU / 32.0;
        assert!((s0.values()[8] - (-1.5 + 0.4 * (8.0 * h).sin())).abs() < 1e-15);
    }

    #[test]
    fn field_specs_parse() {
        assert_eq!(FieldSpec::parse("constant: -2").unwrap(), FieldSpec::Constant(-2.0));
        assert_eq!(
            FieldSpec::parse("sinusoidal:1,0.5").unwrap(),
            FieldSpec::Sinusoidal { mean: 1.0, amplitude: 0.5, axis: 0 }
        );
        assert_eq!(
            FieldSpec::parse("cosine:1,0.3,1").unwrap(),
            FieldSpec::Cosine { mean: 1.0, amplitude: 0.3, axis: 1 }
        );
        assert!(FieldSpec::parse("1.0").is_err());
        assert!(FieldSpec::parse("gaussian:1").is_err());
        assert!(FieldSpec::parse("sinusoidal:1,2,0.5").is_err());
        let s = FieldSpec::parse("cosine:1,0.3,0").unwrap();
        assert_eq!(FieldSpec::parse(&s.to_spec_string()).unwrap(), s);
    }

    #[test]
    fn period_forms() {
        let mut v = doc();
        v["grid"] = json!({"n": 5, "points": [16, 8], "period": 3.0});
        let g = LoadedConfig::from_value(v.clone(), ".").unwrap().grid().unwrap();
        assert_eq!(g.periods(), &[3.0, 3.0]);
        v["grid"]["period"] = json!([1.0, 2.0]);
        let g = LoadedConfig::from_value(v, ".").unwrap().grid().unwrap();
        assert_eq!(g.periods(), &[1.0, 2.0]);
    }

    #[test]
    fn sections_parse() {
        let mut v = doc();
        v["f"] = json!({"name": "power", "kappa": 1.5});
        v["background"] = json!("constant:1");
        v["time"] = json!({"t_final": 1, "dt": {"fixed": 0.001}, "flow": "non_normalized",
                           "renormalize_volume": false, "scheme": "euler"});
        v["outputs"] = json!({"snapshot_cadence": 5});
        let cfg = LoadedConfig::from_value(v, ".").unwrap().build(&BuildOptions::default()).unwrap();
        assert_eq!(cfg.dt_policy, DtPolicy::Fixed(0.001));
        assert_eq!(cfg.flow, FlowKind::NonNormalized);
        assert_eq!(cfg.scheme, "euler");
        assert_eq!(cfg.snapshot_cadence, 5);
        assert!(cfg.f.name().starts_with("power"));
    }

    #[test]
    fn rejects_bad_documents() {
        let opts = BuildOptions::default();
        let mut v = doc();
        v["f"] = json!({"name": "table", "points": [[0, 0], [1, 1], [2, 2]]});
        assert!(LoadedConfig::from_value(v, ".").unwrap().build(&opts).is_err());

        let mut v = doc();
        v["time"]["t_final"] = json!(0.0);
        assert!(LoadedConfig::from_value(v, ".").unwrap().build(&opts).is_err());

        let mut v = doc();
        v["time"]["dt"] = json!({"adaptive": {"safety": 1.5}});
        assert!(LoadedConfig::from_value(v, ".").unwrap().build(&opts).is_err());

        let mut v = doc();
        v["time"]["scheme"] = json!("leapfrog");
        assert!(LoadedConfig::from_value(v, ".").unwrap().build(&opts).is_err());

        let mut v = doc();
        v["u0"] = json!("constant:-1");
        assert!(LoadedConfig::from_value(v, ".").unwrap().build(&opts).is_err());

        let mut v = doc();
        v["colour"] = json!("blue");
        assert!(LoadedConfig::from_value(v, ".").is_err());
    }

    #[test]
    fn file_fields_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let loaded = LoadedConfig::from_value(doc(), dir.path()).unwrap();
        let g = loaded.grid().unwrap();
        let field = FieldSpec::parse("cosine:1,0.2,0").unwrap().build(&g, dir.path()).unwrap();
        io::write_field(&dir.path().join("u0.field"), &field).unwrap();

        let mut v = doc();
        v["u0"] = json!("file:u0.field");
        let loaded = LoadedConfig::from_value(v, dir.path()).unwrap();
        let cfg = loaded.build(&BuildOptions::default()).unwrap();
        assert_eq!(cfg.u0.values(), field.values());
        let portable = loaded.portable().unwrap();
        assert!(portable.u0.starts_with("file:/"));

        let mut v = doc();
        v["grid"]["points"] = json!([64]);
        v["u0"] = json!("file:u0.field");
        assert!(LoadedConfig::from_value(v, dir.path()).unwrap().build(&BuildOptions::default()).is_err());
    }

    #[test]
    fn dotted_paths() {
        let mut v = doc();
        set_path(&mut v, "time.dt", json!({"fixed": 0.01})).unwrap();
        set_path(&mut v, "outputs.snapshot_cadence", json!(3)).unwrap();
        assert_eq!(v["time"]["dt"]["fixed"], json!(0.01));
        assert_eq!(v["outputs"]["snapshot_cadence"], json!(3));
        assert!(set_path(&mut v, "background.x", json!(1)).is_err());
    }
}
