//! On-disk formats: field snapshots, CSV time series and run directories.
//!
//! A field file is one text header line
//! `conflow-field v1 n=<n> dims=<d> shape=<N1,...> period=<L1,...>`
//! followed by the values as little-endian `f64` in row-major order.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conformal::{Background, CurvatureCase};
use crate::error::{Error, Result};
use crate::flow::{FlowKind, Record, Snapshot, Termination, Trajectory};
use crate::grid::{GridSpec, ScalarField};

const MAGIC: &str = "conflow-field";
const VERSION: &str = "v1";

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const EXTRA_FILE: &str = "diagnostics_extra.csv";
pub const DT_FILE: &str = "dt.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const BACKGROUND_FILE: &str = "background.field";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const SNAPSHOT_INDEX: &str = "index.csv";

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn field_header(grid: &GridSpec) -> String {
    format!(
        "{MAGIC} {VERSION} n={} dims={} shape={} period={}",
        grid.ambient_n(),
        grid.active_dims(),
        join(grid.points()),
        join(grid.periods())
    )
}

pub fn write_field_to(mut w: impl Write, field: &ScalarField) -> Result<()> {
    writeln!(w, "{}", field_header(field.grid()))?;
    let mut bytes = Vec::with_capacity(8 * field.len());
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    write_field_to(BufWriter::new(File::create(path)?), field)
}

fn parse_header(line: &str) -> Result<Arc<GridSpec>> {
    let bad = |m: &str| Error::Format(format!("{m} in header `{line}`"));
    let mut parts = line.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(bad("missing magic"));
    }
    if parts.next() != Some(VERSION) {
        return Err(bad("unsupported version"));
    }
    let (mut n, mut dims, mut shape, mut period) = (None, None, None, None);
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad("malformed key"))?;
        match k {
            "n" => n = Some(v.parse::<usize>().map_err(|_| bad("bad n"))?),
            "dims" => dims = Some(v.parse::<usize>().map_err(|_| bad("bad dims"))?),
            "shape" => {
                shape = Some(
                    v.split(',')
                        .map(str::parse::<usize>)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("bad shape"))?,
                )
            }
            "period" => {
                period = Some(
                    v.split(',')
                        .map(str::parse::<f64>)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("bad period"))?,
                )
            }
            _ => return Err(bad("unknown key")),
        }
    }
    let (n, dims, shape, period) = match (n, dims, shape, period) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => return Err(bad("incomplete")),
    };
    if shape.len() != dims {
        return Err(bad("dims disagrees with shape"));
    }
    GridSpec::new(n, shape, period)
}

pub fn read_field_from(r: impl Read) -> Result<ScalarField> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(Error::Format("header line is not terminated".into()));
    }
    let grid = parse_header(line.trim_end())?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::Format(format!(
            "expected {} bytes of data, found {}",
            8 * grid.len(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ScalarField::new(grid, values)
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    read_field_from(File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?)
}

// ---------------------------------------------------------------------------
// CSV series

#[derive(Serialize, Deserialize)]
struct SeriesRow {
    t: f64,
    dt: f64,
    #[serde(rename = "Smin")]
    s_min: f64,
    #[serde(rename = "Smax")]
    s_max: f64,
    #[serde(rename = "A")]
    a: f64,
    sigma: f64,
    vol: f64,
    #[serde(rename = "fSA_sup")]
    fsa_sup: f64,
    lp2: f64,
    lpn2: f64,
    umin: f64,
    umax: f64,
}

#[derive(Serialize, Deserialize)]
struct ExtraRow {
    step: usize,
    t: f64,
    lp1: f64,
    dudt_sup: f64,
    flat_moment: f64,
    step3: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_timeseries(w: impl Write, records: &[Record]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(SeriesRow {
            t: r.t,
            dt: r.dt,
            s_min: r.s_min,
            s_max: r.s_max,
            a: r.a,
            sigma: r.sigma,
            vol: r.vol,
            fsa_sup: r.fsa_sup,
            lp2: r.lp2,
            lpn2: r.lpn2,
            umin: r.u_min,
            umax: r.u_max,
        })
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_extra(w: impl Write, records: &[Record]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(ExtraRow {
            step: r.step,
            t: r.t,
            lp1: r.lp1,
            dudt_sup: r.dudt_sup,
            flat_moment: r.flat_moment,
            step3: r.step3,
        })
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Joins the two CSV series back into records.
pub fn read_records(series: impl Read, extra: impl Read) -> Result<Vec<Record>> {
    let mut a = csv::Reader::from_reader(series);
    let mut b = csv::Reader::from_reader(extra);
    let rows: Vec<SeriesRow> = a.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    let extras: Vec<ExtraRow> = b.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    if rows.len() != extras.len() {
        return Err(Error::Format(format!(
            "{} rows in the time series but {} in the extra diagnostics",
            rows.len(),
            extras.len()
        )));
    }
    rows.into_iter()
        .zip(extras)
        .map(|(r, e)| {
            if r.t.to_bits() != e.t.to_bits() {
                return Err(Error::Format(format!("time columns disagree at step {}", e.step)));
            }
            Ok(Record {
                step: e.step,
                t: r.t,
                dt: r.dt,
                s_min: r.s_min,
                s_max: r.s_max,
                a: r.a,
                sigma: r.sigma,
                vol: r.vol,
                fsa_sup: r.fsa_sup,
                lp1: e.lp1,
                lp2: r.lp2,
                lpn2: r.lpn2,
                u_min: r.umin,
                u_max: r.umax,
                dudt_sup: e.dudt_sup,
                flat_moment: e.flat_moment,
                step3: e.step3,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Run directories

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub termination: Termination,
    pub message: Option<String>,
    pub flow: FlowKind,
    pub case: CurvatureCase,
    pub f: String,
    pub steps: usize,
    pub records: usize,
    pub snapshots: usize,
    pub t_end: f64,
    pub initial_volume: f64,
    pub renormalized: bool,
    /// Final record; not read back, since non-finite entries are written as null.
    #[serde(skip_deserializing)]
    pub last: Option<Record>,
}

impl Summary {
    pub fn new(traj: &Trajectory, bg: &Background, f_name: &str) -> Self {
        Self {
            termination: traj.termination,
            message: traj.message.clone(),
            flow: traj.flow,
            case: bg.case(),
            f: f_name.to_string(),
            steps: traj.steps(),
            records: traj.records.len(),
            snapshots: traj.snapshots.len(),
            t_end: traj.final_time(),
            initial_volume: traj.initial_volume,
            renormalized: traj.renormalized,
            last: traj.records.last().cloned(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct IndexRow {
    step: usize,
    t: f64,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct DtRow {
    step: usize,
    dt: f64,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Writes everything a later `verify` or `compare` needs. `config` is the
/// portable document copied alongside the results.
pub fn write_run(
    dir: &Path,
    config: &impl Serialize,
    bg: &Background,
    f_name: &str,
    traj: &Trajectory,
) -> Result<Summary> {
    fs::create_dir_all(dir.join(SNAPSHOT_DIR))?;
    write_json(&dir.join(CONFIG_FILE), config)?;
    write_field(&dir.join(BACKGROUND_FILE), bg.s0())?;
    write_timeseries(BufWriter::new(File::create(dir.join(TIMESERIES_FILE))?), &traj.records)?;
    write_extra(BufWriter::new(File::create(dir.join(EXTRA_FILE))?), &traj.records)?;

    let mut dts = csv::Writer::from_path(dir.join(DT_FILE)).map_err(csv_err)?;
    for (i, &dt) in traj.dts.iter().enumerate() {
        dts.serialize(DtRow { step: i + 1, dt }).map_err(csv_err)?;
    }
    dts.flush()?;

    let snap_dir = dir.join(SNAPSHOT_DIR);
    let mut index = csv::Writer::from_path(snap_dir.join(SNAPSHOT_INDEX)).map_err(csv_err)?;
    for s in &traj.snapshots {
        let file = format!("u_{:08}.field", s.step);
        write_field(&snap_dir.join(&file), &s.u)?;
        index.serialize(IndexRow { step: s.step, t: s.t, file }).map_err(csv_err)?;
    }
    index.flush()?;

    let summary = Summary::new(traj, bg, f_name);
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let text = fs::read_to_string(dir.join(SUMMARY_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reloads a trajectory written by [`write_run`].
pub fn read_trajectory(dir: &Path) -> Result<Trajectory> {
    let summary = read_summary(dir)?;
    let records = read_records(
        File::open(dir.join(TIMESERIES_FILE))?,
        File::open(dir.join(EXTRA_FILE))?,
    )?;
    let dts = csv::Reader::from_path(dir.join(DT_FILE))
        .map_err(csv_err)?
        .deserialize::<DtRow>()
        .map(|r| r.map(|r| r.dt))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(csv_err)?;

    let snap_dir = dir.join(SNAPSHOT_DIR);
    let mut grid: Option<Arc<GridSpec>> = None;
    let mut snapshots = Vec::new();
    let mut index = csv::Reader::from_path(snap_dir.join(SNAPSHOT_INDEX)).map_err(csv_err)?;
    for row in index.deserialize::<IndexRow>() {
        let row = row.map_err(csv_err)?;
        let u = read_field(&snap_dir.join(&row.file))?;
        let g = grid.get_or_insert_with(|| u.grid().clone()).clone();
        if *g != **u.grid() {
            return Err(Error::GridMismatch);
        }
        snapshots.push(Snapshot {
            step: row.step,
            t: row.t,
            u: ScalarField::new(g, u.into_values())?,
        });
    }

    Ok(Trajectory {
        flow: summary.flow,
        records,
        snapshots,
        termination: summary.termination,
        message: summary.message,
        dts,
        initial_volume: summary.initial_volume,
        renormalized: summary.renormalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{self, RunConfig};
    use crate::fzoo;

    #[test]
    fn field_round_trip_is_bitwise() {
        let g = GridSpec::new(5, vec![8, 12], vec![1.0, 2.5]).unwrap();
        let u = ScalarField::from_fn(g.clone(), |x| 1.0 + 0.1 * x[0].sin() * x[1].cos() + 1e-300).unwrap();
        let mut buf = Vec::new();
        write_field_to(&mut buf, &u).unwrap();
        let head = String::from_utf8_lossy(&buf[..buf.iter().position(|&b| b == b'\n').unwrap()]).to_string();
        assert_eq!(head, "conflow-field v1 n=5 dims=2 shape=8,12 period=1,2.5");
        assert_eq!(buf.len(), head.len() + 1 + 8 * 96);
        let back = read_field_from(&buf[..]).unwrap();
        assert_eq!(**back.grid(), *g);
        assert!(back.values().iter().zip(u.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn malformed_fields_are_rejected() {
        let g = GridSpec::periodic_1d(4, 8).unwrap();
        let mut buf = Vec::new();
        write_field_to(&mut buf, &ScalarField::constant(g, 1.0)).unwrap();
        assert!(read_field_from(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[..13].copy_from_slice(b"conflow-fiend");
        assert!(read_field_from(&bad[..]).is_err());
        assert!(read_field_from(&b"conflow-field v1 n=4 dims=2 shape=8 period=1\n"[..]).is_err());
        assert!(read_field_from(&b"conflow-field v2 n=4 dims=1 shape=8 period=1\n"[..]).is_err());
    }

    #[test]
    fn timeseries_header_is_fixed() {
        let mut buf = Vec::new();
        let cfg = RunConfig::new(
            Background::constant(GridSpec::periodic_1d(4, 8).unwrap(), -1.0),
            fzoo::classical(),
            ScalarField::constant(GridSpec::periodic_1d(4, 8).unwrap(), 1.0),
            0.1,
        );
        let traj = flow::run(&cfg).unwrap();
        write_timeseries(&mut buf, &traj.records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "t,dt,Smin,Smax,A,sigma,vol,fSA_sup,lp2,lpn2,umin,umax"
        );
    }

    #[test]
    fn run_directory_round_trip() {
        let g = GridSpec::periodic_1d(4, 16).unwrap();
        let bg = Background::new(ScalarField::from_fn(g.clone(), |x| -1.5 + 0.4 * x[0].sin()).unwrap());
        let mut cfg = RunConfig::new(bg.clone(), fzoo::classical(), ScalarField::constant(g, 1.0), 0.2);
        cfg.snapshot_cadence = 7;
        let traj = flow::run(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let summary = write_run(dir.path(), &serde_json::json!({}), &bg, cfg.f.name(), &traj).unwrap();
        assert_eq!(summary.steps, traj.steps());

        let back = read_trajectory(dir.path()).unwrap();
        assert_eq!(back.records, traj.records);
        assert_eq!(back.dts, traj.dts);
        assert_eq!(back.termination, traj.termination);
        assert_eq!(back.snapshots.len(), traj.snapshots.len());
        for (a, b) in back.snapshots.iter().zip(&traj.snapshots) {
            assert_eq!((a.step, a.t), (b.step, b.t));
            assert_eq!(a.u.values(), b.u.values());
        }
        let s0 = read_field(&dir.path().join(BACKGROUND_FILE)).unwrap();
        assert_eq!(s0.values(), bg.s0().values());
    }
}
