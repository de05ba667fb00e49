use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use qote_core::bounds::{AssumptionSet, QoteBounds};
use qote_core::policy::{BoundCell, BoundField};
use qote_core::sim::{subgroup, DgpSpec};
use qote_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Unsupported(_) => 3,
        Error::Inconsistent(_) => 4,
        Error::NothingToLearn => 5,
        Error::LpFailure(_) | Error::MalformedProgram(_) => 1,
        _ => 2,
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| io_err(path, e))
}

pub fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| io_err(&path, e))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    use std::io::Write;
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(&dir.join(name), e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(&dir.join(name), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(std::io::BufReader::new(open(path)?)).map_err(|e| io_err(path, e))
}

/// A design file, or a preset name such as `subgroup2` (an optional `.json`
/// suffix is ignored when no such file exists).
pub fn load_dgp(arg: &str) -> Result<DgpSpec> {
    let path = Path::new(arg);
    if path.is_file() {
        let spec: DgpSpec = read_json(path)?;
        spec.validate()?;
        return Ok(spec);
    }
    let name = arg.rsplit('/').next().unwrap_or(arg).trim_end_matches(".json");
    match name.strip_prefix("subgroup").and_then(|i| i.parse::<usize>().ok()) {
        Some(i) => subgroup(i),
        None => Err(Error::Input(format!("`{arg}` is neither a design file nor a preset subgroup1..subgroup8"))),
    }
}

/// One line of a bounds file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    #[serde(default)]
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumption: Option<AssumptionSet>,
    pub lower: f64,
    pub upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct WeightRecord {
    #[serde(default)]
    x: Vec<f64>,
    weight: f64,
}

/// Reads bound records, keeping those at `tau` when given. Without `tau`
/// every record must share one level.
pub fn read_bounds(path: &Path, tau: Option<f64>) -> Result<Vec<BoundRecord>> {
    let mut rows: Vec<BoundRecord> = read_json(path)?;
    if let Some(t) = tau {
        rows.retain(|r| r.tau.is_none_or(|rt| (rt - t).abs() < 1e-12));
    } else {
        let mut taus: Vec<f64> = rows.iter().filter_map(|r| r.tau).collect();
        taus.dedup();
        if taus.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Input(format!("{} holds several tau levels; pick one with --tau", path.display())));
        }
    }
    if rows.is_empty() {
        return Err(Error::Input(format!("{}: no bound records", path.display())));
    }
    Ok(rows)
}

/// Bound field from records, with masses from the records, from a separate
/// weights file (matched cell by cell), or uniform.
pub fn bound_field(rows: &[BoundRecord], weights: Option<&Path>) -> Result<BoundField> {
    let masses: Vec<f64> = match weights {
        Some(path) => {
            let w: Vec<WeightRecord> = read_json(path)?;
            if w.len() != rows.len() {
                return Err(Error::Inconsistent(format!("{} bound cells but {} weights", rows.len(), w.len())));
            }
            for (i, (r, w)) in rows.iter().zip(&w).enumerate() {
                if r.x != w.x {
                    return Err(Error::Inconsistent(format!("cell {i}: bounds at x = {:?}, weight at x = {:?}", r.x, w.x)));
                }
            }
            w.iter().map(|w| w.weight).collect()
        }
        None if rows.iter().all(|r| r.weight.is_some()) => rows.iter().map(|r| r.weight.unwrap_or(0.0)).collect(),
        None if rows.iter().all(|r| r.weight.is_none()) => vec![1.0 / rows.len() as f64; rows.len()],
        None => return Err(Error::Input("either every bound record has a weight or none does".into())),
    };
    let cells = rows
        .iter()
        .zip(masses)
        .map(|(r, weight)| Ok(BoundCell { x: r.x.clone(), weight, bounds: QoteBounds::new(r.lower, r.upper)? }))
        .collect::<Result<Vec<_>>>()?;
    BoundField::new(cells)
}
