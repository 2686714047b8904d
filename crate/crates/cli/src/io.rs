//! CSV and line-delimited JSON files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dbnn_core::data::{Dataset, Trajectory};
use serde::Serialize;

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn reader(path: &Path) -> Result<csv::Reader<File>, CliError> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| io_err(path, e))
}

fn parse_cell(path: &Path, row: usize, column: &str, cell: &str) -> Result<f64, CliError> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| CliError::Data {
        path: path.to_path_buf(),
        message: format!("row {row}, column `{column}`: cannot parse `{cell}` as a finite number"),
    })
}

/// Reads a numeric table with a header row. `targets` name the target
/// columns; when empty the last column is the target.
pub fn load_csv(path: &Path, targets: &[String]) -> Result<Dataset, CliError> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers().map_err(|e| io_err(path, e))?.iter().map(String::from).collect();
    let data_err = |message: String| CliError::Data { path: path.to_path_buf(), message };
    if header.len() < 2 {
        return Err(data_err(format!("need at least two columns, found {}", header.len())));
    }
    let target_idx: Vec<usize> = if targets.is_empty() {
        vec![header.len() - 1]
    } else {
        targets
            .iter()
            .map(|t| {
                header.iter().position(|h| h == t).ok_or_else(|| {
                    data_err(format!("unknown target column `{t}`; available: {}", header.join(", ")))
                })
            })
            .collect::<Result<_, _>>()?
    };
    let feature_idx: Vec<usize> = (0..header.len()).filter(|i| !target_idx.contains(i)).collect();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| data_err(format!("row {row}: {e}")))?;
        if rec.len() != header.len() {
            return Err(data_err(format!("row {row}: expected {} fields, found {}", header.len(), rec.len())));
        }
        let pick = |idx: &[usize]| -> Result<Vec<f64>, CliError> {
            idx.iter().map(|&i| parse_cell(path, row, &header[i], &rec[i])).collect()
        };
        x.push(pick(&feature_idx)?);
        y.push(pick(&target_idx)?);
    }
    if x.is_empty() {
        return Err(data_err("empty dataset".into()));
    }
    let names = |idx: &[usize]| idx.iter().map(|&i| header[i].clone()).collect();
    Dataset::new(x, y, names(&feature_idx), names(&target_idx), path.display().to_string()).map_err(CliError::Core)
}

/// Reads columns of `path` named in `columns`, in that order; when the file
/// has exactly `columns.len()` columns they are taken positionally.
pub fn load_inputs(path: &Path, columns: &[String]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers().map_err(|e| io_err(path, e))?.iter().map(String::from).collect();
    let idx: Vec<usize> = match columns.iter().map(|c| header.iter().position(|h| h == c)).collect::<Option<Vec<_>>>() {
        Some(idx) => idx,
        None if header.len() == columns.len() => (0..header.len()).collect(),
        None => {
            return Err(CliError::Core(dbnn_core::Error::Dimension {
                what: "input columns",
                expected: columns.len(),
                found: header.len(),
            }))
        }
    };
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data { path: path.to_path_buf(), message: format!("row {}: {e}", r + 1) })?;
        rows.push(idx.iter().map(|&i| parse_cell(path, r + 1, &header[i], rec.get(i).unwrap_or(""))).collect::<Result<Vec<_>, _>>()?);
    }
    Ok(rows)
}

/// Reads a trajectory with columns `t`, `value` (or `value_0..`) and
/// optionally `truth` (or `truth_0..`).
pub fn read_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers().map_err(|e| io_err(path, e))?.iter().map(String::from).collect();
    let data_err = |message: String| CliError::Data { path: path.to_path_buf(), message };
    let t_idx = header.iter().position(|h| h == "t").ok_or_else(|| data_err("missing column `t`".into()))?;
    let cols = |prefix: &str| -> Vec<usize> {
        (0..header.len()).filter(|&i| header[i] == prefix || header[i].starts_with(&format!("{prefix}_"))).collect()
    };
    let (v_idx, truth_idx) = (cols("value"), cols("truth"));
    if v_idx.is_empty() {
        return Err(data_err("missing column `value`".into()));
    }
    let (mut times, mut values, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| data_err(format!("row {row}: {e}")))?;
        let cell = |i: usize| parse_cell(path, row, &header[i], rec.get(i).unwrap_or(""));
        times.push(cell(t_idx)?);
        values.push(v_idx.iter().map(|&i| cell(i)).collect::<Result<Vec<_>, _>>()?);
        if !truth_idx.is_empty() {
            truth.push(truth_idx.iter().map(|&i| cell(i)).collect::<Result<Vec<_>, _>>()?);
        }
    }
    if times.is_empty() {
        return Err(data_err("empty dataset".into()));
    }
    let mut traj = Trajectory::new(times, values).map_err(CliError::Core)?;
    if truth_idx.len() == traj.dim() {
        traj.truth = Some(truth);
    }
    Ok(traj)
}

fn dim_names(prefix: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![prefix.to_string()]
    } else {
        (0..d).map(|i| format!("{prefix}_{i}")).collect()
    }
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let d = traj.dim();
    let mut header = vec![String::from("t")];
    header.extend(dim_names("value", d));
    if traj.truth.is_some() {
        header.extend(dim_names("truth", d));
    }
    let mut rows = Vec::with_capacity(traj.len());
    for j in 0..traj.len() {
        let mut row = vec![traj.times[j]];
        row.extend_from_slice(&traj.values[j]);
        if let Some(t) = &traj.truth {
            row.extend_from_slice(&t[j]);
        }
        rows.push(row);
    }
    write_table(path, &header, &rows)
}

/// Writes a header and numeric rows.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string)).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data { path: path.to_path_buf(), message: e.to_string() })
}

/// One JSON object per line.
pub struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let f = File::create(path).map_err(|e| io_err(path, e))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(f) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), CliError> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| io_err(&self.path, e))?;
        self.out.write_all(b"\n").map_err(|e| io_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}
