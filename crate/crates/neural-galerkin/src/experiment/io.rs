//! File formats and atomic writers for experiment outputs.
//!
//! Trajectory files hold a header `(p, m, d, frames)` followed by one record
//! per stored time: the time stamp and `p` values. Two layouts are supported:
//!
//! * **CSV** (canonical): first line `p,m,d,frames`; then one line per record,
//!   `time,v0,...,v{p−1}`, floats in shortest round-trip form.
//! * **Binary**: magic `NGTRAJ01`, then `p, m, d, frames` as little-endian
//!   `u64`, then per record the time and `p` values as little-endian `f64`.
//!
//! The same container stores parameter trajectories (`p` = parameter count)
//! and reference snapshots (`p` = field dim × grid points, component-major).
//! All writes go to a sibling temp file first and are renamed into place.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::experiment::metrics::MetricSeries;

const MAGIC: &[u8; 8] = b"NGTRAJ01";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path} is not a trajectory file: {reason}")]
    Format { path: PathBuf, reason: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

/// Header plus records of a trajectory container.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    /// Values per record.
    pub p: usize,
    /// Field components.
    pub m: usize,
    /// Spatial dimension.
    pub d: usize,
    pub times: Vec<f64>,
    /// `records[k]` has length `p`.
    pub records: Vec<Vec<f64>>,
}

impl TrajectoryFile {
    pub fn new(p: usize, m: usize, d: usize) -> Self {
        TrajectoryFile { p, m, d, times: Vec::new(), records: Vec::new() }
    }

    pub fn push(&mut self, time: f64, record: Vec<f64>) {
        assert_eq!(record.len(), self.p);
        self.times.push(time);
        self.records.push(record);
    }
}

/// Write `bytes` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(file_err(path))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("new")
    ));
    fs::write(&tmp, bytes).map_err(file_err(&tmp))?;
    fs::rename(&tmp, path).map_err(file_err(path))?;
    Ok(())
}

pub fn write_trajectory_csv(path: &Path, traj: &TrajectoryFile) -> Result<(), IoError> {
    let mut out = Vec::new();
    // Vec<u8> writes cannot fail.
    writeln!(out, "{},{},{},{}", traj.p, traj.m, traj.d, traj.times.len()).unwrap();
    for (t, rec) in traj.times.iter().zip(&traj.records) {
        write!(out, "{t}").unwrap();
        for v in rec {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out).unwrap();
    }
    write_atomic(path, &out)
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryFile, IoError> {
    let file = fs::File::open(path).map_err(file_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |reason: &str| IoError::Format { path: path.to_path_buf(), reason: reason.into() };
    let header = lines
        .next()
        .ok_or_else(|| bad("empty file"))?
        .map_err(file_err(path))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| bad("header must be `p,m,d,frames`"))?;
    if dims.len() != 4 {
        return Err(bad("header must have four fields"));
    }
    let mut traj = TrajectoryFile::new(dims[0], dims[1], dims[2]);
    for line in lines {
        let line = line.map_err(file_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut vals = line.split(',').map(|s| s.trim().parse::<f64>());
        let time = vals
            .next()
            .ok_or_else(|| bad("empty record"))?
            .map_err(|_| bad("non-numeric time"))?;
        let record: Vec<f64> =
            vals.collect::<Result<_, _>>().map_err(|_| bad("non-numeric value"))?;
        if record.len() != traj.p {
            return Err(bad(&format!(
                "record has {} values, header says {}",
                record.len(),
                traj.p
            )));
        }
        traj.push(time, record);
    }
    if traj.times.len() != dims[3] {
        return Err(bad(&format!(
            "header promises {} frames, found {}",
            dims[3],
            traj.times.len()
        )));
    }
    Ok(traj)
}

pub fn write_trajectory_bin(path: &Path, traj: &TrajectoryFile) -> Result<(), IoError> {
    let mut out =
        Vec::with_capacity(8 + 32 + traj.times.len() * (traj.p + 1) * 8);
    out.extend_from_slice(MAGIC);
    for dim in [traj.p, traj.m, traj.d, traj.times.len()] {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for (t, rec) in traj.times.iter().zip(&traj.records) {
        out.extend_from_slice(&t.to_le_bytes());
        for v in rec {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &out)
}

pub fn read_trajectory_bin(path: &Path) -> Result<TrajectoryFile, IoError> {
    let file = fs::File::open(path).map_err(file_err(path))?;
    let mut reader = BufReader::new(file);
    let bad = |reason: &str| IoError::Format { path: path.to_path_buf(), reason: reason.into() };
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic).map_err(file_err(path))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut word = [0u8; 8];
    let mut dims = [0usize; 4];
    for d in &mut dims {
        reader.read_exact(&mut word).map_err(file_err(path))?;
        *d = u64::from_le_bytes(word) as usize;
    }
    let mut traj = TrajectoryFile::new(dims[0], dims[1], dims[2]);
    for _ in 0..dims[3] {
        reader.read_exact(&mut word).map_err(file_err(path))?;
        let time = f64::from_le_bytes(word);
        let mut record = Vec::with_capacity(traj.p);
        for _ in 0..traj.p {
            reader.read_exact(&mut word).map_err(file_err(path))?;
            record.push(f64::from_le_bytes(word));
        }
        traj.push(time, record);
    }
    Ok(traj)
}

/// Metrics CSV: columns
/// `time, E_r, E_C_<quantity>..., q_hat_<quantity>..., embed_iters, lsq_residual`,
/// one row per stored step.
pub fn write_metrics_csv(
    path: &Path,
    series: &MetricSeries,
    quantity_labels: &[String],
) -> Result<(), IoError> {
    let mut out = Vec::new();
    write!(out, "time,E_r").unwrap();
    for label in quantity_labels {
        write!(out, ",E_C_{label}").unwrap();
    }
    for label in quantity_labels {
        write!(out, ",q_hat_{label}").unwrap();
    }
    writeln!(out, ",embed_iters,lsq_residual").unwrap();
    for k in 0..series.len() {
        write!(out, "{},{}", series.times[k], series.e_r[k]).unwrap();
        for q in &series.e_c {
            write!(out, ",{}", q[k]).unwrap();
        }
        for q in &series.q_hat {
            write!(out, ",{}", q[k]).unwrap();
        }
        writeln!(out, ",{},{}", series.embed_iters[k], series.lsq_residual[k]).unwrap();
    }
    write_atomic(path, &out)
}

/// Serialize a JSON manifest atomically (pretty-printed, trailing newline).
pub fn write_manifest(path: &Path, manifest: &serde_json::Value) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Buffered writer used by the CLI for streaming status output.
pub fn stdout_writer() -> BufWriter<std::io::Stdout> {
    BufWriter::new(std::io::stdout())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_traj() -> TrajectoryFile {
        let mut traj = TrajectoryFile::new(3, 1, 1);
        traj.push(0.0, vec![1.0, -0.5, 0.25]);
        traj.push(0.125, vec![0.875, -0.4375, 1.0 / 3.0]);
        traj
    }

    #[test]
    fn csv_round_trips_exactly() {
        let dir = std::env::temp_dir().join("ng-io-csv-test");
        let path = dir.join("traj.csv");
        let traj = sample_traj();
        write_trajectory_csv(&path, &traj).unwrap();
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(back, traj);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn binary_round_trips_exactly() {
        let dir = std::env::temp_dir().join("ng-io-bin-test");
        let path = dir.join("traj.bin");
        let traj = sample_traj();
        write_trajectory_bin(&path, &traj).unwrap();
        let back = read_trajectory_bin(&path).unwrap();
        assert_eq!(back, traj);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = std::env::temp_dir().join("ng-io-trunc-test");
        let path = dir.join("traj.bin");
        write_trajectory_bin(&path, &sample_traj()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, &bytes).unwrap();
        assert!(read_trajectory_bin(&path).is_err());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn metrics_csv_has_documented_columns() {
        let dir = std::env::temp_dir().join("ng-io-metrics-test");
        let path = dir.join("metrics.csv");
        let series = MetricSeries {
            times: vec![0.0, 0.1],
            e_r: vec![0.0, 0.025],
            e_c: vec![vec![0.0, 1e-12]],
            q_hat: vec![vec![0.7, 0.7]],
            embed_iters: vec![0, 2],
            lsq_residual: vec![0.0, 3e-4],
        };
        write_metrics_csv(&path, &series, &["mass".into()]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "time,E_r,E_C_mass,q_hat_mass,embed_iters,lsq_residual"
        );
        assert_eq!(lines.next().unwrap(), "0,0,0,0.7,0,0");
        assert_eq!(lines.next().unwrap(), "0.1,0.025,0.000000000001,0.7,2,0.0003");
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rewriting_identical_data_is_byte_identical() {
        let dir = std::env::temp_dir().join("ng-io-bytes-test");
        let path = dir.join("traj.csv");
        write_trajectory_csv(&path, &sample_traj()).unwrap();
        let first = fs::read(&path).unwrap();
        write_trajectory_csv(&path, &sample_traj()).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        fs::remove_dir_all(&dir).ok();
    }
}
