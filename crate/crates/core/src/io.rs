//! Session files: a `t,hip,nac` CSV (seconds, microvolts) with a JSON sidecar
//! `{subject_id, phase, treatment, fs}` sharing the CSV's file stem.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PhaseLabel, SessionRecord, Signal, TreatmentLabel};

pub const CSV_HEADER: [&str; 3] = ["t", "hip", "nac"];

/// Contents of the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub subject_id: String,
    pub phase: PhaseLabel,
    #[serde(default)]
    pub treatment: Option<TreatmentLabel>,
    pub fs: f64,
}

/// Raw columns of a session CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionColumns {
    pub t: Vec<f64>,
    pub hip: Vec<f64>,
    pub nac: Vec<f64>,
}

impl SessionColumns {
    /// Sampling rate implied by the first two time stamps.
    pub fn inferred_fs(&self) -> Option<f64> {
        match self.t.as_slice() {
            [t0, t1, ..] if t1 > t0 => Some(1.0 / (t1 - t0)),
            _ => None,
        }
    }
}

/// Path of the sidecar belonging to `csv_path`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_columns(path: &Path) -> Result<SessionColumns> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(|e| malformed(path, 1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(malformed(
            path,
            1,
            format!(
                "expected header `t,hip,nac`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut cols = SessionColumns {
        t: Vec::new(),
        hip: Vec::new(),
        nac: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut values = [0.0; 3];
        for (slot, (field, name)) in values.iter_mut().zip(record.iter().zip(CSV_HEADER)) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(path, line, format!("bad `{name}` value {field:?}")))?;
        }
        cols.t.push(values[0]);
        cols.hip.push(values[1]);
        cols.nac.push(values[2]);
    }
    Ok(cols)
}

pub fn read_meta(path: &Path) -> Result<SessionMeta> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| malformed(path, e.line() as u64, e.to_string()))
}

/// Load a session from its CSV, reading labels and rate from the sidecar.
pub fn load_session(csv_path: &Path) -> Result<SessionRecord> {
    let meta = read_meta(&sidecar_path(csv_path))?;
    let cols = read_columns(csv_path)?;
    session_from_parts(&meta, cols)
}

pub fn session_from_parts(meta: &SessionMeta, cols: SessionColumns) -> Result<SessionRecord> {
    SessionRecord::new(
        meta.subject_id.clone(),
        meta.phase,
        meta.treatment,
        Signal::new(cols.hip, meta.fs, "hip")?,
        Signal::new(cols.nac, meta.fs, "nac")?,
    )
}

/// Load the two channels of a session CSV. The sampling rate comes from
/// `fs_override`, then the sidecar if present, then the time column.
pub fn load_signals(csv_path: &Path, fs_override: Option<f64>) -> Result<(Signal, Signal)> {
    let cols = read_columns(csv_path)?;
    let sidecar = sidecar_path(csv_path);
    let fs = match fs_override {
        Some(fs) => fs,
        None if sidecar.exists() => read_meta(&sidecar)?.fs,
        None => cols
            .inferred_fs()
            .ok_or_else(|| malformed(csv_path, 2, "cannot infer sampling rate from `t`"))?,
    };
    Ok((Signal::new(cols.hip, fs, "hip")?, Signal::new(cols.nac, fs, "nac")?))
}

pub fn write_columns(path: &Path, hip: &Signal, nac: &Signal) -> Result<()> {
    if hip.len() != nac.len() {
        return Err(Error::SessionMismatch("channel lengths differ".into()));
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let to_io = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    w.write_record(CSV_HEADER).map_err(to_io)?;
    let dt = 1.0 / hip.fs();
    let mut buf = row_buf::Row::default();
    for (i, (h, n)) in hip.samples().iter().zip(nac.samples()).enumerate() {
        buf.fill(i as f64 * dt, *h, *n);
        w.write_record(buf.fields()).map_err(to_io)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_meta(path: &Path, meta: &SessionMeta) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Write a session as CSV plus sidecar; returns the CSV path.
pub fn write_session(dir: &Path, stem: &str, record: &SessionRecord) -> Result<PathBuf> {
    let csv_path = dir.join(format!("{stem}.csv"));
    write_columns(&csv_path, record.hip(), record.nac())?;
    write_meta(
        &sidecar_path(&csv_path),
        &SessionMeta {
            subject_id: record.subject_id().to_string(),
            phase: record.phase(),
            treatment: record.treatment(),
            fs: record.fs(),
        },
    )?;
    Ok(csv_path)
}

/// File stem used for a session: `<subject>_<phase>`, lower case.
pub fn session_stem(record: &SessionRecord) -> String {
    format!("{}_{}", record.subject_id(), record.phase().as_str().to_lowercase())
}

/// Write every session under `dir` (created if missing); returns the CSV
/// paths in input order.
pub fn write_sessions<'a>(dir: &Path, records: impl IntoIterator<Item = &'a SessionRecord>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    records
        .into_iter()
        .map(|r| write_session(dir, &session_stem(r), r))
        .collect()
}

mod row_buf {
    use std::fmt::Write;

    /// Reusable text buffers for one CSV row. `Display` for f64 prints the
    /// shortest representation that round-trips.
    #[derive(Default)]
    pub struct Row([String; 3]);

    impl Row {
        pub fn fill(&mut self, t: f64, hip: f64, nac: f64) {
            for (s, v) in self.0.iter_mut().zip([t, hip, nac]) {
                s.clear();
                let _ = write!(s, "{v}");
            }
        }

        pub fn fields(&self) -> &[String; 3] {
            &self.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_session() {
        let dir = tempfile::tempdir().unwrap();
        let hip = Signal::new(vec![0.5, -1.25, 3.0e-7, 2.0], 1000.0, "hip").unwrap();
        let nac = Signal::new(vec![1.0, 2.0, 3.0, 4.0], 1000.0, "nac").unwrap();
        let rec = SessionRecord::new("rat3", PhaseLabel::Post, Some(TreatmentLabel::Food), hip, nac).unwrap();
        let path = write_session(dir.path(), "rat3_post", &rec).unwrap();
        let back = load_session(&path).unwrap();
        assert_eq!(back, rec);
        let (h, _) = load_signals(&path, None).unwrap();
        assert_eq!(h.fs(), 1000.0);
    }

    #[test]
    fn bad_value_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "t,hip,nac\n0,1,2\n0.001,abc,3\n").unwrap();
        match read_columns(&path).unwrap_err() {
            Error::Malformed { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "time,a,b\n0,1,2\n").unwrap();
        assert!(matches!(read_columns(&path), Err(Error::Malformed { line: 1, .. })));
    }

    #[test]
    fn fs_inferred_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "t,hip,nac\n0,1,2\n0.002,1,3\n0.004,2,2\n").unwrap();
        let (h, n) = load_signals(&path, None).unwrap();
        assert!((h.fs() - 500.0).abs() < 1e-9);
        assert_eq!(n.samples(), &[2.0, 3.0, 2.0]);
    }
}
