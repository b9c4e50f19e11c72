//! Append-only CSV and JSON-lines result files.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use percolymer::estimate::EstimateRecord;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const COLUMNS: [&str; 12] =
    ["schema_version", "experiment", "d", "p", "beta", "n", "estimate", "stderr", "samples", "accepted", "seed", "extra"];

/// Whether an existing output file may be extended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SinkMode {
    Append,
    /// Refuse to touch a file that already exists.
    CreateNew,
}

/// The fixed-order CSV fields of one record. Floats use the shortest decimal
/// that round-trips; β is a decimal or `inf`; absent values are empty.
pub fn csv_fields(rec: &EstimateRecord) -> [String; 12] {
    let opt = |v: Option<String>| v.unwrap_or_default();
    [
        SCHEMA_VERSION.to_string(),
        rec.experiment.clone(),
        rec.d.to_string(),
        opt(rec.p.map(|p| p.to_string())),
        opt(rec.beta.map(|b| b.to_string())),
        opt(rec.n.map(|n| n.to_string())),
        rec.estimate.to_string(),
        rec.stderr.to_string(),
        rec.samples.to_string(),
        rec.accepted.to_string(),
        rec.seed.to_string(),
        rec.extra.to_string(),
    ]
}

fn csv_line<I: IntoIterator<Item = S>, S: AsRef<[u8]>>(fields: I) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(fields)?;
    w.into_inner().map_err(|e| CliError::Other(e.to_string()))
}

pub fn csv_header() -> Vec<u8> {
    csv_line(COLUMNS).expect("static header")
}

/// Paths `stem.csv` and `stem.jsonl` for an output argument with or without
/// an extension.
pub fn output_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = match out.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("jsonl") => out.with_extension(""),
        _ => out.to_path_buf(),
    };
    let mut csv = stem.clone().into_os_string();
    csv.push(".csv");
    let mut jsonl = stem.into_os_string();
    jsonl.push(".jsonl");
    (csv.into(), jsonl.into())
}

/// Writes each record as one CSV row and one JSON line. Every line goes out in
/// a single write followed by a flush.
pub struct ResultSink {
    csv_path: PathBuf,
    jsonl_path: PathBuf,
    csv: File,
    jsonl: File,
    written: usize,
}

impl ResultSink {
    pub fn open(out: &Path, mode: SinkMode) -> Result<ResultSink, CliError> {
        let (csv_path, jsonl_path) = output_paths(out);
        if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let csv = open_file(&csv_path, mode, Some(&csv_header()))?;
        let jsonl = open_file(&jsonl_path, mode, None)?;
        Ok(ResultSink { csv_path, jsonl_path, csv, jsonl, written: 0 })
    }

    pub fn csv_path(&self) -> &Path {
        &self.csv_path
    }

    pub fn jsonl_path(&self) -> &Path {
        &self.jsonl_path
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn write(&mut self, command: &str, rec: &EstimateRecord, config: &RunConfig) -> Result<(), CliError> {
        let row = csv_line(csv_fields(rec))?;
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let obj = json!({
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "record": rec,
            "config": config,
            "written_at": stamp,
        });
        let mut line = serde_json::to_vec(&obj).map_err(|e| CliError::Other(e.to_string()))?;
        line.push(b'\n');
        self.csv.write_all(&row)?;
        self.csv.flush()?;
        self.jsonl.write_all(&line)?;
        self.jsonl.flush()?;
        self.written += 1;
        Ok(())
    }
}

/// Opens for appending. A new or empty file gets the header; an existing one
/// must start with it. A file whose last line was cut short gets a newline so
/// new rows start cleanly and the damaged line stays isolated.
fn open_file(path: &Path, mode: SinkMode, header: Option<&[u8]>) -> Result<File, CliError> {
    if mode == SinkMode::CreateNew && path.exists() {
        return Err(CliError::config(format!("{} already exists", path.display())));
    }
    let mut f = OpenOptions::new().read(true).append(true).create(true).open(path)?;
    let len = f.metadata()?.len();
    if len == 0 {
        if let Some(h) = header {
            f.write_all(h)?;
            f.flush()?;
        }
        return Ok(f);
    }
    if let Some(h) = header {
        let mut first = vec![0u8; h.len()];
        f.seek(SeekFrom::Start(0))?;
        let got = f.read(&mut first)?;
        if got < h.len() || first != h {
            return Err(CliError::config(format!("{} has a different column schema", path.display())));
        }
    }
    let mut last = [0u8; 1];
    f.seek(SeekFrom::End(-1))?;
    f.read_exact(&mut last)?;
    if last[0] != b'\n' {
        f.write_all(b"\n")?;
        f.flush()?;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_paths_share_a_stem() {
        let (c, j) = output_paths(Path::new("runs/a.csv"));
        assert_eq!((c.to_str().unwrap(), j.to_str().unwrap()), ("runs/a.csv", "runs/a.jsonl"));
        let (c, _) = output_paths(Path::new("runs/b"));
        assert_eq!(c.to_str().unwrap(), "runs/b.csv");
    }

    #[test]
    fn header_is_fixed() {
        assert_eq!(
            String::from_utf8(csv_header()).unwrap(),
            "schema_version,experiment,d,p,beta,n,estimate,stderr,samples,accepted,seed,extra\n"
        );
    }
}
