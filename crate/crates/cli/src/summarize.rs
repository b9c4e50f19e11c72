//! Merging result files into one row per parameter point.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use percolymer::stats::inverse_variance_merge;

use crate::error::CliError;
use crate::sink::{COLUMNS, SCHEMA_VERSION};

pub const SUMMARY_COLUMNS: [&str; 10] = ["experiment", "d", "p", "beta", "n", "estimate", "stderr", "rows", "samples", "accepted"];

/// Grouping key: experiment, d, p, beta, n exactly as written.
pub type GroupKey = [String; 5];

/// One parsed data row.
#[derive(Clone, Debug, PartialEq)]
pub struct DataRow {
    pub key: GroupKey,
    pub estimate: f64,
    pub stderr: f64,
    pub samples: u64,
    pub accepted: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub key: GroupKey,
    pub estimate: f64,
    pub stderr: f64,
    pub rows: usize,
    pub samples: u64,
    pub accepted: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub warnings: Vec<String>,
}

/// Reads the data rows of one result file. A last line without a newline is a
/// torn write and is skipped, as is any row that does not parse; both produce
/// warnings. A foreign header or schema version is an error.
pub fn read_rows(path: &Path, warnings: &mut Vec<String>) -> Result<Vec<DataRow>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines: Vec<&str> = text.split_inclusive('\n').collect();
    if let Some(last) = lines.last() {
        if !last.ends_with('\n') {
            warnings.push(format!("{}: skipped truncated final line", path.display()));
            lines.pop();
        }
    }
    let mut lines = lines.into_iter().enumerate();
    let header = match lines.next() {
        Some((_, h)) => parse_line(h),
        None => return Ok(Vec::new()),
    };
    if header.as_deref() != Some(&COLUMNS.map(String::from)[..]) {
        return Err(CliError::config(format!("{}: schema mismatch, unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields = parse_line(line).filter(|f| f.len() == COLUMNS.len());
        let Some(f) = fields else {
            warnings.push(format!("{}:{}: skipped malformed row", path.display(), i + 1));
            continue;
        };
        match f[0].parse::<u32>() {
            Ok(SCHEMA_VERSION) => {}
            Ok(v) => {
                return Err(CliError::config(format!(
                    "{}:{}: schema mismatch, version {v} (expected {SCHEMA_VERSION})",
                    path.display(),
                    i + 1
                )))
            }
            Err(_) => {
                warnings.push(format!("{}:{}: skipped malformed row", path.display(), i + 1));
                continue;
            }
        }
        let parsed = (|| {
            f[2].parse::<usize>().ok()?;
            f[10].parse::<u64>().ok()?;
            serde_json::from_str::<serde_json::Value>(&f[11]).ok()?;
            Some(DataRow {
                key: [f[1].clone(), f[2].clone(), f[3].clone(), f[4].clone(), f[5].clone()],
                estimate: f[6].parse().ok()?,
                stderr: f[7].parse().ok()?,
                samples: f[8].parse().ok()?,
                accepted: f[9].parse().ok()?,
            })
        })();
        match parsed {
            Some(r) => rows.push(r),
            None => warnings.push(format!("{}:{}: skipped malformed row", path.display(), i + 1)),
        }
    }
    Ok(rows)
}

fn parse_line(line: &str) -> Option<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(line.as_bytes());
    let rec = r.records().next()?.ok()?;
    Some(rec.iter().map(String::from).collect())
}

/// Groups rows by key, in order of first appearance, and pools each group by
/// inverse-variance weighting.
pub fn merge_rows(rows: &[DataRow]) -> Vec<SummaryRow> {
    let mut order: Vec<GroupKey> = Vec::new();
    let mut groups: HashMap<GroupKey, Vec<&DataRow>> = HashMap::new();
    for r in rows {
        groups
            .entry(r.key.clone())
            .or_insert_with(|| {
                order.push(r.key.clone());
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let items: Vec<(f64, f64)> = g.iter().map(|r| (r.estimate, r.stderr)).collect();
            let (estimate, stderr) = inverse_variance_merge(&items).expect("groups are nonempty");
            SummaryRow {
                key,
                estimate,
                stderr,
                rows: g.len(),
                samples: g.iter().map(|r| r.samples).sum(),
                accepted: g.iter().map(|r| r.accepted).sum(),
            }
        })
        .collect()
}

pub fn summarize<P: AsRef<Path>>(paths: &[P]) -> Result<Summary, CliError> {
    if paths.is_empty() {
        return Err(CliError::config("summarize needs at least one file"));
    }
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_rows(p.as_ref(), &mut warnings)?);
    }
    Ok(Summary { rows: merge_rows(&rows), warnings })
}

pub fn write_summary(summary: &Summary, out: impl Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for r in &summary.rows {
        let mut fields: Vec<String> = r.key.to_vec();
        fields.extend([r.estimate.to_string(), r.stderr.to_string(), r.rows.to_string(), r.samples.to_string(), r.accepted.to_string()]);
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
