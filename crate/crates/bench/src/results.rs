//! Result records and their CSV form.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const HEADER: [&str; 10] =
    ["config_hash", "variant", "task", "size", "seed", "step", "split", "metric", "value", "wall_ms"];

/// `v` rounded to 6 significant digits.
pub fn round_sig6(v: f64) -> f64 {
    if v.is_finite() {
        format_value(v).parse().expect("formatted float parses")
    } else {
        v
    }
}

/// Scientific notation with 6 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.5e}")
}

/// One metric value from one evaluation event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub variant: String,
    pub task: String,
    pub size: String,
    pub seed: u64,
    pub step: usize,
    pub split: String,
    pub metric: String,
    /// Already rounded to 6 significant digits.
    pub value: f64,
    pub wall_ms: u64,
}

#[derive(Serialize, Deserialize)]
struct Row {
    config_hash: String,
    variant: String,
    task: String,
    size: String,
    seed: u64,
    step: usize,
    split: String,
    metric: String,
    value: String,
    wall_ms: u64,
}

impl From<&ResultRecord> for Row {
    fn from(r: &ResultRecord) -> Self {
        Row {
            config_hash: r.config_hash.clone(),
            variant: r.variant.clone(),
            task: r.task.clone(),
            size: r.size.clone(),
            seed: r.seed,
            step: r.step,
            split: r.split.clone(),
            metric: r.metric.clone(),
            value: format_value(r.value),
            wall_ms: r.wall_ms,
        }
    }
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> BenchError {
    BenchError::Format { path: path.to_path_buf(), message: e.to_string() }
}

/// Records as CSV text, header first.
pub fn to_csv_string(records: &[ResultRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if records.is_empty() {
        w.write_record(HEADER).expect("in-memory write");
    }
    for r in records {
        w.serialize(Row::from(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Appends `records` to `path`, writing the header when the file is new
/// or empty.
pub fn append_csv(path: &Path, records: &[ResultRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| BenchError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(HEADER).map_err(|e| format_err(path, e))?;
    }
    for r in records {
        w.serialize(Row::from(r)).map_err(|e| format_err(path, e))?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<ResultRecord>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| format_err(path, e))?;
    if header.iter().ne(HEADER) {
        return Err(format_err(path, format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    rd.deserialize::<Row>()
        .map(|row| {
            let row = row.map_err(|e| format_err(path, e))?;
            let value = row.value.parse::<f64>().map_err(|e| format_err(path, format!("value `{}`: {e}", row.value)))?;
            Ok(ResultRecord {
                config_hash: row.config_hash,
                variant: row.variant,
                task: row.task,
                size: row.size,
                seed: row.seed,
                step: row.step,
                split: row.split,
                metric: row.metric,
                value,
                wall_ms: row.wall_ms,
            })
        })
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    parse_csv(&text, path)
}

/// CSV text with the `wall_ms` column removed.
pub fn strip_wall_ms(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| BenchError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| BenchError::io(path, e))
}
