//! CSV interchange files.
//!
//! - Score matrices: header `image_id,<label_1>,...,<label_C>`, one row per
//!   image, values in scientific notation with 17 significant digits. The
//!   header's label order is authoritative.
//! - Truth: `image_id,label`.
//! - Training counts: `label,train_count`.
//! - Count series: `label,train_count,value`.

use std::collections::BTreeMap;
use std::path::Path;

use bombus_core::dataset::ClassCatalog;
use bombus_core::ensemble::{ProbabilityMatrix, ScoreRows};
use bombus_core::eval::SeriesPoint;

use crate::{read_string, write_file, Error, Result};

pub fn render_matrix<S: ScoreRows + ?Sized>(scores: &S) -> String {
    let mut out = String::from("image_id");
    for l in scores.catalog().labels() {
        out.push(',');
        out.push_str(&quote(l));
    }
    out.push('\n');
    for (i, id) in scores.image_ids().iter().enumerate() {
        out.push_str(&quote(id));
        for v in scores.row(i) {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix<S: ScoreRows + ?Sized>(path: &Path, scores: &S) -> Result<()> {
    write_file(path, render_matrix(scores))
}

/// Read a probability matrix. `negative_label` marks the negative class when
/// it appears in the header.
pub fn read_matrix(path: &Path, negative_label: Option<&str>) -> Result<ProbabilityMatrix> {
    let records = read_records(path)?;
    let (header, rows) = records.split_first().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let header = &header.1;
    if header.first().map(String::as_str) != Some("image_id") || header.len() < 2 {
        return Err(Error::parse(path, 1, "header must be image_id,<label>,..."));
    }
    let labels: Vec<String> = header[1..].to_vec();
    let negative = negative_label.filter(|n| labels.iter().any(|l| l == n)).map(String::from);
    let catalog = ClassCatalog::new(labels, negative).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let mut ids = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len() * catalog.len());
    for (line, rec) in rows {
        if rec.len() != catalog.len() + 1 {
            return Err(Error::parse(path, *line, format!("expected {} fields, found {}", catalog.len() + 1, rec.len())));
        }
        ids.push(rec[0].clone());
        for v in &rec[1..] {
            let x: f64 = v.trim().parse().map_err(|_| Error::parse(path, *line, format!("not a number: {v:?}")))?;
            values.push(x);
        }
    }
    Ok(ProbabilityMatrix::new(ids, catalog, values)?)
}

pub fn read_truth(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (line, rec) in read_table(path, &["image_id", "label"])? {
        if out.insert(rec[0].clone(), rec[1].clone()).is_some() {
            return Err(Error::parse(path, line, format!("duplicate image_id {:?}", rec[0])));
        }
    }
    Ok(out)
}

pub fn write_truth(path: &Path, truth: &BTreeMap<String, String>) -> Result<()> {
    let mut out = String::from("image_id,label\n");
    for (id, label) in truth {
        out.push_str(&format!("{},{}\n", quote(id), quote(label)));
    }
    write_file(path, out)
}

pub fn read_train_counts(path: &Path) -> Result<BTreeMap<String, u64>> {
    let mut out = BTreeMap::new();
    for (line, rec) in read_table(path, &["label", "train_count"])? {
        let n = rec[1].trim().parse().map_err(|_| Error::parse(path, line, format!("not a count: {:?}", rec[1])))?;
        out.insert(rec[0].clone(), n);
    }
    Ok(out)
}

/// Counts in catalog order.
pub fn write_train_counts(path: &Path, catalog: &ClassCatalog, counts: &BTreeMap<String, u64>) -> Result<()> {
    let mut out = String::from("label,train_count\n");
    for l in catalog.labels() {
        out.push_str(&format!("{},{}\n", quote(l), counts.get(l).copied().unwrap_or(0)));
    }
    write_file(path, out)
}

pub fn render_series(points: &[SeriesPoint]) -> String {
    let mut out = String::from("label,train_count,value\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", quote(&p.label), p.train_count, p.value));
    }
    out
}

pub fn write_series(path: &Path, points: &[SeriesPoint]) -> Result<()> {
    write_file(path, render_series(points))
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let records = read_records(path)?;
    let (first, rest) = records.split_first().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    if first.1 != header {
        return Err(Error::parse(path, 1, format!("header must be {}", header.join(","))));
    }
    for (line, rec) in rest {
        if rec.len() != header.len() {
            return Err(Error::parse(path, *line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
    }
    Ok(rest.to_vec())
}

fn read_records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = read_string(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((line, rec.iter().map(String::from).collect()));
    }
    Ok(out)
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}
