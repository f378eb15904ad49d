//! Dataset manifests as JSON Lines.
//!
//! Line 1 is a header object `{"labels": [...], "negative_label": ..., "seed": ...}`;
//! every further non-blank line is one image record with keys `id`, `path`,
//! `label`, `split`, `source` and `parent_id`. Record paths are relative to
//! the manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use bombus_core::dataset::{ClassCatalog, DatasetManifest, ImageRecord};
use serde::{Deserialize, Serialize};

use crate::{read_string, write_file, Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    labels: Vec<String>,
    #[serde(default)]
    negative_label: Option<String>,
    #[serde(default)]
    seed: u64,
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = read_string(path)?;
    parse_manifest(&text, path)
}

/// Parse manifest text; `path` is only used in error messages.
pub fn parse_manifest(text: &str, path: &Path) -> Result<DatasetManifest> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    let header: Header = serde_json::from_str(first).map_err(|e| Error::parse(path, 1, format!("header: {e}")))?;
    let catalog = ClassCatalog::new(header.labels, header.negative_label)
        .map_err(|e| record_error(path, 1, e))?;

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in lines {
        let n = i + 1;
        let record: ImageRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(path, n, format!("malformed record: {e}")))?;
        if !seen.insert(record.id.clone()) {
            return Err(record_error(path, n, bombus_core::Error::DuplicateId(record.id)));
        }
        if !catalog.contains(&record.label) {
            let e = bombus_core::Error::UnknownLabel { label: record.label, context: format!("record \"{}\"", record.id) };
            return Err(record_error(path, n, e));
        }
        records.push(record);
    }
    Ok(DatasetManifest::new(catalog, records, header.seed)?)
}

fn record_error(path: &Path, line: usize, source: bombus_core::Error) -> Error {
    Error::Record { path: path.to_path_buf(), line, source }
}

pub fn render_manifest(manifest: &DatasetManifest) -> String {
    let header = Header {
        labels: manifest.catalog().labels().to_vec(),
        negative_label: manifest.catalog().negative_label().map(String::from),
        seed: manifest.seed(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in manifest.records() {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    write_file(path, render_manifest(manifest))
}

/// Absolute location of a record's image.
pub fn resolve(manifest_path: &Path, record: &ImageRecord) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(&record.path)
}
