//! Model artifact directories.
//!
//! ```text
//! weights.safetensors   every weight tensor, f32 little-endian
//! model.json            format version and provenance
//! catalog.json          class labels and negative label
//! history.json          per-epoch training history
//! config.json           resolved experiment configuration
//! SHA256SUMS            `<hex>  <file>` for each file above
//! ```
//!
//! Loading verifies every checksum before parsing anything.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use bombus_core::dataset::ClassCatalog;
use bombus_core::model::{Model, NamedTensor, Provenance, TrainedModel, TrainingHistory};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::{read_bytes, read_string, sha256_hex, write_file, Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const WEIGHTS: &str = "weights.safetensors";
const MODEL: &str = "model.json";
const CATALOG: &str = "catalog.json";
const HISTORY: &str = "history.json";
const CONFIG: &str = "config.json";
const SUMS: &str = "SHA256SUMS";
const FILES: [&str; 5] = [WEIGHTS, MODEL, CATALOG, HISTORY, CONFIG];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    provenance: Provenance,
}

/// Write `model` into `dir`, replacing any previous artifact files.
/// Returns the model id.
pub fn save_model(dir: &Path, model: &TrainedModel) -> Result<String> {
    let tensors = model.model().tensors();
    let bytes: Vec<(String, Vec<u8>)> =
        tensors.iter().map(|t| (t.name.clone(), t.data.iter().flat_map(|v| v.to_le_bytes()).collect())).collect();
    let views = tensors
        .iter()
        .zip(&bytes)
        .map(|(t, (name, b))| {
            let view = TensorView::new(Dtype::F32, t.shape.clone(), b).map_err(|e| Error::artifact(dir, e.to_string()))?;
            Ok((name.clone(), view))
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = safetensors::tensor::serialize(views, &None).map_err(|e| Error::artifact(dir, e.to_string()))?;

    let provenance = model.provenance();
    let config = match &provenance.config_snapshot {
        Some(s) => s.clone(),
        None => to_json(&serde_json::json!({
            "backbone": provenance.backbone,
            "head": provenance.head,
            "optimizer": provenance.optimizer,
            "train": provenance.train,
        })),
    };
    let contents: [(&str, Vec<u8>); 5] = [
        (WEIGHTS, weights),
        (MODEL, to_json(&ModelFile { format_version: FORMAT_VERSION, provenance: provenance.clone() }).into_bytes()),
        (CATALOG, to_json(model.catalog()).into_bytes()),
        (HISTORY, to_json(model.history()).into_bytes()),
        (CONFIG, config.into_bytes()),
    ];
    let mut sums = String::new();
    for (name, data) in &contents {
        write_file(&dir.join(name), data)?;
        sums.push_str(&format!("{}  {name}\n", sha256_hex(data)));
    }
    write_file(&dir.join(SUMS), &sums)?;
    Ok(model_id_of(&sums))
}

/// Load and verify an artifact.
pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    Ok(load_with_id(dir)?.0)
}

/// Load an artifact whose catalog must equal `expected`, label for label.
pub fn load_model_for(dir: &Path, expected: &ClassCatalog) -> Result<TrainedModel> {
    let model = load_model(dir)?;
    expected.ensure_same_order(model.catalog())?;
    Ok(model)
}

/// Load an artifact together with its model id.
pub fn load_with_id(dir: &Path) -> Result<(TrainedModel, String)> {
    let sums = read_string(&dir.join(SUMS))?;
    let listed = verify_checksums(dir, &sums)?;

    let meta: serde_json::Value = parse_json(dir, MODEL, &listed[MODEL])?;
    let found = meta.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion { path: dir.to_path_buf(), found, expected: FORMAT_VERSION });
    }
    let meta: ModelFile = serde_json::from_value(meta).map_err(|e| Error::artifact(dir, format!("{MODEL}: {e}")))?;
    let catalog: ClassCatalog = parse_json(dir, CATALOG, &listed[CATALOG])?;
    let history: TrainingHistory = parse_json(dir, HISTORY, &listed[HISTORY])?;

    let st = SafeTensors::deserialize(&listed[WEIGHTS]).map_err(|e| Error::artifact(dir, format!("{WEIGHTS}: {e}")))?;
    let mut tensors = Vec::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(Error::artifact(dir, format!("tensor {name} is {:?}, expected F32", view.dtype())));
        }
        let data = view.data().chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        tensors.push(NamedTensor { name, shape: view.shape().to_vec(), data });
    }
    let p = &meta.provenance;
    let mut model = Model::build(p.backbone, p.head.clone(), p.init_seed)?;
    model.load_tensors(tensors)?;
    let trained = TrainedModel::new(model, catalog, history, meta.provenance)?;
    Ok((trained, model_id_of(&sums)))
}

/// Short stable identifier derived from the checksum manifest.
pub fn model_id(dir: &Path) -> Result<String> {
    Ok(model_id_of(&read_string(&dir.join(SUMS))?))
}

fn model_id_of(sums: &str) -> String {
    sha256_hex(sums.as_bytes())[..16].to_string()
}

fn verify_checksums(dir: &Path, sums: &str) -> Result<HashMap<&'static str, Vec<u8>>> {
    let mut expected = BTreeMap::new();
    for line in sums.lines().filter(|l| !l.trim().is_empty()) {
        let (hash, name) =
            line.split_once("  ").ok_or_else(|| Error::artifact(dir, format!("malformed {SUMS} line: {line}")))?;
        expected.insert(name.to_string(), hash.to_string());
    }
    let mut out = HashMap::new();
    for name in FILES {
        let hash = expected.get(name).ok_or_else(|| Error::artifact(dir, format!("{SUMS} does not list {name}")))?;
        let data = read_bytes(&dir.join(name))?;
        if sha256_hex(&data) != *hash {
            return Err(Error::Checksum { path: dir.to_path_buf(), file: name.to_string() });
        }
        out.insert(name, data);
    }
    Ok(out)
}

fn parse_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::artifact(dir, format!("{name}: {e}")))
}

pub(crate) fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}
