//! Experiment configuration.
//!
//! A config is a JSON object. Resolution layers, lowest first:
//! built-in defaults, the named preset, the file itself, then `--set`
//! overrides. Every seed left unspecified is filled from the top-level
//! `seed`. Unknown keys are rejected. The resolved form serializes
//! canonically and re-resolves to itself.

use std::path::{Path, PathBuf};

use bombus_core::augment::AugmentationPolicy;
use bombus_core::model::{
    BackboneName, BackboneSpec, HeadConfig, OptimizerConfig, TrainConfig, WeightSource,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::artifact::to_json;
use crate::{read_string, Error, Result};

pub const PRESETS: [(&str, &str); 4] = [
    ("vgg19-best", include_str!("../presets/vgg19-best.json")),
    ("vgg16-best", include_str!("../presets/vgg16-best.json")),
    ("resnet50-final", include_str!("../presets/resnet50-final.json")),
    ("inception-best", include_str!("../presets/inception-best.json")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub seed: u64,
    pub dataset: DatasetConfig,
    /// `None` disables augmentation.
    pub augmentation: Option<AugmentationPolicy>,
    pub model: ModelConfig,
    pub ensemble: Option<EnsembleConfig>,
    pub eval: EvalConfig,
    pub output: String,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Source manifest for `dataset build`.
    pub manifest: Option<String>,
    /// Manifest of negative-class records to inject.
    pub negatives: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneChoice {
    pub name: BackboneName,
    pub weight_source: WeightSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneChoice,
    pub head: HeadConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
}

impl ModelConfig {
    /// Backbone spec; pooling follows the head's `global_average_pooling`.
    pub fn backbone_spec(&self) -> BackboneSpec {
        BackboneSpec::new(self.backbone.name, self.backbone.weight_source, self.head.global_average_pooling)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    #[default]
    SoftmaxSum,
    EncoderComposite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Probability-matrix CSVs or model artifact directories.
    #[serde(default)]
    pub members: Vec<String>,
    #[serde(default)]
    pub mode: EnsembleMode,
    /// Head of the encoder composite; defaults to one 256-node layer.
    #[serde(default)]
    pub head: Option<HeadConfig>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub k: Vec<usize>,
    pub threshold: u64,
}

fn defaults() -> Value {
    let mut augmentation = serde_json::to_value(AugmentationPolicy::default()).expect("policy serializes");
    augmentation.as_object_mut().expect("object").remove("seed");
    json!({
        "preset": null,
        "seed": 0,
        "dataset": { "manifest": null, "negatives": null },
        "augmentation": augmentation,
        "model": {
            "backbone": { "name": "vgg16", "weight_source": "pretrained" },
            "head": {
                "hidden_layers": 1,
                "nodes_per_layer": [256],
                "dropout": 0.0,
                "batch_norm": false,
                "global_average_pooling": true,
                "output_classes": 30
            },
            "optimizer": {
                "kind": "adam",
                "learning_rate": 1e-4,
                "decay": null,
                "weight_decay": null,
                "momentum": null,
                "loss": "categorical_crossentropy"
            },
            "train": {
                "epochs": 10,
                "batch_size": 32,
                "train_fraction": 0.8,
                "use_augmented": false,
                "overfit_patience": null
            }
        },
        "ensemble": null,
        "eval": { "k": [1, 3], "threshold": 150 },
        "output": "out"
    })
}

pub fn preset(name: &str) -> Result<Value> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| Error::UnknownPreset(name.into()))?;
    Ok(serde_json::from_str(text).expect("bundled preset is valid JSON"))
}

/// Read and resolve a config file. Relative paths inside it are taken
/// relative to the file's directory.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = read_string(path)?;
    let user: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = resolve(user, overrides)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

/// Resolve a config value. `overrides` are `dotted.key=value` strings whose
/// value is parsed as JSON, or taken as a plain string when that fails.
pub fn resolve(mut user: Value, overrides: &[String]) -> Result<ExperimentConfig> {
    if !user.is_object() {
        return Err(Error::Config("config must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut user, o)?;
    }
    normalize(&mut user);

    let mut merged = defaults();
    if let Some(name) = user.get("preset").and_then(Value::as_str) {
        merge(&mut merged, preset(name)?);
    } else if let Some(p) = user.get("preset").filter(|p| !p.is_null()) {
        return Err(Error::Config(format!("preset must be a string, found {p}")));
    }
    merge(&mut merged, user);
    fill_seeds(&mut merged);

    let cfg: ExperimentConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        m.head.validate()?;
        m.optimizer.validate()?;
        m.train.validate()?;
        m.backbone_spec().validate()?;
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        if let Some(e) = &self.ensemble {
            if let Some(h) = &e.head {
                h.validate()?;
            }
            if e.mode == EnsembleMode::EncoderComposite && !e.members.is_empty() && e.members.len() < 2 {
                return Err(Error::Config("encoder composite needs at least two members".into()));
            }
        }
        if self.eval.k.is_empty() || self.eval.k.contains(&0) {
            return Err(Error::Config("eval.k must list positive integers".into()));
        }
        Ok(())
    }

    /// Canonical JSON: pretty-printed, keys in declaration order.
    pub fn to_canonical_json(&self) -> String {
        to_json(self)
    }

    pub fn resolve_path(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve_path(&self.output)
    }
}

/// Accept `"augmentation": false` for disabled and derive `hidden_layers`
/// from `nodes_per_layer` when only the latter is given.
fn normalize(user: &mut Value) {
    if user.get("augmentation") == Some(&Value::Bool(false)) {
        user["augmentation"] = Value::Null;
    }
    for ptr in ["/model/head", "/ensemble/head"] {
        if let Some(head) = user.pointer_mut(ptr).and_then(Value::as_object_mut) {
            if !head.contains_key("hidden_layers") {
                if let Some(n) = head.get("nodes_per_layer").and_then(Value::as_array).map(Vec::len) {
                    head.insert("hidden_layers".into(), n.into());
                }
            }
        }
    }
}

/// Deep merge; objects merge key by key, anything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn fill_seeds(cfg: &mut Value) {
    let seed = cfg.get("seed").cloned().unwrap_or(Value::from(0));
    for ptr in ["/dataset", "/model/train", "/augmentation", "/ensemble"] {
        if let Some(Value::Object(obj)) = cfg.pointer_mut(ptr) {
            obj.entry("seed").or_insert_with(|| seed.clone());
        }
    }
}

fn apply_override(cfg: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut node = cfg;
    for p in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(Error::Config(format!("override {key:?} descends into a non-object")));
        }
        let obj: &mut Map<String, Value> = node.as_object_mut().expect("checked");
        node = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::Config(format!("override {key:?} descends into a non-object"))),
    }
}
