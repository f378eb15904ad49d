//! Pipeline stages behind the `bombus` subcommands.
//!
//! Every stage writes under the configured output directory and leaves the
//! resolved configuration beside its artifacts as `config.json`:
//!
//! ```text
//! dataset/   manifest.jsonl, images/, summary.json, train_counts.csv, truth.csv
//!            manifest.augmented.jsonl and images/*.augN.png after `augment`
//! augment/   augment.json (operators applied per new image)
//! model/     model artifact (or $BOMBUS_MODEL_DIR)
//! predict/   probabilities.csv, top3.json
//! ensemble/  composite.csv, composite_sum.csv, top3.json
//! evaluate/  report.json
//! report/    report.md or report.json, *_vs_count.csv
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bombus_core::augment::{apply_policy, build_augmented_set, AppliedOp};
use bombus_core::dataset::{DatasetManifest, ImageRecord, Source, Split};
use bombus_core::ensemble::{build_encoder_composite, sum_softmax, top_k, ProbabilityMatrix, ScoreRows, TopKPrediction};
use bombus_core::eval::MetricsReport;
use bombus_core::image::Geometry;
use bombus_core::model::{self, HeadConfig, Model, TrainedModel};
use serde::Serialize;

use crate::artifact::{load_model, load_with_id, save_model, to_json};
use crate::config::{EnsembleMode, ExperimentConfig};
use crate::imaging::{load_image, save_png};
use crate::interchange::{read_matrix, read_train_counts, read_truth, write_matrix, write_train_counts, write_truth};
use crate::manifest::{load_manifest, resolve, save_manifest};
use crate::report::{load_report, render_report, write_series_files, NamedReport, RenderOptions, ReportFormat};
use crate::{sha256_hex, write_file, Error, Result};

pub const MODEL_DIR_ENV: &str = "BOMBUS_MODEL_DIR";

/// Resolved configuration plus where stage outputs go.
pub struct Pipeline {
    pub config: ExperimentConfig,
    out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub classes: usize,
    pub geometry: Geometry,
    pub class_distribution: BTreeMap<String, u64>,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub empty_classes: Vec<String>,
}

#[derive(Debug, Serialize)]
struct AugmentEntry<'a> {
    id: &'a str,
    parent_id: &'a str,
    ops: Vec<AppliedOp>,
}

#[derive(Debug, Serialize)]
pub struct PredictionFile {
    pub model_id: String,
    pub predictions: Vec<TopKPrediction>,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Self {
        let out = config.output_dir();
        Pipeline { config, out }
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    /// Model directory: explicit path, then `$BOMBUS_MODEL_DIR`, then `<output>/model`.
    pub fn model_dir(&self, explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(MODEL_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| self.stage_dir("model"))
    }

    fn dataset_manifest(&self) -> PathBuf {
        self.stage_dir("dataset").join("manifest.jsonl")
    }

    fn augmented_manifest(&self) -> PathBuf {
        self.stage_dir("dataset").join("manifest.augmented.jsonl")
    }

    fn snapshot(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("config.json"), self.config.to_canonical_json())
    }

    fn geometry(&self) -> Geometry {
        self.config.model.backbone_spec().input_geometry
    }

    /// Ingest, inject negatives, split and standardize.
    pub fn dataset_build(&self) -> Result<DatasetSummary> {
        let src = self.config.dataset.manifest.as_deref().ok_or_else(|| Error::Usage("dataset.manifest is not set".into()))?;
        let src = self.config.resolve_path(src);
        let mut manifest = load_manifest(&src)?;
        let mut origin: BTreeMap<String, PathBuf> =
            manifest.records().iter().map(|r| (r.id.clone(), resolve(&src, r))).collect();
        if let Some(neg) = &self.config.dataset.negatives {
            let neg = self.config.resolve_path(neg);
            let negatives = load_manifest(&neg)?;
            manifest.catalog().ensure_same_order(negatives.catalog())?;
            origin.extend(negatives.records().iter().map(|r| (r.id.clone(), resolve(&neg, r))));
            manifest = manifest.inject_negative_class(negatives.into_records())?;
        }
        let manifest = manifest.split(self.config.model.train.train_fraction, self.config.dataset.seed)?;

        let dir = self.stage_dir("dataset");
        let geometry = self.geometry();
        let mut records = Vec::with_capacity(manifest.len());
        for (i, r) in manifest.records().iter().enumerate() {
            let image = load_image(&origin[&r.id], geometry)?;
            let rel = format!("images/{i:05}_{}.png", file_safe(&r.id));
            save_png(&dir.join(&rel), &image)?;
            records.push(ImageRecord { path: rel, ..r.clone() });
        }
        let manifest = DatasetManifest::new(manifest.catalog().clone(), records, manifest.seed())?;
        save_manifest(&dir.join("manifest.jsonl"), &manifest)?;

        let train_counts = manifest.split_distribution(Split::Train).to_map();
        write_train_counts(&dir.join("train_counts.csv"), manifest.catalog(), &train_counts)?;
        write_truth(&dir.join("truth.csv"), &test_truth(&manifest))?;
        let count = |s: Split| manifest.in_split(s).count();
        let summary = DatasetSummary {
            records: manifest.len(),
            classes: manifest.catalog().len(),
            geometry,
            class_distribution: manifest.class_distribution().to_map(),
            train: count(Split::Train),
            validation: count(Split::Validation),
            test: count(Split::Test),
            empty_classes: manifest.empty_classes().into_iter().map(String::from).collect(),
        };
        write_file(&dir.join("summary.json"), to_json(&summary))?;
        self.snapshot(&dir)?;
        Ok(summary)
    }

    /// Add augmented siblings of train images. Returns how many were written.
    pub fn augment(&self) -> Result<usize> {
        let policy = self.config.augmentation.as_ref().ok_or_else(|| Error::Usage("augmentation is disabled".into()))?;
        let manifest_path = self.dataset_manifest();
        let manifest = load_manifest(&manifest_path)?;
        let (extended, jobs) = build_augmented_set(&manifest, policy)?;
        let geometry = self.geometry();
        let mut log = Vec::with_capacity(jobs.len());
        for job in &jobs {
            let parent = manifest.record(&job.parent_id).expect("job parent exists");
            let image = load_image(&resolve(&manifest_path, parent), geometry)?;
            let (out, ops) = apply_policy(&image, policy, job.draw_seed)?;
            save_png(&resolve(&manifest_path, &job.record), &out)?;
            log.push(AugmentEntry { id: &job.record.id, parent_id: &job.parent_id, ops });
        }
        save_manifest(&self.augmented_manifest(), &extended)?;
        let dir = self.stage_dir("augment");
        write_file(&dir.join("augment.json"), to_json(&log))?;
        self.snapshot(&dir)?;
        Ok(jobs.len())
    }

    /// Train the configured model and save it. Returns the artifact directory
    /// and model id.
    pub fn train(&self, model_dir: Option<&Path>) -> Result<(PathBuf, String)> {
        let m = &self.config.model;
        let manifest_path = if m.train.use_augmented { self.augmented_manifest() } else { self.dataset_manifest() };
        let manifest = load_manifest(&manifest_path)?;
        let catalog = manifest.catalog().clone();
        let model = Model::build(m.backbone_spec(), m.head.clone(), m.train.seed)?;
        let geometry = model.backbone().input_geometry();
        let encode = |split: Split| -> Result<Vec<_>> {
            manifest
                .in_split(split)
                .map(|r| {
                    let image = load_image(&resolve(&manifest_path, r), geometry)?;
                    let y = catalog.index_of(&r.label).expect("validated label");
                    Ok((model.encode(&image)?, y))
                })
                .collect()
        };
        let (train, val) = (encode(Split::Train)?, encode(Split::Validation)?);
        let mut trained = model::train_encoded(model, &catalog, train, val, &m.train, &m.optimizer)?;
        trained.provenance_mut().config_snapshot = Some(self.config.to_canonical_json());
        let dir = self.model_dir(model_dir);
        let id = save_model(&dir, &trained)?;
        Ok((dir, id))
    }

    /// Predict images (or the test split) with one model.
    pub fn predict(&self, model_dir: Option<&Path>, images: &[PathBuf]) -> Result<PredictionFile> {
        let (model, model_id) = load_with_id(&self.model_dir(model_dir))?;
        let matrix = if images.is_empty() {
            let (ids, paths) = self.test_images()?;
            predict_paths(&model, ids, &paths)?
        } else {
            let ids = images.iter().map(|p| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())).collect();
            predict_paths(&model, ids, images)?
        };
        let dir = self.stage_dir("predict");
        write_matrix(&dir.join("probabilities.csv"), &matrix)?;
        let file = PredictionFile { model_id, predictions: top_k(&matrix, matrix.classes().min(3))? };
        write_file(&dir.join("top3.json"), to_json(&file))?;
        self.snapshot(&dir)?;
        Ok(file)
    }

    /// Combine members. Softmax-sum members are probability CSVs or model
    /// directories (scored on the test split); encoder-composite members are
    /// model directories. Returns the composite probability matrix.
    pub fn ensemble(&self, members: &[String], mode: Option<EnsembleMode>) -> Result<ProbabilityMatrix> {
        let cfg = self.config.ensemble.as_ref();
        let members: Vec<String> = if members.is_empty() {
            cfg.map(|e| e.members.iter().map(|m| self.config.resolve_path(m).display().to_string()).collect())
                .unwrap_or_default()
        } else {
            members.to_vec()
        };
        if members.is_empty() {
            return Err(Error::Usage("no ensemble members given".into()));
        }
        let mode = mode.or(cfg.map(|e| e.mode)).unwrap_or(EnsembleMode::SoftmaxSum);
        let dir = self.stage_dir("ensemble");
        let (composite, ranked) = match mode {
            EnsembleMode::SoftmaxSum => {
                let negative = self.known_negative_label();
                let mut test: Option<(Vec<String>, Vec<PathBuf>)> = None;
                let mut matrices = Vec::with_capacity(members.len());
                for m in &members {
                    let p = Path::new(m);
                    if p.is_dir() {
                        let model = load_model(p)?;
                        if test.is_none() {
                            test = Some(self.test_images()?);
                        }
                        let (ids, paths) = test.as_ref().expect("set above");
                        matrices.push(predict_paths(&model, ids.clone(), paths)?);
                    } else {
                        matrices.push(read_matrix(p, negative.as_deref())?);
                    }
                }
                let sums = sum_softmax(&matrices)?;
                write_matrix(&dir.join("composite_sum.csv"), &sums)?;
                let ranked = top_k(&sums, sums.classes().min(3))?;
                (sums.to_mean()?, ranked)
            }
            EnsembleMode::EncoderComposite => {
                let models = members.iter().map(|m| load_model(Path::new(m))).collect::<Result<Vec<_>>>()?;
                let classes = models[0].catalog().len();
                let head = cfg.and_then(|e| e.head.clone()).unwrap_or_else(|| HeadConfig::new(vec![256], 0.0, classes));
                let seed = cfg.map_or(self.config.seed, |e| e.seed);
                let mut composite = build_encoder_composite(models, head, seed)?;
                let manifest_path = self.dataset_manifest();
                let manifest = load_manifest(&manifest_path)?;
                composite.catalog().ensure_same_order(manifest.catalog())?;
                let features = |split: Split| -> Result<Vec<(Vec<f32>, usize)>> {
                    manifest
                        .in_split(split)
                        .map(|r| {
                            let image = load_image(&resolve(&manifest_path, r), self.geometry())?;
                            let y = manifest.catalog().index_of(&r.label).expect("validated label");
                            Ok((composite.features(&image)?, y))
                        })
                        .collect()
                };
                let (train, val) = (features(Split::Train)?, features(Split::Validation)?);
                let history = composite.fit(&train, &val, &self.config.model.train, &self.config.model.optimizer)?.clone();
                write_file(&dir.join("history.json"), to_json(&history))?;
                let (ids, paths) = self.test_images()?;
                let feats = paths
                    .iter()
                    .map(|p| composite.features(&load_image(p, self.geometry())?).map_err(Error::from))
                    .collect::<Result<Vec<_>>>()?;
                let matrix = composite.predict_features(&ids, &feats)?;
                let ranked = top_k(&matrix, matrix.classes().min(3))?;
                (matrix, ranked)
            }
        };
        write_matrix(&dir.join("composite.csv"), &composite)?;
        write_file(&dir.join("top3.json"), to_json(&ranked))?;
        self.snapshot(&dir)?;
        Ok(composite)
    }

    /// Score a probability matrix against truth labels.
    pub fn evaluate(
        &self,
        matrix: Option<&Path>,
        truth: Option<&Path>,
        ks: &[usize],
        train_counts: Option<&Path>,
    ) -> Result<MetricsReport> {
        let matrix = matrix.map(Path::to_path_buf).unwrap_or_else(|| {
            let composite = self.stage_dir("ensemble").join("composite.csv");
            if composite.is_file() { composite } else { self.stage_dir("predict").join("probabilities.csv") }
        });
        let truth = truth.map_or_else(|| self.stage_dir("dataset").join("truth.csv"), Path::to_path_buf);
        let counts_path = train_counts.map(Path::to_path_buf).or_else(|| {
            let p = self.stage_dir("dataset").join("train_counts.csv");
            p.is_file().then_some(p)
        });
        let negative = self.known_negative_label();
        let scores = read_matrix(&matrix, negative.as_deref())?;
        let truth_map = read_truth(&truth)?;
        let counts = counts_path.as_deref().map(read_train_counts).transpose()?;
        let ks = if ks.is_empty() { &self.config.eval.k[..] } else { ks };

        let mut provenance = BTreeMap::new();
        provenance.insert("matrix".into(), file_label(&matrix));
        provenance.insert("matrix_sha256".into(), sha256_hex(&crate::read_bytes(&matrix)?));
        provenance.insert("truth_sha256".into(), sha256_hex(&crate::read_bytes(&truth)?));
        provenance.insert("config_sha256".into(), sha256_hex(self.config.to_canonical_json().as_bytes()));
        if let Some(p) = &self.config.preset {
            provenance.insert("preset".into(), p.clone());
        }
        let report =
            MetricsReport::build(&scores, &truth_map, ks, counts.as_ref(), self.config.eval.threshold, provenance)?;
        let dir = self.stage_dir("evaluate");
        write_file(&dir.join("report.json"), to_json(&report))?;
        self.snapshot(&dir)?;
        Ok(report)
    }

    /// Render reports and write count-series sidecars for the first one.
    pub fn report(&self, reports: &[PathBuf], format: &str, options: RenderOptions) -> Result<PathBuf> {
        let format = ReportFormat::parse(format)?;
        let paths: Vec<PathBuf> =
            if reports.is_empty() { vec![self.stage_dir("evaluate").join("report.json")] } else { reports.to_vec() };
        let named = paths
            .iter()
            .map(|p| Ok(NamedReport { name: report_name(p), report: load_report(p)? }))
            .collect::<Result<Vec<_>>>()?;
        let text = render_report(&named, format, options)?;
        let dir = self.stage_dir("report");
        let out = dir.join(format!("report.{}", format.extension()));
        write_file(&out, text)?;
        if let Some(series) = &named[0].report.series {
            write_series_files(&dir, series)?;
        }
        self.snapshot(&dir)?;
        Ok(out)
    }

    /// Ids and image paths of the test split, negatives excluded.
    fn test_images(&self) -> Result<(Vec<String>, Vec<PathBuf>)> {
        let path = self.dataset_manifest();
        let manifest = load_manifest(&path)?;
        let test: Vec<&ImageRecord> =
            manifest.in_split(Split::Test).filter(|r| r.source != Source::Negative).collect();
        if test.is_empty() {
            return Err(bombus_core::Error::EmptyInput.into());
        }
        Ok(test.iter().map(|r| (r.id.clone(), resolve(&path, r))).unzip())
    }

    fn known_negative_label(&self) -> Option<String> {
        let path = self.dataset_manifest();
        if !path.is_file() {
            return None;
        }
        load_manifest(&path).ok().and_then(|m| m.catalog().negative_label().map(String::from))
    }
}

fn predict_paths(model: &TrainedModel, ids: Vec<String>, paths: &[PathBuf]) -> Result<ProbabilityMatrix> {
    if paths.is_empty() {
        return Err(bombus_core::Error::EmptyInput.into());
    }
    let geometry = model.model().backbone().input_geometry();
    let mut rows = Vec::with_capacity(paths.len() * model.catalog().len());
    for p in paths {
        rows.extend(model.model().predict_one(&load_image(p, geometry)?)?);
    }
    Ok(ProbabilityMatrix::new(ids, model.catalog().clone(), rows)?)
}

fn test_truth(manifest: &DatasetManifest) -> BTreeMap<String, String> {
    manifest
        .in_split(Split::Test)
        .filter(|r| r.source != Source::Negative)
        .map(|r| (r.id.clone(), r.label.clone()))
        .collect()
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn file_label(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Report name: the directory holding `report.json`, or the file stem.
fn report_name(p: &Path) -> String {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "report" {
        if let Some(parent) = p.parent().and_then(Path::file_name) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_are_sanitized() {
        assert_eq!(file_safe("a/b c.jpg"), "a_b_c_jpg");
    }

    #[test]
    fn report_names_prefer_directory() {
        assert_eq!(report_name(Path::new("runs/vgg19/report.json")), "vgg19");
        assert_eq!(report_name(Path::new("runs/inception.json")), "inception");
    }
}
