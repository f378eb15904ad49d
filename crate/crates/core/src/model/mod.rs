//! Transfer-learning classifiers: a backbone feature extractor topped by a
//! configurable dense head.
//!
//! A [`Model`] is built from a [`BackboneSpec`] and a [`HeadConfig`], trained
//! with [`train`] into a [`TrainedModel`], and serialized through its named
//! tensors.

pub mod backbone;
pub mod head;
pub mod optim;
pub mod train;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use backbone::{Backbone, BackboneName, BackboneSpec, Encoded, WeightSource};
pub use head::{Head, HeadConfig};
pub use optim::{lr_at, Decay, DecayUnit, Loss, OptimizerConfig, OptimizerKind};
pub use train::{detect_overfit, first_overfit_epoch, EpochRecord, TrainConfig, TrainingHistory};

use crate::dataset::ClassCatalog;
use crate::ensemble::ProbabilityMatrix;
use crate::image::Image;
use crate::{Error, Result};

/// A weight tensor with its name and row-major shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Backbone plus head, untrained or trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    backbone: Backbone,
    head: Head,
}

impl Model {
    pub fn build(backbone: BackboneSpec, head: HeadConfig, seed: u64) -> Result<Self> {
        backbone.validate()?;
        head.validate()?;
        if head.global_average_pooling != backbone.global_average_pooling {
            return Err(Error::InvalidConfig(format!(
                "head global_average_pooling={} but backbone uses {}",
                head.global_average_pooling, backbone.global_average_pooling
            )));
        }
        let backbone = Backbone::new(backbone, seed)?;
        let head = Head::new(head, backbone.feature_dim(), seed)?;
        Ok(Model { backbone, head })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    /// Parameters updated by training.
    pub fn trainable_parameter_count(&self) -> usize {
        self.head.parameter_count() + self.backbone.trainable_parameter_count()
    }

    pub fn encode(&self, image: &Image) -> Result<Encoded> {
        self.backbone.encode(image)
    }

    /// Class probabilities for one image.
    pub fn predict_one(&self, image: &Image) -> Result<Vec<f64>> {
        let f = self.backbone.features(image)?;
        Ok(self.head.predict(&f, 1))
    }

    /// Last hidden activations, or pooled backbone features without hidden layers.
    pub fn extract_one(&self, image: &Image) -> Result<Vec<f32>> {
        let f = self.backbone.features(image)?;
        Ok(self.head.penultimate(&f, 1))
    }

    /// Width of [`Model::extract_one`].
    pub fn embedding_dim(&self) -> usize {
        self.head.penultimate_dim()
    }

    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self
            .backbone
            .tensors()
            .into_iter()
            .map(|(n, shape, d)| NamedTensor { name: n.to_string(), shape, data: d.to_vec() })
            .collect();
        out.extend(
            self.head
                .tensors()
                .into_iter()
                .map(|(name, shape, d)| NamedTensor { name, shape, data: d.to_vec() }),
        );
        out
    }

    /// Replace every weight with the tensor of the same name. The set of
    /// names and every shape must match exactly.
    pub fn load_tensors(&mut self, tensors: Vec<NamedTensor>) -> Result<()> {
        let expected: BTreeMap<String, Vec<usize>> = self.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        let mut given: BTreeMap<String, NamedTensor> = BTreeMap::new();
        for t in tensors {
            match expected.get(&t.name) {
                None => return Err(Error::TensorMismatch(format!("unexpected tensor {}", t.name))),
                Some(shape) if *shape != t.shape => {
                    return Err(Error::TensorMismatch(format!(
                        "tensor {} has shape {:?}, expected {:?}",
                        t.name, t.shape, shape
                    )))
                }
                Some(shape) if shape.iter().product::<usize>() != t.data.len() => {
                    return Err(Error::TensorMismatch(format!("tensor {} data length disagrees with shape", t.name)))
                }
                Some(_) => {}
            }
            given.insert(t.name.clone(), t);
        }
        if let Some(missing) = expected.keys().find(|k| !given.contains_key(*k)) {
            return Err(Error::TensorMismatch(format!("missing tensor {missing}")));
        }
        for (name, slot) in self.backbone.tensors_mut() {
            *slot = given.remove(name).map(|t| t.data).unwrap_or_default();
        }
        for (name, slot) in self.head.tensors_mut() {
            *slot = given.remove(&name).map(|t| t.data).unwrap_or_default();
        }
        Ok(())
    }
}

/// How a trained model came to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub backbone: BackboneSpec,
    pub head: HeadConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    /// Backbone fingerprint before training; equal afterwards when frozen.
    pub backbone_fingerprint: u64,
    /// Canonical experiment configuration, when trained from one.
    #[serde(default)]
    pub config_snapshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    model: Model,
    catalog: ClassCatalog,
    history: TrainingHistory,
    provenance: Provenance,
}

impl TrainedModel {
    pub fn new(model: Model, catalog: ClassCatalog, history: TrainingHistory, provenance: Provenance) -> Result<Self> {
        if model.head.output_classes() != catalog.len() {
            return Err(Error::CatalogMismatch(format!(
                "model has {} outputs, catalog has {} labels",
                model.head.output_classes(),
                catalog.len()
            )));
        }
        if model.backbone.spec() != &provenance.backbone || model.head.config() != &provenance.head {
            return Err(Error::InvalidConfig("provenance disagrees with model architecture".into()));
        }
        Ok(TrainedModel { model, catalog, history, provenance })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn history(&self) -> &TrainingHistory {
        &self.history
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn provenance_mut(&mut self) -> &mut Provenance {
        &mut self.provenance
    }

    /// Softmax probabilities, one row per image, columns in catalog order.
    pub fn predict(&self, image_ids: &[String], images: &[Image]) -> Result<ProbabilityMatrix> {
        if images.is_empty() {
            return Err(Error::EmptyInput);
        }
        if image_ids.len() != images.len() {
            return Err(Error::ImageIdMismatch(format!("{} ids for {} images", image_ids.len(), images.len())));
        }
        let mut rows = Vec::with_capacity(images.len() * self.catalog.len());
        for image in images {
            rows.extend(self.model.predict_one(image)?);
        }
        ProbabilityMatrix::new(image_ids.to_vec(), self.catalog.clone(), rows)
    }

    /// Per-image embeddings; see [`Model::extract_one`].
    pub fn extract_features(&self, images: &[Image]) -> Result<Vec<Vec<f32>>> {
        if images.is_empty() {
            return Err(Error::EmptyInput);
        }
        images.iter().map(|i| self.model.extract_one(i)).collect()
    }
}

/// Train `model` on labelled images. Labels index into `catalog`.
pub fn train(
    model: Model,
    catalog: &ClassCatalog,
    train: &[(Image, usize)],
    validation: &[(Image, usize)],
    tc: &TrainConfig,
    oc: &OptimizerConfig,
) -> Result<TrainedModel> {
    let enc = |set: &[(Image, usize)]| -> Result<Vec<(Encoded, usize)>> {
        set.iter().map(|(i, y)| Ok((model.encode(i)?, *y))).collect()
    };
    let (t, v) = (enc(train)?, enc(validation)?);
    train_encoded(model, catalog, t, v, tc, oc)
}

/// As [`train`], with inputs already passed through [`Model::encode`].
pub fn train_encoded(
    mut model: Model,
    catalog: &ClassCatalog,
    train: Vec<(Encoded, usize)>,
    validation: Vec<(Encoded, usize)>,
    tc: &TrainConfig,
    oc: &OptimizerConfig,
) -> Result<TrainedModel> {
    if model.head.output_classes() != catalog.len() {
        return Err(Error::CatalogMismatch(format!(
            "head has {} outputs, catalog has {} labels",
            model.head.output_classes(),
            catalog.len()
        )));
    }
    let fingerprint = model.backbone.fingerprint();
    let split = |set: Vec<(Encoded, usize)>| -> (Vec<Vec<f32>>, Vec<usize>) {
        set.into_iter().map(|(e, y)| (e.0, y)).unzip()
    };
    let (tx, ty) = split(train);
    let (vx, vy) = split(validation);
    let trainable = model.backbone.trainable_projection();
    let Model { backbone, head } = &mut model;
    let history = train::fit(
        head,
        trainable.then_some(backbone),
        train::Inputs { rows: &tx, labels: &ty },
        train::Inputs { rows: &vx, labels: &vy },
        tc,
        oc,
    )?;
    let provenance = Provenance {
        backbone: model.backbone.spec().clone(),
        head: model.head.config().clone(),
        optimizer: oc.clone(),
        train: tc.clone(),
        init_seed: tc.seed,
        backbone_fingerprint: fingerprint,
        config_snapshot: None,
    };
    TrainedModel::new(model, catalog.clone(), history, provenance)
}
