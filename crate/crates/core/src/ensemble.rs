//! Probability matrices, softmax-sum composites, top-k selection and the
//! feature-concatenation composite.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassCatalog;
use crate::image::Image;
use crate::model::head::{Head, HeadConfig};
use crate::model::train::{self, TrainConfig, TrainingHistory};
use crate::model::{OptimizerConfig, TrainedModel};
use crate::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-5;
const COMPOSITE_SUM_TOLERANCE: f64 = 1e-4;

/// Read access shared by probability matrices and composite scores.
pub trait ScoreRows {
    fn image_ids(&self) -> &[String];
    fn catalog(&self) -> &ClassCatalog;
    /// Row-major `N x C` values.
    fn values(&self) -> &[f64];

    fn len(&self) -> usize {
        self.image_ids().len()
    }

    fn is_empty(&self) -> bool {
        self.image_ids().is_empty()
    }

    fn classes(&self) -> usize {
        self.catalog().len()
    }

    fn row(&self, i: usize) -> &[f64] {
        let c = self.classes();
        &self.values()[i * c..(i + 1) * c]
    }

    fn shape(&self) -> (usize, usize) {
        (self.len(), self.classes())
    }
}

/// Per-image softmax distributions over a catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    image_ids: Vec<String>,
    catalog: ClassCatalog,
    rows: Vec<f64>,
}

impl ProbabilityMatrix {
    /// Rows must be non-negative and sum to one within `1e-5`.
    pub fn new(image_ids: Vec<String>, catalog: ClassCatalog, rows: Vec<f64>) -> Result<Self> {
        check_shape(&image_ids, &catalog, &rows)?;
        let c = catalog.len();
        for (i, row) in rows.chunks_exact(c).enumerate() {
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidMatrix(format!("row \"{}\" has entry {v}", image_ids[i])));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidMatrix(format!("row \"{}\" sums to {s}", image_ids[i])));
            }
        }
        Ok(ProbabilityMatrix { image_ids, catalog, rows })
    }

    pub fn into_parts(self) -> (Vec<String>, ClassCatalog, Vec<f64>) {
        (self.image_ids, self.catalog, self.rows)
    }
}

impl ScoreRows for ProbabilityMatrix {
    fn image_ids(&self) -> &[String] {
        &self.image_ids
    }
    fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }
    fn values(&self) -> &[f64] {
        &self.rows
    }
}

/// Element-wise sum of member probabilities, not renormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeScores {
    image_ids: Vec<String>,
    catalog: ClassCatalog,
    rows: Vec<f64>,
    members: usize,
}

impl CompositeScores {
    /// Rows must sum to `members` within `1e-4`.
    pub fn new(image_ids: Vec<String>, catalog: ClassCatalog, rows: Vec<f64>, members: usize) -> Result<Self> {
        check_shape(&image_ids, &catalog, &rows)?;
        if members == 0 {
            return Err(Error::EmptyInput);
        }
        for (i, row) in rows.chunks_exact(catalog.len()).enumerate() {
            let s: f64 = row.iter().sum();
            if !(s - members as f64).abs().le(&COMPOSITE_SUM_TOLERANCE) || row.iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidMatrix(format!(
                    "composite row \"{}\" sums to {s}, expected {members}",
                    image_ids[i]
                )));
            }
        }
        Ok(CompositeScores { image_ids, catalog, rows, members })
    }

    pub fn members(&self) -> usize {
        self.members
    }

    /// Divide by the member count, giving a probability matrix.
    pub fn to_mean(&self) -> Result<ProbabilityMatrix> {
        let m = self.members as f64;
        ProbabilityMatrix::new(self.image_ids.clone(), self.catalog.clone(), self.rows.iter().map(|v| v / m).collect())
    }
}

impl ScoreRows for CompositeScores {
    fn image_ids(&self) -> &[String] {
        &self.image_ids
    }
    fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }
    fn values(&self) -> &[f64] {
        &self.rows
    }
}

fn check_shape(image_ids: &[String], catalog: &ClassCatalog, rows: &[f64]) -> Result<()> {
    if rows.len() != image_ids.len() * catalog.len() {
        return Err(Error::InvalidMatrix(format!(
            "{} values for {} images x {} classes",
            rows.len(),
            image_ids.len(),
            catalog.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for id in image_ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// Sum member matrices element-wise. Members must share catalog order and
/// image id order exactly; see [`align`] for reordering.
pub fn sum_softmax(matrices: &[ProbabilityMatrix]) -> Result<CompositeScores> {
    let first = matrices.first().ok_or(Error::EmptyInput)?;
    for m in &matrices[1..] {
        first.catalog.ensure_same_order(&m.catalog)?;
        if m.image_ids != first.image_ids {
            return Err(Error::ImageIdMismatch(id_mismatch(&first.image_ids, &m.image_ids)));
        }
    }
    // Adding each element's member values in sorted order makes the result
    // independent of member order, bit for bit.
    let mut terms = Vec::with_capacity(matrices.len());
    let rows = (0..first.rows.len())
        .map(|e| {
            terms.clear();
            terms.extend(matrices.iter().map(|m| m.rows[e]));
            terms.sort_by(f64::total_cmp);
            terms.iter().sum()
        })
        .collect();
    Ok(CompositeScores {
        image_ids: first.image_ids.clone(),
        catalog: first.catalog.clone(),
        rows,
        members: matrices.len(),
    })
}

fn id_mismatch(a: &[String], b: &[String]) -> String {
    if a.len() != b.len() {
        return format!("{} vs {} images", a.len(), b.len());
    }
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => format!("row {i}: \"{}\" vs \"{}\"", a[i], b[i]),
        None => String::from("ids differ"),
    }
}

/// Reorder `matrix` rows to follow `order`, which must be a permutation of
/// its image ids.
pub fn align(matrix: &ProbabilityMatrix, order: &[String]) -> Result<ProbabilityMatrix> {
    if order.len() != matrix.image_ids.len() {
        return Err(Error::ImageIdMismatch(id_mismatch(&matrix.image_ids, order)));
    }
    let index: BTreeMap<&str, usize> = matrix.image_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut rows = Vec::with_capacity(matrix.rows.len());
    for id in order {
        let i = *index
            .get(id.as_str())
            .ok_or_else(|| Error::ImageIdMismatch(format!("\"{id}\" is not in the matrix")))?;
        rows.extend_from_slice(matrix.row(i));
    }
    ProbabilityMatrix::new(order.to_vec(), matrix.catalog.clone(), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKPrediction {
    pub image_id: String,
    pub ranked_labels: Vec<String>,
    pub scores: Vec<f64>,
}

/// Catalog indices of the `k` largest values, descending; ties go to the
/// lower index.
pub fn rank_row(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// The `k` best labels for every image.
pub fn top_k<S: ScoreRows + ?Sized>(scores: &S, k: usize) -> Result<Vec<TopKPrediction>> {
    let c = scores.classes();
    if k < 1 || k > c {
        return Err(Error::KOutOfRange { k, classes: c });
    }
    Ok((0..scores.len())
        .map(|i| {
            let row = scores.row(i);
            let ranked = rank_row(row, k);
            TopKPrediction {
                image_id: scores.image_ids()[i].clone(),
                ranked_labels: ranked.iter().map(|&j| String::from(scores.catalog().label(j))).collect(),
                scores: ranked.iter().map(|&j| row[j]).collect(),
            }
        })
        .collect())
}

/// Frozen members whose concatenated embeddings feed a new trainable head.
#[derive(Debug, Clone)]
pub struct EncoderComposite {
    members: Vec<TrainedModel>,
    head: Head,
    history: Option<TrainingHistory>,
}

/// Define an untrained composite over `models`. The head's input width is
/// the sum of the members' embedding widths.
pub fn build_encoder_composite(models: Vec<TrainedModel>, head: HeadConfig, seed: u64) -> Result<EncoderComposite> {
    if models.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "encoder composite needs at least 2 members, got {}",
            models.len()
        )));
    }
    for m in &models[1..] {
        models[0].catalog().ensure_same_order(m.catalog())?;
    }
    if head.output_classes != models[0].catalog().len() {
        return Err(Error::CatalogMismatch(format!(
            "head has {} outputs, members have {} labels",
            head.output_classes,
            models[0].catalog().len()
        )));
    }
    let width = models.iter().map(|m| m.model().embedding_dim()).sum();
    let head = Head::new(head, width, seed)?;
    Ok(EncoderComposite { members: models, head, history: None })
}

impl EncoderComposite {
    pub fn members(&self) -> &[TrainedModel] {
        &self.members
    }

    pub fn catalog(&self) -> &ClassCatalog {
        self.members[0].catalog()
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn history(&self) -> Option<&TrainingHistory> {
        self.history.as_ref()
    }

    /// Concatenated member embeddings; each member resizes the image to its
    /// own input geometry.
    pub fn features(&self, image: &Image) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(self.input_dim());
        for m in &self.members {
            let g = m.model().backbone().input_geometry();
            let resized;
            let view = if image.geometry() == g {
                image
            } else {
                resized = image.resized(g);
                &resized
            };
            out.extend(m.model().extract_one(view)?);
        }
        Ok(out)
    }

    /// Train the head on cached feature rows from [`EncoderComposite::features`].
    pub fn fit(
        &mut self,
        train: &[(Vec<f32>, usize)],
        validation: &[(Vec<f32>, usize)],
        tc: &TrainConfig,
        oc: &OptimizerConfig,
    ) -> Result<&TrainingHistory> {
        let width = self.input_dim();
        if let Some((row, _)) = train.iter().chain(validation).find(|(r, _)| r.len() != width) {
            return Err(Error::InvalidParameter(format!("feature row of width {}, expected {width}", row.len())));
        }
        let split = |set: &[(Vec<f32>, usize)]| -> (Vec<Vec<f32>>, Vec<usize>) { set.iter().cloned().unzip() };
        let (tx, ty) = split(train);
        let (vx, vy) = split(validation);
        let history = train::fit(
            &mut self.head,
            None,
            train::Inputs { rows: &tx, labels: &ty },
            train::Inputs { rows: &vx, labels: &vy },
            tc,
            oc,
        )?;
        Ok(self.history.insert(history))
    }

    /// Probabilities from cached feature rows.
    pub fn predict_features(&self, image_ids: &[String], features: &[Vec<f32>]) -> Result<ProbabilityMatrix> {
        if features.is_empty() {
            return Err(Error::EmptyInput);
        }
        if image_ids.len() != features.len() {
            return Err(Error::ImageIdMismatch(format!("{} ids for {} rows", image_ids.len(), features.len())));
        }
        if let Some(r) = features.iter().find(|r| r.len() != self.input_dim()) {
            return Err(Error::InvalidParameter(format!(
                "feature row of width {}, expected {}",
                r.len(),
                self.input_dim()
            )));
        }
        let rows = train::predict_rows(&self.head, None, features);
        ProbabilityMatrix::new(image_ids.to_vec(), self.catalog().clone(), rows)
    }

    pub fn predict(&self, image_ids: &[String], images: &[Image]) -> Result<ProbabilityMatrix> {
        let feats = images.iter().map(|i| self.features(i)).collect::<Result<Vec<_>>>()?;
        self.predict_features(image_ids, &feats)
    }
}
