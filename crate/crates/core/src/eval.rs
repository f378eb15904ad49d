//! Evaluation metrics: top-k accuracy, the confusion matrix, per-class
//! precision and recall, negative-class leakage and the training-count
//! series.
//!
//! Undefined ratios (zero denominators) are reported as `0.0` together
//! with an explicit flag.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassCatalog;
use crate::ensemble::{rank_row, ScoreRows};
use crate::{Error, Result};

/// Version of the serialized [`MetricsReport`] layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Default training-count threshold for the correlation summary.
pub const DEFAULT_COUNT_THRESHOLD: u64 = 150;

fn truth_index(catalog: &ClassCatalog, truth: &BTreeMap<String, String>, id: &str) -> Result<usize> {
    let label = truth.get(id).ok_or_else(|| Error::MissingTruth(String::from(id)))?;
    catalog.index_of(label).ok_or_else(|| Error::UnknownLabel {
        label: label.clone(),
        context: format!("truth for \"{id}\""),
    })
}

/// Fraction of scored images whose truth label is among their `k` best.
pub fn top_k_accuracy<S: ScoreRows + ?Sized>(scores: &S, truth: &BTreeMap<String, String>, k: usize) -> Result<f64> {
    let c = scores.classes();
    if k < 1 || k > c {
        return Err(Error::KOutOfRange { k, classes: c });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut hits = 0usize;
    for (i, id) in scores.image_ids().iter().enumerate() {
        let y = truth_index(scores.catalog(), truth, id)?;
        if rank_row(scores.row(i), k).contains(&y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / scores.len() as f64)
}

/// Counts with actual classes as rows and predicted classes as columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    catalog: ClassCatalog,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(catalog: ClassCatalog) -> Self {
        let c = catalog.len();
        ConfusionMatrix { catalog, counts: vec![vec![0; c]; c] }
    }

    pub fn from_counts(catalog: ClassCatalog, counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = catalog.len();
        if counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(Error::InvalidMatrix(format!("confusion counts must be {c} x {c}")));
        }
        Ok(ConfusionMatrix { catalog, counts })
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual][predicted]
    }

    pub fn record(&mut self, actual: usize, predicted: usize) {
        self.counts[actual][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, actual: usize) -> u64 {
        self.counts[actual].iter().sum()
    }

    pub fn column_sum(&self, predicted: usize) -> u64 {
        self.counts.iter().map(|r| r[predicted]).sum()
    }

    pub fn diagonal_sum(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Predictions of class `c` whose actual class differs.
    pub fn false_positives(&self, c: usize) -> u64 {
        self.column_sum(c) - self.counts[c][c]
    }

    /// Element-wise sum; catalogs must match.
    pub fn merge(&self, other: &ConfusionMatrix) -> Result<Self> {
        self.catalog.ensure_same_order(&other.catalog)?;
        let mut out = self.clone();
        for (r, o) in out.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
        Ok(out)
    }
}

/// Tally aligned predicted and actual labels.
pub fn confusion<P: AsRef<str>, A: AsRef<str>>(catalog: &ClassCatalog, predicted: &[P], actual: &[A]) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::ImageIdMismatch(format!(
            "{} predictions for {} truth labels",
            predicted.len(),
            actual.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(catalog.clone());
    let idx = |label: &str, what: &str| {
        catalog.index_of(label).ok_or_else(|| Error::UnknownLabel { label: String::from(label), context: String::from(what) })
    };
    for (p, a) in predicted.iter().zip(actual) {
        let pi = idx(p.as_ref(), "prediction")?;
        let ai = idx(a.as_ref(), "truth")?;
        cm.record(ai, pi);
    }
    Ok(cm)
}

/// Confusion matrix of the top-1 predictions in `scores`.
pub fn confusion_from_scores<S: ScoreRows + ?Sized>(scores: &S, truth: &BTreeMap<String, String>) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::zeros(scores.catalog().clone());
    for (i, id) in scores.image_ids().iter().enumerate() {
        let y = truth_index(scores.catalog(), truth, id)?;
        cm.record(y, rank_row(scores.row(i), 1)[0]);
    }
    Ok(cm)
}

/// A ratio that may have had a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

impl Ratio {
    pub fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Ratio { value: 0.0, undefined: true }
        } else {
            Ratio { value: num as f64 / den as f64, undefined: false }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub label: String,
    pub precision: Ratio,
    pub recall: Ratio,
}

pub fn precision_recall(cm: &ConfusionMatrix) -> Vec<PrecisionRecall> {
    (0..cm.catalog.len())
        .map(|c| PrecisionRecall {
            label: String::from(cm.catalog.label(c)),
            precision: Ratio::of(cm.get(c, c), cm.column_sum(c)),
            recall: Ratio::of(cm.get(c, c), cm.row_sum(c)),
        })
        .collect()
}

/// Target images predicted as the negative class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leakage {
    pub count: u64,
    /// Target images evaluated (negative-class rows excluded).
    pub target_total: u64,
    /// `count / target_total`, or 0 when there are no target images.
    pub fraction: f64,
}

pub fn leakage(cm: &ConfusionMatrix, negative_label: &str) -> Result<Leakage> {
    let neg = cm.catalog.index_of(negative_label).ok_or(Error::NoNegativeLabel)?;
    let (mut count, mut target_total) = (0u64, 0u64);
    for r in (0..cm.catalog.len()).filter(|&r| r != neg) {
        count += cm.get(r, neg);
        target_total += cm.row_sum(r);
    }
    let fraction = if target_total == 0 { 0.0 } else { count as f64 / target_total as f64 };
    Ok(Leakage { count, target_total, fraction })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub label: String,
    pub train_count: u64,
    pub value: f64,
}

/// Classes split by training count, with their false-positive totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub threshold: u64,
    pub below: Vec<String>,
    pub at_or_above: Vec<String>,
    pub false_positives_below: u64,
    pub false_positives_at_or_above: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSeries {
    pub false_positives: Vec<SeriesPoint>,
    pub recall: Vec<SeriesPoint>,
    pub precision: Vec<SeriesPoint>,
    pub summary: ThresholdSummary,
}

/// Per-class false positives, recall and precision against training-image
/// counts, plus a summary around `threshold`.
pub fn count_correlation_series(cm: &ConfusionMatrix, train_counts: &BTreeMap<String, u64>, threshold: u64) -> Result<CountSeries> {
    let pr = precision_recall(cm);
    let mut out = CountSeries {
        false_positives: Vec::new(),
        recall: Vec::new(),
        precision: Vec::new(),
        summary: ThresholdSummary {
            threshold,
            below: Vec::new(),
            at_or_above: Vec::new(),
            false_positives_below: 0,
            false_positives_at_or_above: 0,
        },
    };
    for (c, label) in cm.catalog.labels().iter().enumerate() {
        let n = *train_counts.get(label).ok_or_else(|| Error::MissingTrainCount(label.clone()))?;
        let fp = cm.false_positives(c);
        let point = |value: f64| SeriesPoint { label: label.clone(), train_count: n, value };
        out.false_positives.push(point(fp as f64));
        out.recall.push(point(pr[c].recall.value));
        out.precision.push(point(pr[c].precision.value));
        if n < threshold {
            out.summary.below.push(label.clone());
            out.summary.false_positives_below += fp;
        } else {
            out.summary.at_or_above.push(label.clone());
            out.summary.false_positives_at_or_above += fp;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: Ratio,
    pub recall: Ratio,
    pub support: u64,
    pub train_count: Option<u64>,
    pub false_positives: u64,
}

/// Everything reported for one scored matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub evaluated: u64,
    pub top1_accuracy: f64,
    /// Top-3, or top-C when the catalog has fewer than three classes.
    pub top3_accuracy: f64,
    /// Accuracy for every requested `k`.
    pub accuracy_at_k: BTreeMap<usize, f64>,
    pub per_class: Vec<ClassMetrics>,
    pub leakage: Option<Leakage>,
    pub confusion: ConfusionMatrix,
    pub series: Option<CountSeries>,
    /// Model and configuration identifiers.
    pub provenance: BTreeMap<String, String>,
}

impl MetricsReport {
    /// Evaluate `scores` against `truth` at every `k` in `ks` (plus 1 and 3).
    /// Series are produced when training counts are given; leakage when the
    /// catalog has a negative label.
    pub fn build<S: ScoreRows + ?Sized>(
        scores: &S,
        truth: &BTreeMap<String, String>,
        ks: &[usize],
        train_counts: Option<&BTreeMap<String, u64>>,
        threshold: u64,
        provenance: BTreeMap<String, String>,
    ) -> Result<Self> {
        let top1_accuracy = top_k_accuracy(scores, truth, 1)?;
        let top3_accuracy = top_k_accuracy(scores, truth, scores.classes().min(3))?;
        let mut accuracy_at_k = BTreeMap::new();
        for &k in ks {
            accuracy_at_k.insert(k, top_k_accuracy(scores, truth, k)?);
        }
        let confusion = confusion_from_scores(scores, truth)?;
        let series = train_counts.map(|t| count_correlation_series(&confusion, t, threshold)).transpose()?;
        let per_class = precision_recall(&confusion)
            .into_iter()
            .enumerate()
            .map(|(c, pr)| ClassMetrics {
                train_count: train_counts.and_then(|t| t.get(&pr.label).copied()),
                support: confusion.row_sum(c),
                false_positives: confusion.false_positives(c),
                label: pr.label,
                precision: pr.precision,
                recall: pr.recall,
            })
            .collect();
        let leakage = match scores.catalog().negative_label() {
            Some(neg) => Some(leakage(&confusion, neg)?),
            None => None,
        };
        Ok(MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            evaluated: confusion.total(),
            top1_accuracy,
            top3_accuracy,
            accuracy_at_k,
            per_class,
            leakage,
            confusion,
            series,
            provenance,
        })
    }
}
