//! Class catalogs, image manifests and deterministic partitioning.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Ordered, duplicate-free list of class names.
///
/// Index order is the column order of every probability matrix produced
/// against this catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct ClassCatalog {
    labels: Vec<String>,
    negative_label: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogRepr {
    labels: Vec<String>,
    #[serde(default)]
    negative_label: Option<String>,
}

impl TryFrom<CatalogRepr> for ClassCatalog {
    type Error = Error;
    fn try_from(r: CatalogRepr) -> Result<Self> {
        ClassCatalog::new(r.labels, r.negative_label)
    }
}

impl From<ClassCatalog> for CatalogRepr {
    fn from(c: ClassCatalog) -> Self {
        CatalogRepr { labels: c.labels, negative_label: c.negative_label }
    }
}

impl ClassCatalog {
    pub fn new(labels: Vec<String>, negative_label: Option<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidCatalog("no labels".into()));
        }
        let mut seen = BTreeSet::new();
        for label in &labels {
            if label.is_empty() {
                return Err(Error::InvalidCatalog("empty label".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidCatalog(alloc::format!("duplicate label \"{label}\"")));
            }
        }
        if let Some(neg) = &negative_label {
            if !seen.contains(neg.as_str()) {
                return Err(Error::InvalidCatalog(alloc::format!(
                    "negative label \"{neg}\" is not one of the labels"
                )));
            }
        }
        Ok(ClassCatalog { labels, negative_label })
    }

    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(labels.into_iter().map(Into::into).collect(), None)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn negative_label(&self) -> Option<&str> {
        self.negative_label.as_deref()
    }

    pub fn negative_index(&self) -> Option<usize> {
        self.negative_label.as_deref().and_then(|l| self.index_of(l))
    }

    /// Fails unless both catalogs list the same labels in the same order.
    pub fn ensure_same_order(&self, other: &ClassCatalog) -> Result<()> {
        if self.labels == other.labels {
            return Ok(());
        }
        let msg = if self.labels.len() != other.labels.len() {
            alloc::format!("{} classes vs {} classes", self.labels.len(), other.labels.len())
        } else {
            let i = self.labels.iter().zip(&other.labels).position(|(a, b)| a != b).unwrap_or(0);
            alloc::format!(
                "column {i} is \"{}\" in one catalog and \"{}\" in the other",
                self.labels[i], other.labels[i]
            )
        };
        Err(Error::CatalogMismatch(msg))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Target,
    Negative,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub path: String,
    pub label: String,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub source: Source,
    #[serde(default)]
    pub parent_id: Option<String>,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, path: impl Into<String>, label: impl Into<String>) -> Self {
        ImageRecord {
            id: id.into(),
            path: path.into(),
            label: label.into(),
            split: Split::Unassigned,
            source: Source::Target,
            parent_id: None,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }
}

/// Per-class record counts in catalog order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: Vec<(String, usize)>,
}

impl ClassHistogram {
    pub fn get(&self, label: &str) -> Option<usize> {
        self.counts.iter().find(|(l, _)| l == label).map(|(_, n)| *n)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, n)| n).sum()
    }

    pub fn min(&self) -> Option<usize> {
        self.counts.iter().map(|(_, n)| *n).min()
    }

    pub fn max(&self) -> Option<usize> {
        self.counts.iter().map(|(_, n)| *n).max()
    }

    pub fn to_map(&self) -> BTreeMap<String, u64> {
        self.counts.iter().map(|(l, n)| (l.clone(), *n as u64)).collect()
    }
}

/// A validated catalog plus its image records.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    catalog: ClassCatalog,
    records: Vec<ImageRecord>,
    seed: u64,
}

impl DatasetManifest {
    /// Validates every record against the catalog and each other.
    ///
    /// Errors name the offending record. Callers that read from a file map
    /// the record index back to a line number.
    pub fn new(catalog: ClassCatalog, records: Vec<ImageRecord>, seed: u64) -> Result<Self> {
        validate_records(&catalog, &records)?;
        Ok(DatasetManifest { catalog, records, seed })
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Histogram over all records.
    pub fn class_distribution(&self) -> ClassHistogram {
        self.histogram(|_| true)
    }

    /// Histogram over records of one split.
    pub fn split_distribution(&self, split: Split) -> ClassHistogram {
        self.histogram(|r| r.split == split)
    }

    fn histogram(&self, keep: impl Fn(&ImageRecord) -> bool) -> ClassHistogram {
        let mut counts: Vec<(String, usize)> =
            self.catalog.labels().iter().map(|l| (l.clone(), 0)).collect();
        for r in self.records.iter().filter(|r| keep(r)) {
            if let Some(i) = self.catalog.index_of(&r.label) {
                counts[i].1 += 1;
            }
        }
        ClassHistogram { counts }
    }

    /// Catalog labels without any record.
    pub fn empty_classes(&self) -> Vec<&str> {
        let hist = self.class_distribution();
        self.catalog
            .labels()
            .iter()
            .zip(&hist.counts)
            .filter(|(_, (_, n))| *n == 0)
            .map(|(l, _)| l.as_str())
            .collect()
    }

    /// Stratified train/validation partition of every non-test record.
    ///
    /// Within each class, records are ordered by a keyed hash of
    /// `(seed, id)` and the first `round(train_fraction * n)` become train.
    /// The result depends only on record ids, the fraction and the seed.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidFraction(train_fraction));
        }
        if let Some(r) = self.records.iter().find(|r| r.source == Source::Augmented) {
            return Err(Error::AugmentedBeforeSplit(r.id.clone()));
        }
        let mut per_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); self.catalog.len()];
        for (i, r) in self.records.iter().enumerate() {
            if r.split == Split::Test {
                continue;
            }
            let class = self.catalog.index_of(&r.label).expect("validated label");
            per_class[class].push(i);
        }
        let mut records = self.records.clone();
        for members in &mut per_class {
            members.sort_by_cached_key(|&i| {
                let id = &self.records[i].id;
                (rng::derive(seed, "split", id), id.clone())
            });
            let n_train = stratum_train_count(members.len(), train_fraction);
            for (rank, &i) in members.iter().enumerate() {
                records[i].split = if rank < n_train { Split::Train } else { Split::Validation };
            }
        }
        Ok(DatasetManifest { catalog: self.catalog.clone(), records, seed })
    }

    /// Merge honey-bee style negative examples into the manifest.
    ///
    /// Negatives are flagged `source = negative`. A negative marked `test` is
    /// returned to the unassigned pool, since test sets hold target classes only.
    pub fn inject_negative_class(&self, negatives: Vec<ImageRecord>) -> Result<Self> {
        if negatives.is_empty() {
            return Ok(self.clone());
        }
        let expected = self.catalog.negative_label().ok_or(Error::NoNegativeLabel)?;
        let mut records = self.records.clone();
        records.reserve(negatives.len());
        for mut r in negatives {
            if r.label != expected {
                return Err(Error::NegativeLabelMismatch {
                    id: r.id,
                    label: r.label,
                    expected: expected.to_string(),
                });
            }
            if r.source == Source::Augmented || r.parent_id.is_some() {
                return Err(Error::InvalidRecord {
                    id: r.id,
                    reason: "negative records cannot be augmented copies".into(),
                });
            }
            r.source = Source::Negative;
            if r.split == Split::Test {
                r.split = Split::Unassigned;
            }
            records.push(r);
        }
        DatasetManifest::new(self.catalog.clone(), records, self.seed)
    }

    /// Append records after validating the combined set.
    pub fn with_appended(&self, extra: Vec<ImageRecord>) -> Result<Self> {
        let mut records = self.records.clone();
        records.extend(extra);
        DatasetManifest::new(self.catalog.clone(), records, self.seed)
    }
}

/// `round(fraction * n)`, halves rounded away from zero.
pub fn stratum_train_count(n: usize, fraction: f64) -> usize {
    (libm::round(fraction * n as f64) as usize).min(n)
}

fn validate_records(catalog: &ClassCatalog, records: &[ImageRecord]) -> Result<()> {
    let mut by_id: BTreeMap<&str, &ImageRecord> = BTreeMap::new();
    for r in records {
        if r.id.is_empty() {
            return Err(Error::InvalidRecord { id: r.id.clone(), reason: "empty id".into() });
        }
        if by_id.insert(r.id.as_str(), r).is_some() {
            return Err(Error::DuplicateId(r.id.clone()));
        }
        if !catalog.contains(&r.label) {
            return Err(Error::UnknownLabel {
                label: r.label.clone(),
                context: alloc::format!("record \"{}\"", r.id),
            });
        }
    }
    let negative = catalog.negative_label();
    for r in records {
        let bad = |reason: &str| Error::InvalidRecord { id: r.id.clone(), reason: reason.into() };
        match r.source {
            Source::Augmented => {
                let parent_id = r.parent_id.as_deref().ok_or_else(|| bad("augmented record without parent_id"))?;
                let parent = by_id.get(parent_id).ok_or_else(|| bad("parent_id references an unknown record"))?;
                if parent.source == Source::Augmented {
                    return Err(bad("parent_id references another augmented record"));
                }
                if parent.label != r.label {
                    return Err(bad("augmented label differs from its parent"));
                }
                if r.split != Split::Train {
                    return Err(bad("augmented records must belong to the train split"));
                }
            }
            Source::Negative => {
                let expected = negative.ok_or(Error::NoNegativeLabel)?;
                if r.label != expected {
                    return Err(Error::NegativeLabelMismatch {
                        id: r.id.clone(),
                        label: r.label.clone(),
                        expected: expected.to_string(),
                    });
                }
                if r.parent_id.is_some() {
                    return Err(bad("parent_id is only valid on augmented records"));
                }
                if r.split == Split::Test {
                    return Err(bad("negative-class records cannot be in the test split"));
                }
            }
            Source::Target => {
                if r.parent_id.is_some() {
                    return Err(bad("parent_id is only valid on augmented records"));
                }
                if negative == Some(r.label.as_str()) {
                    return Err(bad("negative-class label on a target record; use source \"negative\""));
                }
            }
        }
    }
    Ok(())
}
