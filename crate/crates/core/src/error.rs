use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    InvalidCatalog(String),
    DuplicateId(String),
    UnknownLabel { label: String, context: String },
    InvalidRecord { id: String, reason: String },
    InvalidFraction(f64),
    NoNegativeLabel,
    NegativeLabelMismatch { id: String, label: String, expected: String },
    AugmentedBeforeSplit(String),
    InvalidImage(String),
    InvalidParameter(String),
    GeometryMismatch { expected: (usize, usize), found: (usize, usize) },
    UnknownBackbone(String),
    InvalidConfig(String),
    EmptyTrainSplit,
    BatchTooLarge { batch: usize, train: usize },
    NonFiniteLoss { epoch: usize, step: usize },
    EmptyInput,
    CatalogMismatch(String),
    ImageIdMismatch(String),
    KOutOfRange { k: usize, classes: usize },
    MissingTruth(String),
    MissingTrainCount(String),
    InvalidMatrix(String),
    TensorMismatch(String),
}

impl Error {
    /// Stable snake_case identifier, used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidCatalog(_) => "invalid_catalog",
            Error::DuplicateId(_) => "duplicate_id",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::InvalidRecord { .. } => "invalid_record",
            Error::InvalidFraction(_) => "invalid_fraction",
            Error::NoNegativeLabel => "no_negative_label",
            Error::NegativeLabelMismatch { .. } => "label_mismatch",
            Error::AugmentedBeforeSplit(_) => "augmented_before_split",
            Error::InvalidImage(_) => "invalid_image",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::GeometryMismatch { .. } => "geometry_mismatch",
            Error::UnknownBackbone(_) => "unknown_backbone",
            Error::InvalidConfig(_) => "invalid_config",
            Error::EmptyTrainSplit => "empty_train_split",
            Error::BatchTooLarge { .. } => "batch_too_large",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::EmptyInput => "empty_input",
            Error::CatalogMismatch(_) => "catalog_mismatch",
            Error::ImageIdMismatch(_) => "image_id_mismatch",
            Error::KOutOfRange { .. } => "k_out_of_range",
            Error::MissingTruth(_) => "missing_truth",
            Error::MissingTrainCount(_) => "missing_train_count",
            Error::InvalidMatrix(_) => "invalid_matrix",
            Error::TensorMismatch(_) => "tensor_mismatch",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidCatalog(msg) => write!(f, "invalid class catalog: {msg}"),
            Error::DuplicateId(id) => write!(f, "duplicate image id \"{id}\""),
            Error::UnknownLabel { label, context } => {
                write!(f, "label \"{label}\" is not in the catalog ({context})")
            }
            Error::InvalidRecord { id, reason } => write!(f, "record \"{id}\": {reason}"),
            Error::InvalidFraction(x) => write!(f, "fraction {x} is outside [0, 1]"),
            Error::NoNegativeLabel => f.write_str("catalog has no negative label"),
            Error::NegativeLabelMismatch { id, label, expected } => write!(
                f,
                "negative record \"{id}\" carries label \"{label}\", expected \"{expected}\""
            ),
            Error::AugmentedBeforeSplit(id) => {
                write!(f, "augmented record \"{id}\" exists before splitting")
            }
            Error::InvalidImage(msg) => write!(f, "invalid image: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::GeometryMismatch { expected, found } => write!(
                f,
                "image geometry {}x{} does not match required {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Error::UnknownBackbone(name) => write!(f, "unknown backbone \"{name}\""),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::EmptyTrainSplit => f.write_str("train split is empty"),
            Error::BatchTooLarge { batch, train } => {
                write!(f, "batch size {batch} exceeds train set size {train}")
            }
            Error::NonFiniteLoss { epoch, step } => {
                write!(f, "non-finite loss at epoch {epoch}, step {step}")
            }
            Error::EmptyInput => f.write_str("input is empty"),
            Error::CatalogMismatch(msg) => write!(f, "catalog mismatch: {msg}"),
            Error::ImageIdMismatch(msg) => write!(f, "image id mismatch: {msg}"),
            Error::KOutOfRange { k, classes } => {
                write!(f, "k = {k} is outside [1, {classes}]")
            }
            Error::MissingTruth(id) => write!(f, "no truth label for image \"{id}\""),
            Error::MissingTrainCount(label) => {
                write!(f, "no train count for class \"{label}\"")
            }
            Error::InvalidMatrix(msg) => write!(f, "invalid probability matrix: {msg}"),
            Error::TensorMismatch(msg) => write!(f, "tensor mismatch: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
