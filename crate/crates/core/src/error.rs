//! Error type shared by all pipeline stages.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("empty manifest: {path}")]
    EmptyManifest { path: PathBuf },

    #[error("manifest row {row}: unknown label token {token:?} (expected NMF/AMF/0/1)")]
    UnknownLabel { row: usize, token: String },

    #[error("manifest row {row}: duplicate sample_id {sample_id:?}")]
    DuplicateSampleId { row: usize, sample_id: String },

    #[error("manifest row {row}: missing field {field}")]
    MissingField { row: usize, field: &'static str },

    #[error("image {path} has dimensions {width}x{height}, expected {expected}x{expected} RGB")]
    BadImageDimensions {
        path: PathBuf,
        width: u32,
        height: u32,
        expected: u32,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("crop ratio {ratio} out of range (0, 1]")]
    InvalidCropRatio { ratio: f64 },

    #[error("input image is {height}x{width}, center crop requires a square image")]
    NonSquareImage { height: usize, width: usize },

    #[error("normalization std must be positive, got {std}")]
    InvalidNormalization { std: f64 },

    #[error("unknown backbone identifier {0:?}")]
    UnknownBackbone(String),

    #[error("pretrained weights for {identifier:?} unavailable: {reason}")]
    WeightsUnavailable { identifier: String, reason: String },

    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("fold {fold} out of range for k={k}")]
    FoldOutOfRange { fold: usize, k: usize },

    #[error("sample {sample_id:?} has no fold assignment")]
    MissingAssignment { sample_id: String },

    #[error("non-finite loss at fold {fold}, epoch {epoch}, step {step}")]
    NonFiniteLoss { fold: usize, epoch: usize, step: usize },

    #[error("non-finite gradient: {context}")]
    NonFiniteGradient { context: String },

    #[error("empty split: {side} set of fold {fold} has no samples")]
    EmptySplit { side: &'static str, fold: usize },

    #[error("checkpoint {path} is corrupt: {reason}")]
    CheckpointCorrupt { path: PathBuf, reason: String },

    #[error("fingerprint mismatch: {context} (expected {expected}, found {found})")]
    FingerprintMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("crop spec mismatch: checkpoint trained with ratio {trained}, inference requested {requested}")]
    CropSpecMismatch { trained: f64, requested: f64 },

    #[error("decision threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),

    #[error("ragged probability matrix: fold {fold} has {found} entries, expected {expected}")]
    RaggedMatrix {
        fold: usize,
        expected: usize,
        found: usize,
    },

    #[error("probability {value} outside [0, 1] at fold {fold}, sample {sample}")]
    ProbabilityOutOfRange {
        fold: usize,
        sample: usize,
        value: f64,
    },

    #[error("label sequences have mismatched lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("labels must be binary (0/1), found {0}")]
    NonBinaryLabel(u8),

    #[error("no folds included in aggregate (all excluded as non-converged)")]
    NoIncludedFolds,

    #[error("metric sets differ: {0}")]
    MetricSetMismatch(String),

    #[error("prediction file {path}: {reason}")]
    BadPredictionFile { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
