//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("io error: {0}")]
    Stream(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid schema: {0}")]
    Schema(String),

    // graph construction
    #[error("unknown object type `{0}`")]
    UnknownObjectType(String),
    #[error("unknown link type `{0}`")]
    UnknownLinkType(String),
    #[error("edge {edge}: endpoint types {found} do not match link type {expected}")]
    EndpointMismatch {
        edge: String,
        found: String,
        expected: String,
    },
    #[error("edge references unknown object `{0}`")]
    DanglingEndpoint(String),
    #[error("duplicate object id `{0}`")]
    DuplicateObject(String),
    #[error("self-loop on object `{0}`")]
    SelfLoop(String),
    #[error("object index {index} out of range (graph has {len} objects)")]
    ObjectOutOfRange { index: usize, len: usize },

    // labels
    #[error("unknown object `{0}` in labels")]
    UnknownObject(String),
    #[error("object `{id}` has type `{actual}` but labels target `{expected}`")]
    WrongObjectType {
        id: String,
        actual: String,
        expected: String,
    },
    #[error("object `{0}` carries more than one class")]
    ConflictingLabel(String),
    #[error("label set is empty")]
    EmptyLabels,
    #[error("class {class} has no labeled object")]
    MissingClass { class: usize },
    #[error("class id {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    // sampling
    #[error("walk cannot start from object {0}: it has no links")]
    DeadStart(usize),
    #[error("metapath is not composable at step {0}")]
    NotComposable(usize),
    #[error("metapath is empty")]
    EmptyMetaPath,
    #[error("start pool is empty or has the wrong object type")]
    InvalidStartPool,
    #[error("could not sample a usable seed path after {0} attempts")]
    SeedExhausted(usize),
    #[error("no objects of the targeted type")]
    NoTargetedObjects,

    // numerics
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("object {0} has no embedding row")]
    MissingEmbedding(usize),
    #[error("no module for link type {0}")]
    MissingModule(usize),
    #[error("tape has already been consumed by backward")]
    TapeConsumed,
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("training diverged at step {step}")]
    Diverged {
        step: usize,
        last_good: Option<Box<crate::trainer::Model>>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("cannot stratify: class {class} has {count} member(s), need at least 2")]
    Unstratifiable { class: usize, count: usize },
    #[error("prediction and truth cover different objects")]
    MismatchedObjects,
    #[error("infeasible planted graph: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
