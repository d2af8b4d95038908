//! Error type shared by all toolkit modules.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by dataset, image, metric and training operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("manifest schema violation{}: {field}: {message}", entry_suffix(*.entry))]
    Schema {
        /// Zero-based entry index inside the manifest, when known.
        entry: Option<usize>,
        field: String,
        message: String,
    },

    #[error("dangling image reference in entry {entry}: {path}")]
    DanglingReference { entry: usize, path: PathBuf },

    #[error("shape mismatch in {context}: {expected} vs {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate quadrilateral: {0}")]
    DegenerateQuad(String),

    #[error("perceptual backend failure: {0}")]
    Backend(String),

    #[error("adapter failure: {0}")]
    Adapter(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("evaluation aborted: {failed}/{total} entries failed (threshold 10%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
}

fn entry_suffix(entry: Option<usize>) -> String {
    match entry {
        Some(i) => format!(" at entry {i}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn schema(entry: Option<usize>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            entry,
            field: field.into(),
            message: message.into(),
        }
    }
}
