//! Error types shared across the library.

use thiserror::Error;

/// Top-level error type for every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("feature {index} ({id}): expected Polygon or MultiPolygon, found {found}")]
    GeometryKind {
        index: usize,
        id: String,
        found: String,
    },

    #[error("duplicate id {id:?} (features {first} and {second})")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },

    #[error("invalid geometry for {id}: {detail}")]
    InvalidGeometry { id: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation in {op}: {detail}")]
    Contract { op: String, detail: String },

    #[error("rank-deficient design matrix; collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("column mapping error: {0}")]
    ColumnMapping(String),

    #[error("{module}: {source}")]
    Stage {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, module: &'static str) -> Error {
        Error::Stage {
            module,
            source: Box::new(self),
        }
    }

    pub(crate) fn contract(op: &str, detail: impl Into<String>) -> Error {
        Error::Contract {
            op: op.to_string(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
