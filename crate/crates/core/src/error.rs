use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not an NFT1 file (magic {found:?})")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported NFT1 version {found} (expected {expected})")]
    UnsupportedVersion { path: PathBuf, found: u16, expected: u16 },

    #[error("{path}: length mismatch: header implies {expected} data bytes, found {actual}")]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("non-finite value {value} at element {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("unknown network label {label:?}; expected one of {}", crate::atlas::Network::ALL_NAMES.join(", "))]
    UnknownNetwork { label: String },

    #[error("atlas structure: {0}")]
    Atlas(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("validation: {0}")]
    Validation(String),

    #[error("configuration: {0}")]
    Config(String),

    /// Fewer than three layers: no nontrivial depth operator can be fit.
    #[error("degenerate trajectory: {layers} layers (need at least 3)")]
    DegenerateTrajectory { layers: usize },

    /// Centered snapshots are numerically zero.
    #[error("zero dynamics: centered snapshots have no singular value above {floor:e}")]
    ZeroDynamics { floor: f64 },

    #[error("interaction not estimable: cell ({modality}, {network}) is empty")]
    NotEstimable { modality: String, network: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A warning escalated by strict mode.
    #[error("strict mode: {0}")]
    Strict(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Degeneracies that a batch pipeline absorbs rather than aborting on.
    pub fn is_degeneracy(&self) -> bool {
        matches!(
            self,
            Error::DegenerateTrajectory { .. } | Error::ZeroDynamics { .. } | Error::Numerical(_)
        )
    }

    /// The error with any stage context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
