use std::path::PathBuf;

/// Errors raised by the polycube pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("mesh is disconnected ({components} components); split it before computing genus")]
    Disconnected { components: usize },

    #[error("malformed context: {0}")]
    MalformedContext(String),

    #[error("tensor layout error: {0}")]
    Layout(String),

    #[error("assembly has no occupied cells")]
    EmptyAssembly,

    #[error("sampler contract violation: {0}")]
    ContractViolation(String),

    #[error("unsupported cell for structured hex meshing: {0}")]
    UnsupportedCell(String),

    #[error("subregion {region} has genus {genus}; repartition with different split ratios")]
    RepartitionRequired { region: usize, genus: i64 },

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
