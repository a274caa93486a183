use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor error: {0}")]
    Tensor(String),

    #[error("unsupported cast from {from} to {to}")]
    UnsupportedCast { from: &'static str, to: &'static str },

    #[error("shape error at node `{node}`: {reason}")]
    Shape { node: String, reason: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },

    #[error("execution error: {0}")]
    Exec(String),

    #[error("signature mismatch: {0}")]
    Signature(String),

    #[error("pass `{pass}` failed at node `{node}`: {reason}")]
    Pass {
        pass: &'static str,
        node: String,
        reason: String,
    },

    #[error("compression error: {0}")]
    Compression(String),

    #[error("unknown demo `{0}`")]
    UnknownDemo(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn pass(pass: &'static str, node: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Pass {
            pass,
            node: node.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
