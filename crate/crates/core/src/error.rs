use thiserror::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no behavior signal: user {user_id} has an empty history")]
    NoBehaviorSignal { user_id: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backend failure for item {item_id}: {source}")]
    SummarizeBackend {
        item_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unparseable keyword reply: {reply:?}")]
    UnparseableReply { reply: String },

    #[error("no keywords extracted")]
    NoKeywords,

    #[error("keyword extraction failed for attribute {attribute:?}: {source}")]
    AttributeExtraction {
        attribute: String,
        #[source]
        source: Box<Error>,
    },

    #[error("mock backend has no rule for this prompt: {0}")]
    MockRule(String),

    #[error("context overflow: input exceeds the backend limit by {over} tokens")]
    ContextOverflow { over: usize },

    #[error("condition overflow: {len} tokens exceeds the limit of {limit}")]
    TokenOverflow { len: usize, limit: usize },

    #[error("degenerate embedding: zero norm")]
    DegenerateEmbedding,

    #[error("candidate at grid point {index} (w_p={w_p}, w_t={w_t}) failed: {source}")]
    GridPoint {
        index: usize,
        w_p: f64,
        w_t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("both condition weights are zero")]
    BothWeightsZero,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at step {step} (loss {loss}, grad norm {grad_norm})")]
    NonFiniteLoss { step: usize, loss: f64, grad_norm: f64 },

    #[error("training diverged at step {step}: loss {loss} stayed above 10x initial {initial}")]
    Divergence { step: usize, loss: f64, initial: f64 },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("operation not supported by this backend: {0}")]
    Unsupported(String),

    #[error("http backend error (status {status:?}): {detail}")]
    Http { status: Option<u16>, detail: String },

    #[error("malformed tensor file: {0}")]
    TensorFormat(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Whether a retry can reasonably succeed (transient backend faults).
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Error::SummarizeBackend { .. } | Error::Http { .. } | Error::Io(_)
        )
    }
}
