use thiserror::Error;

#[derive(Debug, Error)]
pub enum HisdError {
    #[error("schema error in tag `{tag}`: {reason}")]
    Schema { tag: String, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("annotation table: {0}")]
    Annotation(String),
    #[error("empty pool for tag `{tag}`, attribute `{attribute}`")]
    EmptyPool { tag: String, attribute: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid index: {0}")]
    Index(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: u64, detail: String },
    #[error("evaluation: {0}")]
    Eval(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Torch(#[from] tch::TchError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = HisdError> = std::result::Result<T, E>;
