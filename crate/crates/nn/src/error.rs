use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NnError {
    pub(crate) fn shape(layer: &str, detail: impl Into<String>) -> Self {
        NnError::Shape {
            layer: layer.to_string(),
            detail: detail.into(),
        }
    }

    /// Re-labels a shape error with the name of the layer that raised it.
    pub fn in_layer(self, name: &str) -> Self {
        match self {
            NnError::Shape { detail, .. } => NnError::Shape {
                layer: name.to_string(),
                detail,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, NnError>;
