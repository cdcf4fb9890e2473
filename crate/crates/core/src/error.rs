use thiserror::Error;

/// Errors raised by descriptor computation and the surrounding pipeline.
#[derive(Debug, Error)]
pub enum UtsError {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("dimension estimate diverges: fitted slope {slope} >= 1")]
    Divergence { slope: f64 },

    #[error("similarity matrix is ill-conditioned (points {i} and {j} coincide or nearly so)")]
    Conditioning { i: usize, j: usize },

    #[error("linear solve residual {residual:e} exceeds tolerance")]
    Residual { residual: f64 },

    #[error("unsupported capability: {0}")]
    Capability(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("grouping error: {0}")]
    Grouping(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("component `{component}` failed: {source}")]
    Component {
        component: String,
        #[source]
        source: Box<UtsError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl UtsError {
    /// Input, format and schema problems, as opposed to numerical failures.
    pub fn is_input_error(&self) -> bool {
        match self {
            UtsError::Parse { .. }
            | UtsError::Schema(_)
            | UtsError::Pairing(_)
            | UtsError::Grouping(_)
            | UtsError::Bounds(_)
            | UtsError::Precondition(_)
            | UtsError::Capability(_)
            | UtsError::Io(_)
            | UtsError::Json(_) => true,
            UtsError::Component { source, .. } => source.is_input_error(),
            _ => false,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        UtsError::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = UtsError> = std::result::Result<T, E>;
