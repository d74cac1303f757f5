use std::fmt;

/// Where in a sampling run a non-finite value showed up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverflowSite {
    pub block: Option<usize>,
    pub module: Option<usize>,
    pub iteration: Option<usize>,
}

impl fmt::Display for OverflowSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(b) = self.block {
            parts.push(format!("block {b}"));
        }
        if let Some(g) = self.module {
            parts.push(format!("module {g}"));
        }
        if let Some(k) = self.iteration {
            parts.push(format!("iteration {k}"));
        }
        if parts.is_empty() {
            write!(f, "forward pass")
        } else {
            write!(f, "{}", parts.join(", "))
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical overflow at {site}: max |entry| = {max_abs:e}")]
    Overflow { site: OverflowSite, max_abs: f64 },

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("unsupported model format {found:?} (expected \"gsjf-1\")")]
    VersionMismatch { found: String },

    #[error("model dimensions inconsistent: {0}")]
    ModelDimension(String),

    #[error("malformed strategy {input:?}: {reason}")]
    Strategy { input: String, reason: String },

    #[error("causality violation: d g[{row}]/d x[{col}] = {value:e} above noise floor {floor:e}")]
    Causality {
        row: usize,
        col: usize,
        value: f64,
        floor: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn overflow(max_abs: f64) -> Self {
        Error::Overflow {
            site: OverflowSite::default(),
            max_abs,
        }
    }

    /// Tags an overflow with the block it came from; other errors pass through.
    pub fn in_block(self, block: usize) -> Self {
        match self {
            Error::Overflow { mut site, max_abs } => {
                site.block = Some(block);
                Error::Overflow { site, max_abs }
            }
            other => other,
        }
    }

    pub(crate) fn at(self, module: Option<usize>, iteration: usize) -> Self {
        match self {
            Error::Overflow { mut site, max_abs } => {
                site.module = module;
                site.iteration = Some(iteration);
                Error::Overflow { site, max_abs }
            }
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
