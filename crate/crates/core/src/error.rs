use thiserror::Error;

/// Error type shared across the crate.
///
/// Variants are grouped by who caused the problem: shape/parameter/data
/// variants point at bad inputs, `Training`/`Contract`/`Build` indicate a
/// broken internal assumption.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("empty output in {op}: {detail}")]
    EmptyOutput { op: &'static str, detail: String },

    #[error("invalid parameter for {op}: {detail}")]
    Parameter { op: &'static str, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("empty subject group: {0}")]
    EmptySet(String),

    #[error("model build error in {layer}: {detail}")]
    Build { layer: String, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error was caused by user-provided input (files, flags,
    /// shapes) rather than an internal defect. The CLI maps these to exit 2.
    pub fn is_usage(&self) -> bool {
        !matches!(
            self,
            Error::Training(_) | Error::Contract(_) | Error::Build { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
