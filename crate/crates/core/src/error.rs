use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {key}: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("unknown environment `{0}`")]
    UnknownEnv(String),

    #[error("non-finite value after update {update} in {network} layer {layer}")]
    NonFinite {
        update: u64,
        network: &'static str,
        layer: usize,
    },

    #[error("stale trace: {0}")]
    StaleTrace(&'static str),

    #[error("reachable set diverged at step {step} (width {width:e})")]
    Diverged { step: usize, width: f64 },

    #[error("unsupported reward form: {0}")]
    UnsupportedReward(String),

    #[error("checkpoint parse error at line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
