use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("value {value} is not a codeword of the {bits}-bit quantizer with step {step}")]
    NotACodeword { value: f64, bits: u32, step: f64 },

    #[error("quadrature failed on [{low}, {up}): {reason}")]
    Quadrature { low: f64, up: f64, reason: String },

    #[error("LMMSE factorization failed at subcarrier {subcarrier}")]
    Factorization { subcarrier: usize },

    #[error("non-finite {message} at layer {layer}")]
    NonFinite { layer: usize, message: &'static str },

    #[error("training diverged: layer {layer}, epoch {epoch}, batch {batch}, loss {loss}")]
    TrainingDiverged {
        layer: usize,
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::Dimension {
                what,
                expected,
                got,
            })
        }
    }
}
