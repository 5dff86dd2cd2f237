use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("channel count {0} is odd; coupling needs an even split")]
    OddChannels(usize),

    #[error("dims {h}x{w} not divisible by {factor}")]
    Indivisible { h: usize, w: usize, factor: usize },

    #[error("actnorm scale for channel {channel} is {value:e}, below 1e-8")]
    SingularScale { channel: usize, value: f64 },

    #[error("invertible conv matrix is singular (|det| = {det:e}){}", location(*.block, *.step))]
    SingularMatrix {
        det: f64,
        block: Option<usize>,
        step: Option<usize>,
    },

    #[error("image {h}x{w} is smaller than the {window}x{window} window")]
    TooSmall { h: usize, w: usize, window: usize },

    #[error("checkpoint format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn location(block: Option<usize>, step: Option<usize>) -> String {
    match (block, step) {
        (Some(b), Some(s)) => format!(" at block {b}, step {s}"),
        _ => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Attach a block/step location to a singular-matrix error.
    pub(crate) fn at_step(self, b: usize, s: usize) -> Self {
        match self {
            Error::SingularMatrix { det, .. } => Error::SingularMatrix {
                det,
                block: Some(b),
                step: Some(s),
            },
            other => other,
        }
    }
}
