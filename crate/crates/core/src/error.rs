use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("axis {axis} out of range for tensor of rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("loss must be a scalar, got shape [{rows}x{cols}]")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("computation graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("empty signal")]
    EmptySignal,

    #[error("mask ratio {ratio} leaves no kept token out of {n_tokens}")]
    NoKeptTokens { ratio: f64, n_tokens: usize },

    #[error("invalid mask ratio {0}: expected 0 <= ratio < 1")]
    InvalidMaskRatio(f64),

    #[error("{channels} channels exceed the {slots} configured channel slots")]
    TooManyChannels { channels: usize, slots: usize },

    #[error("training diverged: loss is {loss} at epoch {epoch}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("channel `{channel}`: band {band_hz} Hz reaches the Nyquist limit {nyquist_hz} Hz")]
    BandAboveNyquist {
        channel: String,
        band_hz: f64,
        nyquist_hz: f64,
    },

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("empty channel subset")]
    EmptySubset,

    #[error("model has no second encoder")]
    NoSecondEncoder,

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("class count mismatch: head has {head}, data has {data}")]
    ClassCountMismatch { head: usize, data: usize },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("split `{split}`: {what}")]
    SizeMismatch { split: String, what: String },

    #[error("malformed tensor blob {path}: {reason}")]
    Blob { path: PathBuf, reason: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing artifact {0}")]
    Missing(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
