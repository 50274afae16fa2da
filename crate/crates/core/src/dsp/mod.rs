//! Filtering and spectral estimation for multichannel EEG.

mod bands;
mod chunk;
mod filter;
mod welch;

pub use bands::{band_power, BandName, BandRange, ChannelRole, ChannelSet};
pub use chunk::{common_average_reference, EegChunk};
pub use filter::{apply_filter, design_filter, Biquad, FilterKind, FilterSpec, StreamingFilter};
pub use welch::{integrate_band, welch_psd, PsdEstimate, Taper, WelchConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sample rate mismatch: expected {expected} Hz, got {got} Hz")]
    RateMismatch { expected: f64, got: f64 },
    #[error("channels not present: {}", .0.join(", "))]
    MissingChannels(Vec<String>),
    #[error("insufficient data: need {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid operation: {0}")]
    InvalidOperation(String),
    #[error("invalid chunk: {0}")]
    InvalidChunk(String),
}
