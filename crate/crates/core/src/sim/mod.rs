//! Deterministic synthetic EEG with scripted attention states, and replay of
//! recorded chunk files.

mod generator;
mod montage;
mod noise;
mod replay;
mod scenario;

pub use generator::{generate, Generator, StateName, StateProfile, SynthLayout, JITTER_HZ, STATE_AMPLITUDE_FACTOR};
pub use montage::Montage;
pub use noise::{power_law_noise, shaped_noise};
pub use replay::{load_replay, open_replay, write_chunk, ReplayReader};
pub use scenario::{
    run_scenario, spawn_scenario, LabeledChunk, ProfileOverrides, Scenario, ScenarioReceiver, ScenarioStream, Segment, CHUNK_SECONDS,
    MIN_QUEUE_CHUNKS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsp::{DspError, EegChunk};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("sequencing error: {0}")]
    Sequencing(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Width of the Gaussian alpha bump used by [`alpha_peak_recording`].
pub const ALPHA_BUMP_SIGMA_HZ: f64 = 0.8;
/// Bump peak over the pink floor at the bump centre: 10 dB.
pub const ALPHA_BUMP_SNR: f64 = 10.0;

/// Eyes-closed style recording with a known spectrum on every channel.
///
/// With `Some(center)` each channel is `10/f` pink noise plus a Gaussian
/// bump (σ = 0.8 Hz) peaking 10 dB above the floor at `center`; with `None`
/// the spectrum is flat (white noise, 1 µV²/Hz).
pub fn alpha_peak_recording(
    center: Option<f64>,
    duration: f64,
    sample_rate: f64,
    labels: &[String],
    seed: u64,
) -> EegChunk {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration * sample_rate).round() as usize;
    let rows = labels
        .iter()
        .map(|_| match center {
            Some(c) => {
                let peak = ALPHA_BUMP_SNR * 10.0 / c;
                shaped_noise(
                    n,
                    sample_rate,
                    |f| {
                        10.0 / f
                            + peak * (-(f - c).powi(2) / (2.0 * ALPHA_BUMP_SIGMA_HZ.powi(2))).exp()
                    },
                    &mut rng,
                )
            }
            None => shaped_noise(n, sample_rate, |_| 1.0, &mut rng),
        })
        .collect();
    EegChunk::new(0.0, sample_rate, labels.to_vec(), rows).expect("valid synthetic layout")
}
