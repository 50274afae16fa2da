use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::noise::power_law_noise;
use super::SimError;
use crate::dsp::{ChannelSet, EegChunk};

/// How far an oscillator's frequency may wander from its centre, in Hz.
pub const JITTER_HZ: f64 = 0.2;
/// Random-walk step size of the frequency jitter per √s, in Hz.
const JITTER_RATE_HZ: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateName {
    Neutral,
    Internal,
    External,
    #[serde(untagged)]
    Custom(String),
}

impl fmt::Display for StateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateName::Neutral => f.write_str("neutral"),
            StateName::Internal => f.write_str("internal"),
            StateName::External => f.write_str("external"),
            StateName::Custom(s) => f.write_str(s),
        }
    }
}

/// Oscillator amplitudes and background noise for one attention state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateProfile {
    pub name: StateName,
    /// Peak amplitude of the posterior alpha oscillator, µV.
    pub alpha_amplitude: f64,
    pub alpha_freq: f64,
    /// Peak amplitude of the frontal theta oscillator, µV.
    pub theta_amplitude: f64,
    pub theta_freq: f64,
    /// RMS of the broadband background, µV.
    pub noise_rms: f64,
    /// Spectral exponent β of the `1/f^β` background.
    pub noise_exponent: f64,
}

/// Amplitude factor of the internal state over neutral (external uses the
/// reciprocal direction, `2 - factor`).
pub const STATE_AMPLITUDE_FACTOR: f64 = 1.3;

impl StateProfile {
    pub fn neutral() -> Self {
        Self {
            name: StateName::Neutral,
            alpha_amplitude: 4.0,
            alpha_freq: 10.0,
            theta_amplitude: 3.0,
            theta_freq: 6.0,
            noise_rms: 2.0,
            noise_exponent: 1.0,
        }
    }

    /// Alpha and theta amplitudes 30% above neutral.
    pub fn internal() -> Self {
        Self::neutral().scaled(StateName::Internal, STATE_AMPLITUDE_FACTOR)
    }

    /// Alpha and theta amplitudes 30% below neutral.
    pub fn external() -> Self {
        Self::neutral().scaled(StateName::External, 2.0 - STATE_AMPLITUDE_FACTOR)
    }

    pub fn for_state(name: &StateName) -> Self {
        match name {
            StateName::Internal => Self::internal(),
            StateName::External => Self::external(),
            StateName::Neutral => Self::neutral(),
            StateName::Custom(s) => Self {
                name: StateName::Custom(s.clone()),
                ..Self::neutral()
            },
        }
    }

    fn scaled(self, name: StateName, factor: f64) -> Self {
        Self {
            name,
            alpha_amplitude: self.alpha_amplitude * factor,
            theta_amplitude: self.theta_amplitude * factor,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.alpha_amplitude >= 0.0
            && self.theta_amplitude >= 0.0
            && self.noise_rms > 0.0
            && self.noise_exponent.is_finite()
            && self.alpha_freq > JITTER_HZ
            && self.theta_freq > JITTER_HZ
            && self.alpha_amplitude.is_finite()
            && self.theta_amplitude.is_finite()
            && self.noise_rms.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!(
                "profile {} needs amplitudes >= 0, noise > 0 and oscillator frequencies above {JITTER_HZ} Hz",
                self.name
            )))
        }
    }
}

/// Channels and sampling for synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLayout {
    pub sample_rate: f64,
    pub channel_labels: Vec<String>,
    pub alpha_channels: ChannelSet,
    pub theta_channels: ChannelSet,
}

impl SynthLayout {
    pub fn new(sample_rate: f64, channel_labels: Vec<String>) -> Self {
        Self {
            sample_rate,
            channel_labels,
            alpha_channels: ChannelSet::alpha_posterior(),
            theta_channels: ChannelSet::theta_frontal(),
        }
    }
}

#[derive(Debug, Clone)]
struct Oscillator {
    center: f64,
    freq: f64,
    phase: f64,
}

impl Oscillator {
    fn new(center: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            center,
            freq: center,
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    /// Sample of a unit-amplitude sinusoid whose frequency random-walks
    /// within ±[`JITTER_HZ`] of the centre, reflecting at the edges.
    fn next(&mut self, fs: f64, step: f64, rng: &mut ChaCha8Rng) -> f64 {
        let out = self.phase.sin();
        let z: f64 = rng.sample(StandardNormal);
        let mut f = self.freq + z * step;
        let (lo, hi) = (self.center - JITTER_HZ, self.center + JITTER_HZ);
        if f > hi {
            f = 2.0 * hi - f;
        }
        if f < lo {
            f = 2.0 * lo - f;
        }
        self.freq = f.clamp(lo, hi);
        self.phase = (self.phase + std::f64::consts::TAU * self.freq / fs) % std::f64::consts::TAU;
        out
    }

    fn retune(&mut self, center: f64) {
        if center != self.center {
            self.freq += center - self.center;
            self.center = center;
        }
    }
}

/// Continuous multi-channel synthesis. Oscillator phase and frequency carry
/// across calls, so consecutive renders splice without discontinuities in
/// the rhythms.
#[derive(Debug, Clone)]
pub struct Generator {
    layout: SynthLayout,
    rng: ChaCha8Rng,
    alpha_mask: Vec<bool>,
    theta_mask: Vec<bool>,
    alpha: Vec<Oscillator>,
    theta: Vec<Oscillator>,
    time: f64,
}

impl Generator {
    pub fn new(layout: SynthLayout, seed: u64) -> Result<Self, SimError> {
        if !(layout.sample_rate > 0.0 && layout.sample_rate.is_finite()) {
            return Err(SimError::Config(format!("sample rate {} is not positive", layout.sample_rate)));
        }
        for set in [&layout.alpha_channels, &layout.theta_channels] {
            let missing = set.missing_from(&layout.channel_labels);
            if !missing.is_empty() {
                return Err(SimError::Config(format!("unknown channel labels {missing:?}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = |set: &ChannelSet| -> Vec<bool> {
            layout.channel_labels.iter().map(|l| set.labels.contains(l)).collect()
        };
        let alpha_mask = mask(&layout.alpha_channels);
        let theta_mask = mask(&layout.theta_channels);
        let neutral = StateProfile::neutral();
        let n = layout.channel_labels.len();
        let alpha = (0..n).map(|_| Oscillator::new(neutral.alpha_freq, &mut rng)).collect();
        let theta = (0..n).map(|_| Oscillator::new(neutral.theta_freq, &mut rng)).collect();
        Ok(Self {
            layout,
            rng,
            alpha_mask,
            theta_mask,
            alpha,
            theta,
            time: 0.0,
        })
    }

    pub fn layout(&self) -> &SynthLayout {
        &self.layout
    }

    /// Start time of the next rendered sample, in seconds.
    pub fn time(&self) -> f64 {
        self.time
    }

    /// Renders `duration` seconds of `profile` starting at [`Self::time`].
    pub fn render(&mut self, profile: &StateProfile, duration: f64) -> Result<EegChunk, SimError> {
        profile.validate()?;
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(SimError::Config(format!("duration {duration} s is invalid")));
        }
        let fs = self.layout.sample_rate;
        let n = (duration * fs).round() as usize;
        let step = JITTER_RATE_HZ / fs.sqrt();
        let mut rows = Vec::with_capacity(self.layout.channel_labels.len());
        for c in 0..self.layout.channel_labels.len() {
            let mut row = power_law_noise(n, fs, profile.noise_exponent, profile.noise_rms, &mut self.rng);
            if self.alpha_mask[c] {
                let osc = &mut self.alpha[c];
                osc.retune(profile.alpha_freq);
                for v in row.iter_mut() {
                    *v += profile.alpha_amplitude * osc.next(fs, step, &mut self.rng);
                }
            }
            if self.theta_mask[c] {
                let osc = &mut self.theta[c];
                osc.retune(profile.theta_freq);
                for v in row.iter_mut() {
                    *v += profile.theta_amplitude * osc.next(fs, step, &mut self.rng);
                }
            }
            rows.push(row);
        }
        let chunk = EegChunk::new(self.time, fs, self.layout.channel_labels.clone(), rows)?;
        self.time += n as f64 / fs;
        Ok(chunk)
    }
}

/// One-shot synthesis of `duration` seconds of `profile` from time 0.
pub fn generate(profile: &StateProfile, duration: f64, layout: &SynthLayout, seed: u64) -> Result<EegChunk, SimError> {
    if !(duration >= 1.0) {
        return Err(SimError::Config(format!("duration must be at least 1 s, got {duration}")));
    }
    Generator::new(layout.clone(), seed)?.render(profile, duration)
}
