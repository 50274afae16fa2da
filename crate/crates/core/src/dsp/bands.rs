use serde::{Deserialize, Serialize};

use super::welch::{integrate_band, PsdEstimate};
use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandName {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRange {
    pub name: BandName,
    pub low: f64,
    pub high: f64,
}

impl BandRange {
    pub fn new(name: BandName, low: f64, high: f64) -> Result<Self, DspError> {
        if !(low > 0.0 && low < high && high.is_finite()) {
            return Err(DspError::InvalidParameter(format!(
                "{name:?} band [{low}, {high}] Hz must satisfy 0 < low < high"
            )));
        }
        Ok(Self { name, low, high })
    }

    pub fn delta() -> Self {
        Self { name: BandName::Delta, low: 0.5, high: 4.0 }
    }

    pub fn beta() -> Self {
        Self { name: BandName::Beta, low: 13.0, high: 30.0 }
    }

    pub fn gamma() -> Self {
        Self { name: BandName::Gamma, low: 30.0, high: 45.0 }
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelRole {
    AlphaPosterior,
    ThetaFrontal,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub role: ChannelRole,
    pub labels: Vec<String>,
}

const POSTERIOR: [&str; 7] = ["P3", "Pz", "PO3", "POz", "PO4", "O1", "O2"];
const FRONTAL: [&str; 11] = [
    "Fp1", "Fp2", "AF3", "AF4", "F1", "F2", "F3", "Fz", "F4", "FC1", "FC2",
];

impl ChannelSet {
    /// Parieto-occipital electrodes used for alpha.
    pub fn alpha_posterior() -> Self {
        Self {
            role: ChannelRole::AlphaPosterior,
            labels: POSTERIOR.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Frontal electrodes used for theta (and beta).
    pub fn theta_frontal() -> Self {
        Self {
            role: ChannelRole::ThetaFrontal,
            labels: FRONTAL.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn custom<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        Self {
            role: ChannelRole::Custom,
            labels: labels.into_iter().map(Into::into).collect(),
        }
    }

    /// Labels of both sets, first occurrence order, without duplicates.
    pub fn union(&self, other: &ChannelSet) -> ChannelSet {
        let mut labels = self.labels.clone();
        for l in &other.labels {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
        ChannelSet { role: ChannelRole::Custom, labels }
    }

    pub fn missing_from(&self, available: &[String]) -> Vec<String> {
        self.labels
            .iter()
            .filter(|l| !available.contains(l))
            .cloned()
            .collect()
    }
}

/// Mean over `channels` of each channel's trapezoidal band integral, in µV².
pub fn band_power(psd: &PsdEstimate, band: &BandRange, channels: &ChannelSet) -> Result<f64, DspError> {
    if channels.labels.is_empty() {
        return Err(DspError::Config("empty channel set".into()));
    }
    let missing = channels.missing_from(&psd.channel_labels);
    if !missing.is_empty() {
        return Err(DspError::MissingChannels(missing));
    }
    if band.low < psd.freqs[0] || band.high > psd.nyquist() {
        return Err(DspError::InvalidParameter(format!(
            "band [{}, {}] Hz falls outside the PSD grid [0, {}] Hz",
            band.low,
            band.high,
            psd.nyquist()
        )));
    }
    let total: f64 = channels
        .labels
        .iter()
        .map(|l| integrate_band(&psd.freqs, psd.channel(l).unwrap(), band.low, band.high))
        .sum();
    Ok(total / channels.labels.len() as f64)
}
