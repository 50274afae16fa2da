//! Offline internal/external attention classification from five-band EEG
//! features.
//!
//! Each 20 s epoch yields delta, theta, alpha, beta and gamma power, each
//! divided by the participant's resting-state mean for that band. A
//! two-class linear discriminant with a shrunk pooled covariance separates
//! the states; participants never straddle the train/validation/test split.

mod lda;
mod split;
mod synthetic;

pub use lda::{evaluate, predict, train_lda, Confusion, LdaConfig, LdaModel, Metrics};
pub use split::{split_participants, SplitPlan, DEFAULT_RATIOS};
pub use synthetic::{synthetic_participants, SyntheticCohort};

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{band_power, welch_psd, BandRange, ChannelSet, DspError, EegChunk, WelchConfig};
use crate::iaf::IndividualBands;

/// Feature order used in vectors, weights and files.
pub const FEATURE_NAMES: [&str; 5] = ["delta", "theta", "alpha", "beta", "gamma"];
pub const N_FEATURES: usize = 5;
/// Expected epoch length, seconds.
pub const EPOCH_SECONDS: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no resting baseline for participant {0:?}")]
    MissingBaseline(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionLabel {
    Internal,
    External,
}

impl fmt::Display for AttentionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionLabel::Internal => "internal",
            AttentionLabel::External => "external",
        })
    }
}

impl FromStr for AttentionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "internal" => Ok(AttentionLabel::Internal),
            "external" => Ok(AttentionLabel::External),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Absolute band powers of one epoch, µV², in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPowers(pub [f64; N_FEATURES]);

impl BandPowers {
    /// Per-band mean over epochs.
    pub fn mean(epochs: &[BandPowers]) -> Option<BandPowers> {
        if epochs.is_empty() {
            return None;
        }
        let mut m = [0.0; N_FEATURES];
        for e in epochs {
            for (acc, v) in m.iter_mut().zip(e.0) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= epochs.len() as f64);
        Some(BandPowers(m))
    }
}

/// The bands that do not depend on the individual alpha frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedBands {
    pub delta: BandRange,
    pub beta: BandRange,
    pub gamma: BandRange,
}

impl Default for FixedBands {
    fn default() -> Self {
        Self {
            delta: BandRange::delta(),
            beta: BandRange::beta(),
            gamma: BandRange::gamma(),
        }
    }
}

/// Which electrodes each band is averaged over.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureChannels {
    pub delta: ChannelSet,
    pub theta: ChannelSet,
    pub alpha: ChannelSet,
    pub beta: ChannelSet,
    pub gamma: ChannelSet,
}

impl Default for FeatureChannels {
    /// Alpha posterior; theta and beta frontal; delta and gamma over both.
    fn default() -> Self {
        let frontal = ChannelSet::theta_frontal();
        let posterior = ChannelSet::alpha_posterior();
        let union = frontal.union(&posterior);
        Self {
            delta: union.clone(),
            theta: frontal.clone(),
            alpha: posterior,
            beta: frontal,
            gamma: union,
        }
    }
}

/// Five absolute band powers of a 20 s epoch.
pub fn extract_features(
    epoch: &EegChunk,
    bands: &IndividualBands,
    fixed: &FixedBands,
    channels: &FeatureChannels,
) -> Result<BandPowers, ClassifyError> {
    let half_sample = 0.5 / epoch.sample_rate();
    if (epoch.duration() - EPOCH_SECONDS).abs() > half_sample {
        return Err(ClassifyError::Invalid(format!(
            "epochs must be {EPOCH_SECONDS} s, got {} s",
            epoch.duration()
        )));
    }
    let psd = welch_psd(epoch, &WelchConfig::default())?;
    Ok(BandPowers([
        band_power(&psd, &fixed.delta, &channels.delta)?,
        band_power(&psd, &bands.theta, &channels.theta)?,
        band_power(&psd, &bands.alpha, &channels.alpha)?,
        band_power(&psd, &fixed.beta, &channels.beta)?,
        band_power(&psd, &fixed.gamma, &channels.gamma)?,
    ]))
}

/// One labelled, resting-normalised epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub participant_id: String,
    pub epoch_index: u32,
    pub label: Option<AttentionLabel>,
    pub features: [f64; N_FEATURES],
}

impl FeatureVector {
    pub fn new(
        participant_id: impl Into<String>,
        epoch_index: u32,
        label: Option<AttentionLabel>,
        features: [f64; N_FEATURES],
    ) -> Result<Self, ClassifyError> {
        let participant_id = participant_id.into();
        if let Some(i) = features.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ClassifyError::Invalid(format!(
                "participant {participant_id} epoch {epoch_index}: {} = {} is not a positive finite ratio",
                FEATURE_NAMES[i], features[i]
            )));
        }
        Ok(Self {
            participant_id,
            epoch_index,
            label,
            features,
        })
    }
}

/// Divides each band by the participant's resting mean for that band.
pub fn normalize_to_rest(
    participant_id: &str,
    epoch_index: u32,
    label: Option<AttentionLabel>,
    raw: &BandPowers,
    resting_means: &HashMap<String, BandPowers>,
) -> Result<FeatureVector, ClassifyError> {
    let base = resting_means
        .get(participant_id)
        .ok_or_else(|| ClassifyError::MissingBaseline(participant_id.to_string()))?;
    if let Some(i) = base.0.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(ClassifyError::Invalid(format!(
            "participant {participant_id}: resting {} mean {} must be positive",
            FEATURE_NAMES[i], base.0[i]
        )));
    }
    let mut f = [0.0; N_FEATURES];
    for (k, v) in f.iter_mut().enumerate() {
        *v = raw.0[k] / base.0[k];
    }
    FeatureVector::new(participant_id, epoch_index, label, f)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    participant_id: String,
    epoch_index: u32,
    label: Option<AttentionLabel>,
    delta: f64,
    theta: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

/// Reads the feature CSV (`participant_id,epoch_index,label,delta,...,gamma`).
pub fn read_features<R: Read>(reader: R) -> Result<Vec<FeatureVector>, ClassifyError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| ClassifyError::Io(e.to_string()))?.clone();
    let expected = ["participant_id", "epoch_index", "label"].iter().chain(FEATURE_NAMES.iter());
    if !headers.iter().eq(expected.copied()) {
        return Err(ClassifyError::Invalid(format!(
            "feature header must be participant_id,epoch_index,label,{}; got {}",
            FEATURE_NAMES.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize::<CsvRow>()
        .enumerate()
        .map(|(i, r)| {
            let r = r.map_err(|e| ClassifyError::Invalid(format!("row {}: {e}", i + 2)))?;
            FeatureVector::new(
                r.participant_id,
                r.epoch_index,
                r.label,
                [r.delta, r.theta, r.alpha, r.beta, r.gamma],
            )
        })
        .collect()
}

pub fn write_features<W: Write>(writer: W, rows: &[FeatureVector]) -> Result<(), ClassifyError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| ClassifyError::Io(e.to_string());
    for r in rows {
        let [delta, theta, alpha, beta, gamma] = r.features;
        w.serialize(CsvRow {
            participant_id: r.participant_id.clone(),
            epoch_index: r.epoch_index,
            label: r.label,
            delta,
            theta,
            alpha,
            beta,
            gamma,
        })
        .map_err(io)?;
    }
    w.flush().map_err(|e| ClassifyError::Io(e.to_string()))
}

/// Result of [`train_and_evaluate`]; serialised as the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub split: SplitPlan,
    pub model: LdaModel,
    pub validation: Metrics,
    pub test: Metrics,
}

/// Participant-wise split, training on the train set and scoring the
/// validation and test sets.
pub fn train_and_evaluate(rows: &[FeatureVector], seed: u64, config: &LdaConfig) -> Result<TrainReport, ClassifyError> {
    let mut ids: Vec<String> = rows.iter().map(|r| r.participant_id.clone()).collect();
    ids.sort();
    ids.dedup();
    let split = split_participants(&ids, DEFAULT_RATIOS, seed)?;
    let subset = |set: &[String]| -> Vec<FeatureVector> {
        rows.iter().filter(|r| set.contains(&r.participant_id)).cloned().collect()
    };
    let model = train_lda(&subset(&split.train_ids), config)?;
    let validation = evaluate(&model, &subset(&split.val_ids))?;
    let test = evaluate(&model, &subset(&split.test_ids))?;
    Ok(TrainReport {
        seed,
        split,
        model,
        validation,
        test,
    })
}
