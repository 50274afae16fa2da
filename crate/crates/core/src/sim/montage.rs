use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::ChannelSet;

/// 64-channel actiCAP-style layout in amplifier order.
const RNET64: [&str; 64] = [
    "Fp1", "Fz", "F3", "F7", "F9", "FC5", "FC1", "C3", "T7", "CP5", "CP1", "Pz", "P3", "P7", "P9", "O1",
    "Oz", "O2", "P10", "P8", "P4", "CP2", "CP6", "T8", "C4", "Cz", "FC2", "FC6", "F10", "F8", "F4", "Fp2",
    "AF7", "AF3", "AFz", "F1", "F5", "FT7", "FC3", "C1", "C5", "TP7", "CP3", "P1", "P5", "PO7", "PO3",
    "Iz", "POz", "PO4", "PO8", "P6", "P2", "CPz", "CP4", "TP8", "C6", "C2", "FC4", "FT8", "F6", "F2",
    "AF4", "AF8",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Montage {
    /// The full 64-electrode cap.
    #[default]
    Rnet64,
    /// Only the frontal and posterior electrodes the adaptation loop reads.
    Adaptive18,
}

impl Montage {
    pub fn labels(self) -> Vec<String> {
        match self {
            Montage::Rnet64 => RNET64.iter().map(|s| s.to_string()).collect(),
            Montage::Adaptive18 => ChannelSet::theta_frontal().union(&ChannelSet::alpha_posterior()).labels,
        }
    }

    /// The montage whose channel order is exactly `labels`.
    pub fn from_labels(labels: &[String]) -> Option<Self> {
        [Montage::Rnet64, Montage::Adaptive18]
            .into_iter()
            .find(|m| m.labels() == labels)
    }

    pub fn n_channels(self) -> usize {
        match self {
            Montage::Rnet64 => 64,
            Montage::Adaptive18 => 18,
        }
    }
}

impl fmt::Display for Montage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Montage::Rnet64 => "rnet64",
            Montage::Adaptive18 => "adaptive18",
        })
    }
}

impl FromStr for Montage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rnet64" => Ok(Montage::Rnet64),
            "adaptive18" => Ok(Montage::Adaptive18),
            other => Err(format!("unknown montage {other:?} (expected rnet64 or adaptive18)")),
        }
    }
}
