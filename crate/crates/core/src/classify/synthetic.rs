use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{normalize_to_rest, AttentionLabel, BandPowers, ClassifyError, FeatureVector, N_FEATURES};

/// Parameters of a synthetic cohort of band-power epochs.
///
/// Raw power in band k is `g[p][k] · base[k] · exp(effect + ε)` with a
/// per-participant gain `g`, a state effect of `±separation·σ/2` along
/// `direction`, and ε ~ N(0, σ²). Resting epochs have no state effect, so
/// normalisation to rest cancels the participant gain.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub participants: usize,
    pub epochs_per_class: usize,
    pub resting_epochs: usize,
    /// Distance between class means in units of the log-power noise σ.
    pub separation: f64,
    pub noise_sigma: f64,
    /// Log-scale spread of per-participant band gains.
    pub participant_spread: f64,
    /// Direction of the External-minus-Internal shift; normalised on use.
    pub direction: [f64; N_FEATURES],
    pub seed: u64,
}

impl Default for SyntheticCohort {
    fn default() -> Self {
        Self {
            participants: 22,
            epochs_per_class: 18,
            resting_epochs: 18,
            separation: 5.0,
            noise_sigma: 0.1,
            participant_spread: 0.5,
            direction: [0.6, -0.8, 1.0, 0.3, 0.2],
            seed: 0,
        }
    }
}

/// Labelled, resting-normalised epochs for every participant of `cohort`.
pub fn synthetic_participants(cohort: &SyntheticCohort) -> Result<Vec<FeatureVector>, ClassifyError> {
    let norm = cohort.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !(cohort.noise_sigma > 0.0) || cohort.resting_epochs == 0 {
        return Err(ClassifyError::Invalid(
            "cohort needs a non-zero direction, positive noise and resting epochs".into(),
        ));
    }
    let unit = cohort.direction.map(|v| v / norm);
    let half_shift = cohort.separation * cohort.noise_sigma / 2.0;
    let base = [8.0, 4.0, 6.0, 2.0, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(cohort.seed);
    let noise = Normal::new(0.0, cohort.noise_sigma).expect("positive sigma");
    let spread = Normal::new(0.0, cohort.participant_spread.max(0.0)).expect("finite spread");
    let mut out = Vec::new();
    for p in 0..cohort.participants {
        let id = format!("p{p:03}");
        let gain: [f64; N_FEATURES] = std::array::from_fn(|_| spread.sample(&mut rng).exp());
        let draw = |shift: f64, rng: &mut ChaCha8Rng| {
            BandPowers(std::array::from_fn(|k| {
                gain[k] * base[k] * (shift * unit[k] + noise.sample(rng)).exp()
            }))
        };
        let rest: Vec<BandPowers> = (0..cohort.resting_epochs).map(|_| draw(0.0, &mut rng)).collect();
        let baselines = HashMap::from([(id.clone(), BandPowers::mean(&rest).expect("non-empty"))]);
        let mut epochs: Vec<(AttentionLabel, BandPowers)> = Vec::new();
        for _ in 0..cohort.epochs_per_class {
            epochs.push((AttentionLabel::Internal, draw(-half_shift, &mut rng)));
            epochs.push((AttentionLabel::External, draw(half_shift, &mut rng)));
        }
        // Interleave blocks in a participant-specific order.
        if rng.random_bool(0.5) {
            epochs.reverse();
        }
        for (i, (label, raw)) in epochs.iter().enumerate() {
            out.push(normalize_to_rest(&id, i as u32, Some(*label), raw, &baselines)?);
        }
    }
    Ok(out)
}
