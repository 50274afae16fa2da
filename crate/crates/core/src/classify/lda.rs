use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::{AttentionLabel, ClassifyError, FeatureVector, FEATURE_NAMES, N_FEATURES};

type Vec5 = SVector<f64, N_FEATURES>;
type Mat5 = SMatrix<f64, N_FEATURES, N_FEATURES>;

/// Eigenvalue ratio below which the covariance counts as singular.
const CONDITION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    /// Weight λ of the scaled identity in `(1 - λ) S + λ ν I`, where ν is
    /// the mean eigenvalue of the pooled covariance `S`.
    pub shrinkage: f64,
    pub min_rows_per_class: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            shrinkage: 0.1,
            min_rows_per_class: 6,
        }
    }
}

/// Two-class linear discriminant. A non-negative score means External.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub feature_names: Vec<String>,
    /// In [`FEATURE_NAMES`] order; positive weights push towards External.
    pub weights: [f64; N_FEATURES],
    pub bias: f64,
    pub prior_internal: f64,
    pub prior_external: f64,
    pub shrinkage: f64,
    pub mean_internal: [f64; N_FEATURES],
    pub mean_external: [f64; N_FEATURES],
}

impl LdaModel {
    pub fn score(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn label_for(score: f64) -> AttentionLabel {
        if score >= 0.0 {
            AttentionLabel::External
        } else {
            AttentionLabel::Internal
        }
    }
}

pub fn train_lda(rows: &[FeatureVector], config: &LdaConfig) -> Result<LdaModel, ClassifyError> {
    if !(0.0..=1.0).contains(&config.shrinkage) {
        return Err(ClassifyError::Invalid(format!(
            "shrinkage must lie in [0, 1], got {}",
            config.shrinkage
        )));
    }
    let mut class: [Vec<Vec5>; 2] = [Vec::new(), Vec::new()];
    for r in rows {
        let Some(label) = r.label else {
            return Err(ClassifyError::Invalid(format!(
                "participant {} epoch {} has no label",
                r.participant_id, r.epoch_index
            )));
        };
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(ClassifyError::Invalid(format!(
                "participant {} epoch {} has non-finite features",
                r.participant_id, r.epoch_index
            )));
        }
        class[(label == AttentionLabel::External) as usize].push(Vec5::from(r.features));
    }
    let [internal, external] = &class;
    let min = config.min_rows_per_class.max(1);
    if internal.len() < min || external.len() < min {
        return Err(ClassifyError::InsufficientData(format!(
            "need at least {min} rows of each class, got {} internal and {} external",
            internal.len(),
            external.len()
        )));
    }
    let n = (internal.len() + external.len()) as f64;
    if n <= 2.0 {
        return Err(ClassifyError::InsufficientData("pooled covariance needs more than two rows".into()));
    }
    let mean = |xs: &[Vec5]| xs.iter().sum::<Vec5>() / xs.len() as f64;
    let (mu_i, mu_e) = (mean(internal), mean(external));
    let mut scatter = Mat5::zeros();
    for (xs, mu) in [(internal, &mu_i), (external, &mu_e)] {
        for x in xs {
            let d = x - mu;
            scatter += d * d.transpose();
        }
    }
    let pooled = scatter / (n - 2.0);
    let nu = pooled.trace() / N_FEATURES as f64;
    let lambda = config.shrinkage;
    let sigma = pooled * (1.0 - lambda) + Mat5::identity() * (lambda * nu);

    let eig = sigma.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= CONDITION_FLOOR * hi {
        return Err(ClassifyError::Numerical(format!(
            "covariance is singular (eigenvalues {lo:.3e}..{hi:.3e}); use a positive shrinkage"
        )));
    }
    let chol = sigma
        .cholesky()
        .ok_or_else(|| ClassifyError::Numerical("covariance is not positive definite; use a positive shrinkage".into()))?;
    let w = chol.solve(&(mu_e - mu_i));
    let prior_internal = internal.len() as f64 / n;
    let prior_external = external.len() as f64 / n;
    let bias = -w.dot(&((mu_e + mu_i) / 2.0)) + (prior_external / prior_internal).ln();
    let arr = |v: &Vec5| -> [f64; N_FEATURES] { (*v).into() };
    Ok(LdaModel {
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        weights: arr(&w),
        bias,
        prior_internal,
        prior_external,
        shrinkage: lambda,
        mean_internal: arr(&mu_i),
        mean_external: arr(&mu_e),
    })
}

/// Label and score `w·x + b`; ties go to External.
pub fn predict(model: &LdaModel, x: &[f64]) -> Result<(AttentionLabel, f64), ClassifyError> {
    let x: &[f64; N_FEATURES] = x.try_into().map_err(|_| {
        ClassifyError::Invalid(format!("expected {N_FEATURES} features, got {}", x.len()))
    })?;
    let s = model.score(x);
    Ok((LdaModel::label_for(s), s))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    /// External predicted External.
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// F1 of the External class; 0 when it is never predicted nor present.
    pub fn f1_external(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub f1_external: f64,
    pub confusion: Confusion,
    /// Model weights by feature name, for sign inspection.
    pub weights: Vec<(String, f64)>,
    pub bias: f64,
}

pub fn evaluate(model: &LdaModel, rows: &[FeatureVector]) -> Result<Metrics, ClassifyError> {
    if rows.is_empty() {
        return Err(ClassifyError::InsufficientData("test set is empty".into()));
    }
    let mut c = Confusion::default();
    for r in rows {
        let truth = r.label.ok_or_else(|| {
            ClassifyError::Invalid(format!("participant {} epoch {} has no label", r.participant_id, r.epoch_index))
        })?;
        let (pred, _) = predict(model, &r.features)?;
        match (pred, truth) {
            (AttentionLabel::External, AttentionLabel::External) => c.tp += 1,
            (AttentionLabel::External, AttentionLabel::Internal) => c.fp += 1,
            (AttentionLabel::Internal, AttentionLabel::External) => c.fn_ += 1,
            (AttentionLabel::Internal, AttentionLabel::Internal) => c.tn += 1,
        }
    }
    Ok(Metrics {
        n: rows.len(),
        accuracy: c.accuracy(),
        f1_external: c.f1_external(),
        confusion: c,
        weights: model
            .feature_names
            .iter()
            .cloned()
            .zip(model.weights)
            .collect(),
        bias: model.bias,
    })
}
