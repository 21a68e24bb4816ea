//! One-vs-rest linear SVM over feature vectors, with Platt-calibrated class
//! probabilities. The calibrated maximum probability is the confidence the
//! router compares against its threshold.

pub mod platt;
pub mod smo;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureVector, DIM};
use crate::label::EmotionLabel;

pub const MODEL_SCHEMA: &str = "emoroute-svm/1";
const MIN_STD: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("training labels contain fewer than two classes")]
    DegenerateLabels,
    #[error("class '{0}' has no training samples")]
    MissingClass(EmotionLabel),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{features} feature vectors but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("model file: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-dimension standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions whose spread was clamped to the minimum.
    pub clamped: Vec<bool>,
}

impl Scaler {
    pub fn has_zero_variance(&self) -> bool {
        self.clamped.iter().any(|&c| c)
    }

    pub fn transform(&self, v: &FeatureVector) -> Vec<f64> {
        v.0.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn inverse_transform(&self, z: &[f64]) -> FeatureVector {
        FeatureVector(std::array::from_fn(|d| z[d] * self.std[d] + self.mean[d]))
    }
}

pub fn fit_scaler(x: &[FeatureVector]) -> Result<Scaler, ClassifierError> {
    if x.len() < 2 {
        return Err(ClassifierError::TooFewSamples {
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mut mean = vec![0.0; DIM];
    let mut std = vec![0.0; DIM];
    let mut clamped = vec![false; DIM];
    for d in 0..DIM {
        mean[d] = x.iter().map(|v| v.0[d]).sum::<f64>() / n;
        let s = (x.iter().map(|v| (v.0[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt();
        if s < MIN_STD {
            std[d] = MIN_STD;
            clamped[d] = true;
        } else {
            std[d] = s;
        }
    }
    if clamped.iter().any(|&c| c) {
        log::warn!(
            "{} zero-variance feature dimension(s) clamped",
            clamped.iter().filter(|&&c| c).count()
        );
    }
    Ok(Scaler { mean, std, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub c: f64,
    pub tol: f64,
    /// Iteration budget per head, in multiples of the training-set size.
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            c: 1.0,
            tol: 1e-3,
            max_passes: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub label: EmotionLabel,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub platt_a: f64,
    pub platt_b: f64,
    pub iterations: usize,
    pub kkt_gap: f64,
    pub converged: bool,
}

impl Head {
    pub fn margin(&self, scaled: &[f64]) -> f64 {
        smo::dot(&self.weights, scaled) + self.bias
    }

    pub fn probability(&self, margin: f64) -> f64 {
        platt::PlattParams {
            a: self.platt_a,
            b: self.platt_b,
        }
        .probability(margin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub schema: String,
    /// One head per class, in [`EmotionLabel::ALL`] order.
    pub heads: Vec<Head>,
    pub scaler: Scaler,
    pub params: TrainParams,
    pub n_train: usize,
}

/// Classifier output for one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlEvidence {
    pub label: EmotionLabel,
    pub confidence: f64,
    pub per_class_probs: [f64; 3],
    pub margins: [f64; 3],
}

impl MlEvidence {
    /// Normalizes per-head sigmoid outputs into a distribution and picks the
    /// argmax with the fixed class-order tie-break.
    pub fn from_head_outputs(margins: [f64; 3], sigmoids: [f64; 3]) -> Self {
        let total: f64 = sigmoids.iter().sum();
        let probs = if total > 0.0 && total.is_finite() {
            sigmoids.map(|s| s / total)
        } else {
            [1.0 / 3.0; 3]
        };
        let label = EmotionLabel::argmax(&probs);
        MlEvidence {
            label,
            confidence: probs[label.index()],
            per_class_probs: probs,
            margins,
        }
    }
}

/// Trains three one-vs-rest linear SVMs with SMO and calibrates each with a
/// Platt sigmoid fitted on its own training decision values.
pub fn train(x: &[FeatureVector], y: &[EmotionLabel], params: &TrainParams) -> Result<SvmModel, ClassifierError> {
    if x.len() != y.len() {
        return Err(ClassifierError::LengthMismatch {
            features: x.len(),
            labels: y.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(ClassifierError::NonFinite(format!("training vector {i}")));
    }
    if !(params.c.is_finite() && params.c > 0.0 && params.tol.is_finite() && params.tol > 0.0) {
        return Err(ClassifierError::NonFinite("training parameters".into()));
    }
    let present: Vec<EmotionLabel> = EmotionLabel::ALL.into_iter().filter(|l| y.contains(l)).collect();
    if present.len() < 2 {
        return Err(ClassifierError::DegenerateLabels);
    }
    if let Some(&missing) = EmotionLabel::ALL.iter().find(|l| !present.contains(l)) {
        return Err(ClassifierError::MissingClass(missing));
    }

    let scaler = fit_scaler(x)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| scaler.transform(&x[i])).collect();
    let ys: Vec<EmotionLabel> = order.iter().map(|&i| y[i]).collect();
    let max_iter = params.max_passes.max(1).saturating_mul(xs.len());

    let heads = EmotionLabel::ALL
        .iter()
        .map(|&label| {
            let targets: Vec<f64> = ys.iter().map(|&l| if l == label { 1.0 } else { -1.0 }).collect();
            let sol = smo::solve_linear(&xs, &targets, params.c, params.tol, max_iter);
            if !sol.converged {
                log::warn!(
                    "SMO for '{label}' hit the iteration cap with KKT gap {:.3e}",
                    sol.kkt_gap
                );
            }
            let decisions: Vec<f64> = xs.iter().map(|v| sol.decision(v)).collect();
            let positive: Vec<bool> = targets.iter().map(|&t| t > 0.0).collect();
            let p = platt::fit(&decisions, &positive);
            Head {
                label,
                weights: sol.weights,
                bias: sol.bias,
                // A positive slope would make a class less likely as its own
                // margin grows.
                platt_a: p.a.min(0.0),
                platt_b: p.b,
                iterations: sol.iterations,
                kkt_gap: sol.kkt_gap,
                converged: sol.converged,
            }
        })
        .collect();

    Ok(SvmModel {
        schema: MODEL_SCHEMA.to_string(),
        heads,
        scaler,
        params: *params,
        n_train: x.len(),
    })
}

impl SvmModel {
    pub fn predict(&self, v: &FeatureVector) -> Result<MlEvidence, ClassifierError> {
        if !v.is_finite() {
            return Err(ClassifierError::NonFinite("input feature vector".into()));
        }
        let z = self.scaler.transform(v);
        let margins: [f64; 3] = std::array::from_fn(|k| self.heads[k].margin(&z));
        let sigmoids: [f64; 3] = std::array::from_fn(|k| self.heads[k].probability(margins[k]));
        Ok(MlEvidence::from_head_outputs(margins, sigmoids))
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.schema != MODEL_SCHEMA {
            return Err(ClassifierError::Schema(format!("unsupported schema '{}'", self.schema)));
        }
        if self.heads.len() != 3 || self.heads.iter().zip(EmotionLabel::ALL).any(|(h, l)| h.label != l) {
            return Err(ClassifierError::Schema(
                "expected heads for angry, calm, panic in that order".into(),
            ));
        }
        if self.heads.iter().any(|h| h.weights.len() != DIM)
            || self.scaler.mean.len() != DIM
            || self.scaler.std.len() != DIM
        {
            return Err(ClassifierError::Schema(format!(
                "expected {DIM}-dimensional weights and scaler"
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        let m: SvmModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_with(first: f64) -> FeatureVector {
        let mut v = FeatureVector::zeros();
        v.0[0] = first;
        v
    }

    #[test]
    fn scaler_hand_arithmetic() {
        let s = fit_scaler(&[vec_with(0.0), vec_with(2.0)]).unwrap();
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.std[0], 1.0);
        assert!(!s.clamped[0]);
        assert!(s.clamped[1..].iter().all(|&c| c));
    }

    #[test]
    fn scaler_identical_vectors_are_clamped() {
        let s = fit_scaler(&[vec_with(5.0), vec_with(5.0)]).unwrap();
        assert!(s.has_zero_variance());
        assert!(s.std.iter().all(|&v| v == MIN_STD));
    }

    #[test]
    fn scaler_needs_two_samples() {
        assert!(matches!(
            fit_scaler(&[vec_with(1.0)]),
            Err(ClassifierError::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn one_class_is_degenerate() {
        let x = vec![vec_with(0.0), vec_with(1.0)];
        let y = vec![EmotionLabel::Calm; 2];
        assert!(matches!(
            train(&x, &y, &TrainParams::default()),
            Err(ClassifierError::DegenerateLabels)
        ));
        let y2 = vec![EmotionLabel::Calm, EmotionLabel::Angry];
        assert!(matches!(
            train(&x, &y2, &TrainParams::default()),
            Err(ClassifierError::MissingClass(EmotionLabel::Panic))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let x = vec![vec_with(f64::NAN), vec_with(1.0), vec_with(2.0)];
        let y = EmotionLabel::ALL.to_vec();
        assert!(matches!(
            train(&x, &y, &TrainParams::default()),
            Err(ClassifierError::NonFinite(_))
        ));
    }

    #[test]
    fn equal_probabilities_break_ties_in_class_order() {
        let e = MlEvidence::from_head_outputs([0.0; 3], [0.4, 0.4, 0.2]);
        assert_eq!(e.label, EmotionLabel::Angry);
        let e = MlEvidence::from_head_outputs([0.0; 3], [0.1, 0.3, 0.3]);
        assert_eq!(e.label, EmotionLabel::Calm);
        let e = MlEvidence::from_head_outputs([0.0; 3], [0.0, 0.0, 0.0]);
        assert_eq!(e.per_class_probs, [1.0 / 3.0; 3]);
        assert_eq!(e.label, EmotionLabel::Angry);
    }
}
