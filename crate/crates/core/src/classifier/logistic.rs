//! Multinomial logistic regression trained on soft labels by full-batch
//! gradient descent.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{FeatureSpec, FeatureVector};
use crate::error::{Error, Result};
use crate::label_model::{argmax, write_text};
use crate::label_space::LabelSpace;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// L2 penalty on the weights (bias is unpenalized).
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Recorded for provenance; training is deterministic regardless.
    pub seed: u64,
    /// Early stop when the gradient's max-norm falls below this.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2: 1e-3,
            learning_rate: 0.5,
            epochs: 500,
            seed: 0,
            tolerance: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidConfig(format!("l2 must be ≥ 0, got {}", self.l2)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidConfig("tolerance must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub version: u32,
    pub feature_spec: FeatureSpec,
    pub label_space: LabelSpace,
    /// K rows of length D.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Gradient {
    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl ClassifierModel {
    pub fn zeros(feature_spec: FeatureSpec, label_space: LabelSpace) -> Self {
        let (k, d) = (label_space.len(), feature_spec.dim());
        ClassifierModel {
            version: MODEL_VERSION,
            feature_spec,
            label_space,
            weights: vec![vec![0.0; d]; k],
            bias: vec![0.0; k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.feature_spec.dim()
    }

    fn check_dim(&self, feature: &FeatureVector) -> Result<()> {
        if feature.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: feature.dim(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, feature: &FeatureVector) -> Result<Vec<f64>> {
        self.check_dim(feature)?;
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| feature.dot(row) + b)
            .collect())
    }

    /// Noise-aware objective: expected cross-entropy under the target
    /// distributions plus `(l2 / 2)‖W‖²`, and its gradient.
    pub fn objective(&self, features: &[FeatureVector], targets: &[Vec<f64>], l2: f64) -> Result<(f64, Gradient)> {
        if features.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                found: targets.len(),
            });
        }
        let k = self.num_classes();
        let mut grad = Gradient {
            weights: vec![vec![0.0; self.dim()]; k],
            bias: vec![0.0; k],
        };
        let m = features.len().max(1) as f64;
        let mut loss = 0.0;
        for (x, p) in features.iter().zip(targets) {
            if p.len() != k {
                return Err(Error::DimensionMismatch { expected: k, found: p.len() });
            }
            let logits = self.logits(x)?;
            let log_q = log_softmax(&logits);
            loss -= p.iter().zip(&log_q).map(|(pk, lq)| if *pk == 0.0 { 0.0 } else { pk * lq }).sum::<f64>();
            for c in 0..k {
                let g = (log_q[c].exp() - p[c]) / m;
                grad.bias[c] += g;
                let row = &mut grad.weights[c];
                x.for_each(|idx, v| row[idx] += g * v);
            }
        }
        loss /= m;
        if l2 > 0.0 {
            let mut norm = 0.0;
            for (w_row, g_row) in self.weights.iter().zip(grad.weights.iter_mut()) {
                for (w, g) in w_row.iter().zip(g_row.iter_mut()) {
                    norm += w * w;
                    *g += l2 * w;
                }
            }
            loss += 0.5 * l2 * norm;
        }
        Ok((loss, grad))
    }

    fn step(&mut self, grad: &Gradient, learning_rate: f64) {
        for (w_row, g_row) in self.weights.iter_mut().zip(&grad.weights) {
            for (w, g) in w_row.iter_mut().zip(g_row) {
                *w -= learning_rate * g;
            }
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= learning_rate * g;
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json_string()?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ClassifierModel = serde_json::from_str(&text)?;
        if model.version != MODEL_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported model version {}", model.version)));
        }
        let d = model.dim();
        if model.weights.len() != model.label_space.len()
            || model.bias.len() != model.label_space.len()
            || model.weights.iter().any(|row| row.len() != d)
        {
            return Err(Error::InvalidConfig("model shape does not match its feature spec".into()));
        }
        Ok(model)
    }
}

/// Class probabilities `softmax(Wx + b)`.
pub fn predict(model: &ClassifierModel, feature: &FeatureVector) -> Result<Vec<f64>> {
    Ok(softmax(&model.logits(feature)?))
}

pub fn predict_label(model: &ClassifierModel, feature: &FeatureVector) -> Result<usize> {
    Ok(argmax(&predict(model, feature)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ClassifierModel,
    /// Objective value at the start of every epoch, plus the final value.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
}

/// Full-batch gradient descent from zero weights. A non-finite or
/// increasing loss aborts training: with a fixed step that means the
/// learning rate is too large for the data.
pub fn train(
    features: &[FeatureVector],
    targets: &[Vec<f64>],
    feature_spec: &FeatureSpec,
    label_space: &LabelSpace,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let model = ClassifierModel::zeros(feature_spec.clone(), label_space.clone());
    train_from(model, features, targets, config)
}

/// Gradient descent starting from an existing model.
pub fn train_from(
    mut model: ClassifierModel,
    features: &[FeatureVector],
    targets: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: targets.len(),
        });
    }
    for p in targets {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig("targets must be probability vectors".into()));
        }
    }
    let mut trace = Vec::new();
    let mut converged = false;
    for epoch in 0..=config.epochs {
        let (loss, grad) = model.objective(features, targets, config.l2)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("non-finite loss {loss} (learning rate too high?)"),
            });
        }
        if let Some(&prev) = trace.last() {
            if loss > prev + 1e-12 * f64::max(1.0, f64::abs(prev)) {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("loss increased from {prev} to {loss} (learning rate too high?)"),
                });
            }
        }
        trace.push(loss);
        if grad.max_abs() < config.tolerance {
            converged = true;
            break;
        }
        if epoch < config.epochs {
            model.step(&grad, config.learning_rate);
        }
    }
    Ok(TrainedModel {
        model,
        loss_trace: trace,
        converged,
    })
}
