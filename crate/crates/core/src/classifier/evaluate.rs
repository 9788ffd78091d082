//! Per-class evaluation against gold labels.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use super::logistic::{predict_label, ClassifierModel};
use crate::error::{Error, Result};

/// Classes with fewer gold examples are flagged in reports.
pub const DEFAULT_MIN_SUPPORT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub support: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub below_min_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub overall_accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    /// Rows are gold classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub min_support: usize,
}

pub fn evaluate(
    model: &ClassifierModel,
    features: &[FeatureVector],
    gold: &[usize],
    min_support: usize,
) -> Result<EvaluationReport> {
    if features.is_empty() {
        return Err(Error::Empty("test set"));
    }
    if features.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: gold.len(),
        });
    }
    let k = model.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    for (x, &y) in features.iter().zip(gold) {
        if y >= k {
            return Err(Error::ClassOutOfRange { index: y, num_classes: k });
        }
        confusion[y][predict_label(model, x)?] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class = model
        .label_space
        .classes()
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let support: usize = confusion[c].iter().sum();
            ClassAccuracy {
                class: name.clone(),
                support,
                correct: confusion[c][c],
                accuracy: (support > 0).then(|| confusion[c][c] as f64 / support as f64),
                below_min_support: support < min_support,
            }
        })
        .collect();
    Ok(EvaluationReport {
        overall_accuracy: correct as f64 / gold.len() as f64,
        per_class,
        confusion,
        min_support,
    })
}

impl EvaluationReport {
    /// Category/accuracy table listing classes that meet the support
    /// threshold and are not in `excluded`.
    pub fn render_table(&self, excluded: &[String]) -> String {
        let shown: Vec<&ClassAccuracy> = self
            .per_class
            .iter()
            .filter(|c| !c.below_min_support && !excluded.contains(&c.class))
            .collect();
        let width = shown.iter().map(|c| c.class.len()).max().unwrap_or(8).max(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}", "Category", "Accuracy");
        for c in &shown {
            let acc = c.accuracy.map_or_else(|| "-".into(), |a| format!("{a:.3}"));
            let _ = writeln!(out, "{:<width$}  {:>8}", c.class, acc);
        }
        let omitted: Vec<String> = self
            .per_class
            .iter()
            .filter(|c| c.below_min_support && !excluded.contains(&c.class))
            .map(|c| format!("{} (n={})", c.class, c.support))
            .collect();
        if !omitted.is_empty() {
            let _ = writeln!(out, "* fewer than {} samples: {}", self.min_support, omitted.join(", "));
        }
        let _ = writeln!(out, "Overall accuracy: {:.3}", self.overall_accuracy);
        out
    }
}
