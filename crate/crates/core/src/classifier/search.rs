//! Five-configuration hyperparameter search with validation-set selection.

use serde::{Deserialize, Serialize};

use super::features::{FeatureSpec, FeatureVector};
use super::logistic::{predict_label, train, ClassifierModel, TrainConfig};
use crate::error::{Error, Result};
use crate::label_space::LabelSpace;

pub const SEARCH_SIZE: usize = 5;

/// Default L2 grid, other settings at their defaults.
pub fn default_search_grid() -> Vec<TrainConfig> {
    [1e-2, 1e-3, 1e-4, 1e-5, 0.0]
        .into_iter()
        .map(|l2| TrainConfig {
            l2,
            ..TrainConfig::default()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub index: usize,
    pub config: TrainConfig,
    pub validation_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub epochs: usize,
    /// Why the config was excluded, if it was.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_index: usize,
    pub model: ClassifierModel,
    pub reports: Vec<ConfigReport>,
}

pub struct SearchData<'a> {
    pub train_features: &'a [FeatureVector],
    pub train_targets: &'a [Vec<f64>],
    pub validation_features: &'a [FeatureVector],
    /// Hard labels, normally the argmax of label-model posteriors.
    pub validation_labels: &'a [usize],
}

pub fn accuracy(model: &ClassifierModel, features: &[FeatureVector], labels: &[usize]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0;
    for (x, &y) in features.iter().zip(labels) {
        if predict_label(model, x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / features.len() as f64)
}

/// Trains every config and keeps the best validation accuracy. Ties go to
/// the smaller L2 penalty, then to the earlier config. Configs whose
/// training fails are reported and skipped.
pub fn hyperparameter_search(
    data: &SearchData<'_>,
    configs: &[TrainConfig],
    feature_spec: &FeatureSpec,
    label_space: &LabelSpace,
) -> Result<SearchOutcome> {
    if configs.len() != SEARCH_SIZE {
        return Err(Error::InvalidConfig(format!(
            "hyperparameter search takes exactly {SEARCH_SIZE} configs, got {}",
            configs.len()
        )));
    }
    if data.validation_features.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    if data.validation_features.len() != data.validation_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: data.validation_features.len(),
            found: data.validation_labels.len(),
        });
    }
    let mut reports = Vec::with_capacity(SEARCH_SIZE);
    let mut best: Option<(usize, f64, ClassifierModel)> = None;
    for (index, config) in configs.iter().enumerate() {
        let outcome = train(data.train_features, data.train_targets, feature_spec, label_space, config)
            .and_then(|t| Ok((accuracy(&t.model, data.validation_features, data.validation_labels)?, t)));
        match outcome {
            Ok((acc, trained)) => {
                reports.push(ConfigReport {
                    index,
                    config: config.clone(),
                    validation_accuracy: Some(acc),
                    final_loss: trained.loss_trace.last().copied(),
                    epochs: trained.loss_trace.len().saturating_sub(1),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((b, b_acc, _)) => acc > *b_acc || (acc == *b_acc && config.l2 < configs[*b].l2),
                };
                if better {
                    best = Some((index, acc, trained.model));
                }
            }
            Err(e) => reports.push(ConfigReport {
                index,
                config: config.clone(),
                validation_accuracy: None,
                final_loss: None,
                epochs: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    let (best_index, _, model) = best.ok_or_else(|| {
        Error::InvalidConfig("every hyperparameter configuration failed to train".into())
    })?;
    Ok(SearchOutcome {
        best_index,
        model,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Vec<FeatureVector>, Vec<Vec<f64>>, Vec<usize>) {
        let xs: Vec<FeatureVector> = (0..12)
            .map(|i| FeatureVector::Dense(vec![if i % 2 == 0 { 1.0 } else { -1.0 }, (i % 5) as f64 / 5.0]))
            .collect();
        let ys: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let ts = ys.iter().map(|&y| if y == 0 { vec![0.9, 0.1] } else { vec![0.2, 0.8] }).collect();
        (xs, ts, ys)
    }

    #[test]
    fn identical_configs_pick_first() {
        let (xs, ts, ys) = data();
        let spec = FeatureSpec::ExternalEmbedding { dim: 2 };
        let d = SearchData {
            train_features: &xs,
            train_targets: &ts,
            validation_features: &xs,
            validation_labels: &ys,
        };
        let configs = vec![TrainConfig::default(); 5];
        let out = hyperparameter_search(&d, &configs, &spec, &LabelSpace::numbered(2).unwrap()).unwrap();
        assert_eq!(out.best_index, 0);
        assert_eq!(out.reports.len(), 5);
    }

    #[test]
    fn diverging_config_is_excluded() {
        let (xs, ts, ys) = data();
        let spec = FeatureSpec::ExternalEmbedding { dim: 2 };
        let d = SearchData {
            train_features: &xs,
            train_targets: &ts,
            validation_features: &xs,
            validation_labels: &ys,
        };
        let mut configs = default_search_grid();
        configs[4] = TrainConfig {
            learning_rate: 1e4,
            l2: 1.0,
            ..TrainConfig::default()
        };
        let out = hyperparameter_search(&d, &configs, &spec, &LabelSpace::numbered(2).unwrap()).unwrap();
        assert!(out.reports[4].error.as_deref().unwrap().contains("diverged"));
        assert_ne!(out.best_index, 4);
    }

    #[test]
    fn contract_errors() {
        let (xs, ts, ys) = data();
        let spec = FeatureSpec::ExternalEmbedding { dim: 2 };
        let space = LabelSpace::numbered(2).unwrap();
        let d = SearchData {
            train_features: &xs,
            train_targets: &ts,
            validation_features: &xs,
            validation_labels: &ys,
        };
        assert!(hyperparameter_search(&d, &default_search_grid()[..4], &spec, &space).is_err());
        let empty = SearchData {
            validation_features: &[],
            validation_labels: &[],
            ..d
        };
        assert!(matches!(
            hyperparameter_search(&empty, &default_search_grid(), &spec, &space),
            Err(Error::Empty(_))
        ));
    }
}
