//! Discriminative model trained on probabilistic labels.

mod evaluate;
mod features;
mod logistic;
mod search;

pub use evaluate::{evaluate, ClassAccuracy, EvaluationReport, DEFAULT_MIN_SUPPORT};
pub use features::{dataset_features, featurize, fnv1a64, FeatureSpec, FeatureVector, DEFAULT_HASH_DIM};
pub use logistic::{
    predict, predict_label, softmax, train, train_from, ClassifierModel, Gradient, TrainConfig, TrainedModel,
    MODEL_VERSION,
};
pub use search::{accuracy, default_search_grid, hyperparameter_search, ConfigReport, SearchData, SearchOutcome, SEARCH_SIZE};
