//! Weak-supervision engine: aggregates noisy votes from annotators and
//! pattern rules into probabilistic labels, drives an active-learning
//! labeling loop, trains a noise-aware text classifier and simulates
//! annotator pools to study the annotators-vs-examples trade-off.

pub mod error;
pub mod label_space;
pub mod dataset;
pub mod matrix;
pub mod stats;
pub mod rules;
pub mod label_model;
pub mod rng;
pub mod classifier;
pub mod active;
pub mod campaign;
pub mod ablation;

pub use dataset::{Dataset, Example};
pub use error::{Error, Result};
pub use label_model::{GenerativeConfig, LabelModelParams, PosteriorLabels, Provenance};
pub use label_space::LabelSpace;
pub use matrix::{LabelMatrix, LabelingFunction, LfKind, LfStatus, Vote};
pub use stats::{Kappa, LfStats};
