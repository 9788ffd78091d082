//! Vote-based example selection and labeling-function lifecycle.
//!
//! Two strategies pick the next examples for human labeling: the examples
//! with the most pairwise disagreements between labeling functions, and
//! the examples with the fewest votes. Each batch slot picks a strategy
//! with a seeded coin.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{LabelMatrix, LfKind};
use crate::rng;
use crate::stats::LfStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Conflict,
    LeastLabeled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictScore {
    pub example_id: String,
    /// Unordered pairs of voting LFs that disagree.
    pub pair_disagreements: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCountScore {
    pub example_id: String,
    pub vote_count: usize,
}

/// Which LF kinds count toward scores. `None` counts every active LF.
pub type KindFilter = Option<LfKind>;

fn counted_votes(matrix: &LabelMatrix, example: usize, kinds: KindFilter) -> Vec<usize> {
    matrix
        .row(example)
        .filter(|&(lf, _)| kinds.is_none_or(|k| matrix.lf(lf).kind == k))
        .map(|(_, class)| class)
        .collect()
}

fn disagreements(votes: &[usize], num_classes: usize) -> usize {
    let mut per_class = vec![0usize; num_classes];
    for &v in votes {
        per_class[v] += 1;
    }
    let n = votes.len();
    let agreeing: usize = per_class.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
    n * n.saturating_sub(1) / 2 - agreeing
}

pub fn conflict_score(matrix: &LabelMatrix, dataset: &Dataset, example_id: &str) -> Result<ConflictScore> {
    conflict_score_with(matrix, dataset, example_id, None)
}

pub fn conflict_score_with(
    matrix: &LabelMatrix,
    dataset: &Dataset,
    example_id: &str,
    kinds: KindFilter,
) -> Result<ConflictScore> {
    let i = dataset.index_of(example_id)?;
    Ok(ConflictScore {
        example_id: example_id.to_string(),
        pair_disagreements: disagreements(&counted_votes(matrix, i, kinds), matrix.num_classes()),
    })
}

pub fn label_count_score(matrix: &LabelMatrix, dataset: &Dataset, example_id: &str, kinds: KindFilter) -> Result<LabelCountScore> {
    let i = dataset.index_of(example_id)?;
    Ok(LabelCountScore {
        example_id: example_id.to_string(),
        vote_count: counted_votes(matrix, i, kinds).len(),
    })
}

/// Examples with at least one conflicting pair of votes.
pub fn conflicted_examples(matrix: &LabelMatrix, kinds: KindFilter) -> Vec<usize> {
    (0..matrix.num_examples())
        .filter(|&i| disagreements(&counted_votes(matrix, i, kinds), matrix.num_classes()) > 0)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Probability that a slot uses the conflict strategy.
    pub conflict_weight: f64,
    #[serde(default)]
    pub kinds: KindFilter,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            conflict_weight: 0.5,
            kinds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub example_id: String,
    pub strategy: Strategy,
}

/// Picks up to `batch_size` distinct examples from `pool`.
///
/// For every slot a uniform draw in `[0, 1)` below `conflict_weight`
/// selects the conflict strategy (most disagreeing pairs first), otherwise
/// least-labeled (fewest votes first). Within a strategy ties go to the
/// lexicographically smallest id. The result depends only on
/// `(pool, matrix, seed)`.
pub fn select_batch(
    pool: &[String],
    matrix: &LabelMatrix,
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    config: &SelectionConfig,
) -> Result<Vec<Selection>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be ≥ 1".into()));
    }
    if !(0.0..=1.0).contains(&config.conflict_weight) {
        return Err(Error::InvalidConfig("conflict weight must be in [0, 1]".into()));
    }
    let ids: BTreeSet<&str> = pool.iter().map(String::as_str).collect();
    if ids.is_empty() {
        return Err(Error::Empty("pool"));
    }
    let mut scored = Vec::with_capacity(ids.len());
    for id in ids {
        let i = dataset.index_of(id)?;
        let votes = counted_votes(matrix, i, config.kinds);
        scored.push((id, disagreements(&votes, matrix.num_classes()), votes.len()));
    }
    // Stable sorts keep the lexicographic order among ties.
    let mut by_conflict: Vec<usize> = (0..scored.len()).collect();
    by_conflict.sort_by(|&a, &b| scored[b].1.cmp(&scored[a].1));
    let mut by_count: Vec<usize> = (0..scored.len()).collect();
    by_count.sort_by_key(|&a| scored[a].2);

    let mut taken = vec![false; scored.len()];
    let (mut conflict_cursor, mut count_cursor) = (0, 0);
    let mut rng = rng::seeded(seed);
    let mut batch = Vec::with_capacity(batch_size.min(scored.len()));
    while batch.len() < batch_size && batch.len() < scored.len() {
        let draw: f64 = rng.random();
        let (strategy, order, cursor) = if draw < config.conflict_weight {
            (Strategy::Conflict, &by_conflict, &mut conflict_cursor)
        } else {
            (Strategy::LeastLabeled, &by_count, &mut count_cursor)
        };
        while taken[order[*cursor]] {
            *cursor += 1;
        }
        let pick = order[*cursor];
        taken[pick] = true;
        batch.push(Selection {
            example_id: scored[pick].0.to_string(),
            strategy,
        });
    }
    Ok(batch)
}

/// Examples without a vote from any active annotator.
pub fn eligible_pool(matrix: &LabelMatrix, dataset: &Dataset) -> Vec<String> {
    (0..matrix.num_examples())
        .filter(|&i| matrix.row(i).all(|(lf, _)| matrix.lf(lf).kind != LfKind::Annotator))
        .map(|i| dataset.example(i).id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifecycleThresholds {
    pub min_coverage: f64,
    /// Defaults to chance plus five points, `1/K + 0.05`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_accuracy: Option<f64>,
}

impl Default for LifecycleThresholds {
    fn default() -> Self {
        LifecycleThresholds {
            min_coverage: 0.05,
            min_accuracy: None,
        }
    }
}

impl LifecycleThresholds {
    pub fn accuracy_threshold(&self, num_classes: usize) -> f64 {
        self.min_accuracy.unwrap_or(1.0 / num_classes as f64 + 0.05)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    Coverage,
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "snake_case")]
pub enum LifecycleDecision {
    Keep,
    Discard(DiscardReason),
}

/// Discards an LF whose coverage or (measurable) accuracy is too low.
pub fn evaluate_lf_lifecycle(stats: &LfStats, thresholds: &LifecycleThresholds, num_classes: usize) -> LifecycleDecision {
    if stats.coverage < thresholds.min_coverage {
        return LifecycleDecision::Discard(DiscardReason::Coverage);
    }
    match stats.accuracy {
        Some(acc) if acc < thresholds.accuracy_threshold(num_classes) => {
            LifecycleDecision::Discard(DiscardReason::Accuracy)
        }
        _ => LifecycleDecision::Keep,
    }
}

/// Discards `lf_id`, drops its votes and returns the examples that lost
/// their last vote; those are added to `pool`.
pub fn retire_lf(
    matrix: &mut LabelMatrix,
    dataset: &Dataset,
    lf_id: &str,
    pool: &mut BTreeSet<String>,
) -> Result<Vec<String>> {
    let lf = matrix.lf_idx(lf_id)?;
    let emptied = matrix.discard(lf)?;
    let ids: Vec<String> = emptied.iter().map(|&i| dataset.example(i).id.clone()).collect();
    pool.extend(ids.iter().cloned());
    Ok(ids)
}
