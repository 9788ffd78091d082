//! Human-in-the-loop labeling campaign.
//!
//! A round refits the label model, freezes its posteriors as suggestions,
//! and stages a batch chosen by [`select_batch`]. Annotators label the
//! batch; advancing the round applies lifecycle decisions to labeling
//! functions, appends a [`RoundState`] to the log and opens the next round.
//! Replaying the log against the initial matrix reproduces the campaign.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::active::{
    evaluate_lf_lifecycle, select_batch, DiscardReason, LifecycleDecision, LifecycleThresholds,
    SelectionConfig, Strategy,
};
use crate::classifier::{dataset_features, train, ClassifierModel, FeatureSpec, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::label_model::{apply_generative, fit_generative, majority_vote, GenerativeConfig, LabelModelParams, PosteriorLabels};
use crate::matrix::{LabelMatrix, LfKind};
use crate::stats::{
    all_lf_stats, cohen_kappa, fleiss_kappa, lf_stats, mean_pairwise_kappa, pairwise_kappas, Kappa, LfStats, PairKappa,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub batch_size: usize,
    pub seed: u64,
    pub conflict_weight: f64,
    /// LF kinds counted by the selection scores; `None` counts all.
    pub score_kinds: Option<LfKind>,
    pub lifecycle: LifecycleThresholds,
    /// LF kinds subject to lifecycle decisions.
    pub lifecycle_kinds: Vec<LfKind>,
    pub label_model: GenerativeConfig,
    pub train: TrainConfig,
    pub feature_spec: FeatureSpec,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            batch_size: 10,
            seed: 0,
            conflict_weight: 0.5,
            score_kinds: None,
            lifecycle: LifecycleThresholds::default(),
            lifecycle_kinds: vec![LfKind::Rule],
            label_model: GenerativeConfig::default(),
            train: TrainConfig::default(),
            feature_spec: FeatureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub example_id: String,
    pub strategy: Strategy,
    /// Argmax of the posteriors frozen at round start.
    pub suggested: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub example_id: String,
    pub text: String,
    pub suggested_label: String,
    pub suggestion_confidence: f64,
    pub strategy: Strategy,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub example_id: String,
    pub annotator: String,
    pub label: String,
    pub accepted_suggestion: bool,
    /// Unix epoch milliseconds.
    #[serde(default)]
    pub timestamp_ms: u64,
    #[serde(default)]
    pub latency_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfDecision {
    pub lf_id: String,
    #[serde(flatten)]
    pub decision: LifecycleDecision,
}

/// One record of the append-only rounds log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: usize,
    pub seed: u64,
    pub batch: Vec<BatchItem>,
    pub submissions: Vec<LabelSubmission>,
    pub decisions: Vec<LfDecision>,
    pub forced: bool,
}

impl RoundState {
    pub fn sampled_ids(&self) -> Vec<&str> {
        self.batch.iter().map(|b| b.example_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionOutcome {
    pub overwrote: bool,
    pub annotator: String,
    pub coverage: f64,
    pub kappas: Vec<PairKappa>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub batch_size: usize,
    pub discarded: Vec<(String, DiscardReason)>,
    /// Mean pairwise Cohen's kappa between annotators.
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorActivity {
    pub annotator: String,
    pub submissions: usize,
    pub accepted: usize,
    pub accept_rate: Option<f64>,
    pub median_latency_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dashboard {
    pub round: usize,
    pub lf_stats: Vec<LfStats>,
    pub pairwise_kappa: Vec<PairKappa>,
    pub fleiss_kappa: Option<Kappa>,
    pub class_distribution: Vec<f64>,
    pub annotators: Vec<AnnotatorActivity>,
    pub history: Vec<RoundSummary>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    })
}

#[derive(Debug, Clone)]
pub struct Campaign {
    dataset: Dataset,
    matrix: LabelMatrix,
    config: CampaignConfig,
    annotators: BTreeSet<String>,
    params: Option<LabelModelParams>,
    snapshot: PosteriorLabels,
    round: usize,
    batch: Vec<BatchItem>,
    submissions: Vec<LabelSubmission>,
    history: Vec<RoundState>,
    /// Examples labeled during an earlier round; they leave the pool.
    reviewed: BTreeSet<String>,
}

impl Campaign {
    /// Opens round 0.
    pub fn start(dataset: Dataset, matrix: LabelMatrix, config: CampaignConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be ≥ 1".into()));
        }
        let annotators = matrix
            .lfs()
            .iter()
            .filter(|lf| lf.kind == LfKind::Annotator && lf.is_active())
            .map(|lf| lf.id.clone())
            .collect();
        let snapshot = majority_vote(&matrix, &dataset);
        let mut campaign = Campaign {
            dataset,
            matrix,
            config,
            annotators,
            params: None,
            snapshot,
            round: 0,
            batch: Vec::new(),
            submissions: Vec::new(),
            history: Vec::new(),
            reviewed: BTreeSet::new(),
        };
        campaign.open_round()?;
        Ok(campaign)
    }

    fn refit(&mut self) -> Result<()> {
        if self.matrix.num_votes() == 0 {
            self.params = None;
            self.snapshot = majority_vote(&self.matrix, &self.dataset);
            return Ok(());
        }
        let params = fit_generative(&self.matrix, &self.dataset, &self.config.label_model)?;
        self.snapshot = apply_generative(&params, &self.matrix, &self.dataset)?;
        self.params = Some(params);
        Ok(())
    }

    fn open_round(&mut self) -> Result<()> {
        self.refit()?;
        let pool = self.pool();
        let selection = if pool.is_empty() {
            Vec::new()
        } else {
            let config = SelectionConfig {
                conflict_weight: self.config.conflict_weight,
                kinds: self.config.score_kinds,
            };
            select_batch(&pool, &self.matrix, &self.dataset, self.config.batch_size, self.config.seed, &config)?
        };
        self.batch = selection
            .into_iter()
            .map(|s| {
                let i = self.dataset.index_of(&s.example_id)?;
                Ok(BatchItem {
                    example_id: s.example_id,
                    strategy: s.strategy,
                    suggested: self.snapshot.hard_label(i),
                    confidence: self.snapshot.confidence(i),
                })
            })
            .collect::<Result<_>>()?;
        self.submissions.clear();
        Ok(())
    }

    /// Examples not yet labeled in this campaign.
    pub fn pool(&self) -> Vec<String> {
        self.dataset
            .examples()
            .iter()
            .filter(|e| !self.reviewed.contains(&e.id))
            .map(|e| e.id.clone())
            .collect()
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn matrix(&self) -> &LabelMatrix {
        &self.matrix
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn params(&self) -> Option<&LabelModelParams> {
        self.params.as_ref()
    }

    /// Posteriors frozen at the start of the current round.
    pub fn snapshot(&self) -> &PosteriorLabels {
        &self.snapshot
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn batch(&self) -> &[BatchItem] {
        &self.batch
    }

    pub fn pending_submissions(&self) -> &[LabelSubmission] {
        &self.submissions
    }

    pub fn history(&self) -> &[RoundState] {
        &self.history
    }

    pub fn annotators(&self) -> impl Iterator<Item = &str> {
        self.annotators.iter().map(String::as_str)
    }

    pub fn register_annotator(&mut self, id: &str) -> Result<()> {
        if LfKind::infer(id) != LfKind::Annotator {
            return Err(Error::InvalidConfig(format!("`{id}` is reserved for rules")));
        }
        if let Ok(idx) = self.matrix.lf_idx(id) {
            if !self.matrix.lf(idx).is_active() {
                return Err(Error::DiscardedLf(id.to_string()));
            }
        }
        self.annotators.insert(id.to_string());
        Ok(())
    }

    /// Items of the current batch this annotator has not labeled yet, in
    /// batch order.
    pub fn queue(&self, annotator: &str, limit: usize) -> Result<Vec<QueueItem>> {
        if !self.annotators.contains(annotator) {
            return Err(Error::UnknownAnnotator(annotator.to_string()));
        }
        let lf = self.matrix.lf_idx(annotator).ok();
        let classes = self.dataset.label_space().classes();
        let mut out = Vec::new();
        for item in &self.batch {
            if out.len() >= limit {
                break;
            }
            let i = self.dataset.index_of(&item.example_id)?;
            if lf.is_some_and(|lf| self.matrix.vote(i, lf).is_some()) {
                continue;
            }
            out.push(QueueItem {
                example_id: item.example_id.clone(),
                text: self.dataset.example(i).text.clone(),
                suggested_label: classes[item.suggested].clone(),
                suggestion_confidence: item.confidence,
                strategy: item.strategy,
                round: self.round,
            });
        }
        Ok(out)
    }

    /// Records a vote from an annotator on an issued item. Resubmitting
    /// overwrites the earlier vote.
    pub fn submit(&mut self, submission: LabelSubmission) -> Result<SubmissionOutcome> {
        if !self.annotators.contains(&submission.annotator) {
            return Err(Error::UnknownAnnotator(submission.annotator.clone()));
        }
        if !self.batch.iter().any(|b| b.example_id == submission.example_id) {
            return Err(Error::NotIssued(submission.example_id.clone()));
        }
        let class = self.dataset.label_space().index_of(&submission.label)?;
        let example = self.dataset.index_of(&submission.example_id)?;
        let lf = self.matrix.ensure_lf(&submission.annotator, LfKind::Annotator)?;
        let overwrote = self.matrix.set_vote(example, lf, class)?.is_some();
        let annotator = submission.annotator.clone();
        self.submissions.push(submission);
        let coverage = lf_stats(&self.matrix, &self.dataset, &annotator)?.coverage;
        let mut kappas = Vec::new();
        for other in self.active_annotator_lfs() {
            if other == annotator {
                continue;
            }
            match cohen_kappa(&self.matrix, &annotator, &other) {
                Ok(kappa) => kappas.push(PairKappa {
                    lf_a: annotator.clone(),
                    lf_b: other,
                    kappa,
                }),
                Err(Error::NoCoLabeled) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(SubmissionOutcome {
            overwrote,
            annotator,
            coverage,
            kappas,
        })
    }

    fn active_annotator_lfs(&self) -> Vec<String> {
        self.matrix
            .active_lfs()
            .map(|lf| self.matrix.lf(lf))
            .filter(|lf| lf.kind == LfKind::Annotator)
            .map(|lf| lf.id.clone())
            .collect()
    }

    /// Batch items nobody has labeled this round.
    pub fn outstanding(&self) -> usize {
        let labeled: BTreeSet<&str> = self.submissions.iter().map(|s| s.example_id.as_str()).collect();
        self.batch.iter().filter(|b| !labeled.contains(b.example_id.as_str())).count()
    }

    /// Closes the current round and opens the next. Refuses while batch
    /// items are unlabeled unless `force` is set.
    pub fn advance(&mut self, force: bool) -> Result<RoundSummary> {
        let outstanding = self.outstanding();
        if outstanding > 0 && !force {
            return Err(Error::BatchIncomplete(outstanding));
        }
        let num_classes = self.dataset.num_classes();
        let mut decisions = Vec::new();
        let candidates: Vec<usize> = self
            .matrix
            .active_lfs()
            .filter(|&lf| self.config.lifecycle_kinds.contains(&self.matrix.lf(lf).kind))
            .collect();
        for lf in candidates {
            let id = self.matrix.lf(lf).id.clone();
            let stats = lf_stats(&self.matrix, &self.dataset, &id)?;
            let decision = evaluate_lf_lifecycle(&stats, &self.config.lifecycle, num_classes);
            decisions.push(LfDecision { lf_id: id, decision });
        }
        for s in &self.submissions {
            self.reviewed.insert(s.example_id.clone());
        }
        for d in &decisions {
            if let LifecycleDecision::Discard(_) = d.decision {
                let lf = self.matrix.lf_idx(&d.lf_id)?;
                for i in self.matrix.discard(lf)? {
                    self.reviewed.remove(&self.dataset.example(i).id);
                }
                self.annotators.remove(&d.lf_id);
            }
        }
        let closed = RoundState {
            round: self.round,
            seed: self.config.seed,
            batch: std::mem::take(&mut self.batch),
            submissions: std::mem::take(&mut self.submissions),
            decisions,
            forced: outstanding > 0,
        };
        self.history.push(closed);
        self.round += 1;
        self.open_round()?;
        Ok(self.summary(self.history.last().expect("just pushed")))
    }

    fn summary(&self, closed: &RoundState) -> RoundSummary {
        let discarded = closed
            .decisions
            .iter()
            .filter_map(|d| match d.decision {
                LifecycleDecision::Discard(reason) => Some((d.lf_id.clone(), reason)),
                LifecycleDecision::Keep => None,
            })
            .collect();
        RoundSummary {
            round: closed.round + 1,
            batch_size: if closed.round + 1 == self.round { self.batch.len() } else { 0 },
            discarded,
            kappa: self.mean_annotator_kappa(),
        }
    }

    fn mean_annotator_kappa(&self) -> Option<f64> {
        let ids = self.active_annotator_lfs();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        pairwise_kappas(&self.matrix, &refs).ok().and_then(|p| mean_pairwise_kappa(&p))
    }

    pub fn dashboard(&self) -> Dashboard {
        let ids = self.active_annotator_lfs();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let pairwise = pairwise_kappas(&self.matrix, &refs).unwrap_or_default();
        let fleiss = if refs.len() >= 2 { fleiss_kappa(&self.matrix, &refs).ok() } else { None };
        let mut per_annotator: BTreeMap<&str, (usize, usize, Vec<f64>)> = BTreeMap::new();
        for s in self.history.iter().flat_map(|r| &r.submissions).chain(&self.submissions) {
            let entry = per_annotator.entry(s.annotator.as_str()).or_default();
            entry.0 += 1;
            entry.1 += usize::from(s.accepted_suggestion);
            entry.2.push(s.latency_seconds);
        }
        let annotators = per_annotator
            .into_iter()
            .map(|(id, (n, accepted, mut latencies))| AnnotatorActivity {
                annotator: id.to_string(),
                submissions: n,
                accepted,
                accept_rate: (n > 0).then(|| accepted as f64 / n as f64),
                median_latency_seconds: median(&mut latencies),
            })
            .collect();
        let mut history = Vec::new();
        for (i, state) in self.history.iter().enumerate() {
            let next_batch = self.history.get(i + 1).map_or(self.batch.len(), |r| r.batch.len());
            let mut summary = self.summary(state);
            summary.batch_size = next_batch;
            history.push(summary);
        }
        Dashboard {
            round: self.round,
            lf_stats: all_lf_stats(&self.matrix, &self.dataset),
            pairwise_kappa: pairwise,
            fleiss_kappa: fleiss,
            class_distribution: self.snapshot.class_distribution(),
            annotators,
            history,
        }
    }

    /// Refits the label model on the current matrix and trains the
    /// classifier on its posteriors.
    pub fn fit_outputs(&self) -> Result<(LabelModelParams, ClassifierModel)> {
        let params = fit_generative(&self.matrix, &self.dataset, &self.config.label_model)?;
        let posteriors = apply_generative(&params, &self.matrix, &self.dataset)?;
        let features = dataset_features(&self.dataset, &self.config.feature_spec)?;
        let trained = train(
            &features,
            &posteriors.probs,
            &self.config.feature_spec,
            self.dataset.label_space(),
            &self.config.train,
        )?;
        Ok((params, trained.model))
    }

    /// Writes `matrix.jsonl`, `params.json` and `model.json` into `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (params, model) = self.fit_outputs()?;
        self.matrix.write_jsonl(dir.join("matrix.jsonl"), &self.dataset)?;
        params.write_json(dir.join("params.json"))?;
        model.write_json(dir.join("model.json"))
    }

    /// Re-executes a recorded campaign, checking every staged batch and
    /// lifecycle decision against the log.
    pub fn replay(dataset: Dataset, initial: LabelMatrix, config: CampaignConfig, log: &[RoundState]) -> Result<Self> {
        let mut campaign = Campaign::start(dataset, initial, config)?;
        for record in log {
            if record.round != campaign.round {
                return Err(Error::ReplayMismatch {
                    round: record.round,
                    message: format!("log is out of order, campaign is at round {}", campaign.round),
                });
            }
            if record.seed != campaign.config.seed {
                return Err(Error::ReplayMismatch {
                    round: record.round,
                    message: format!("log was recorded with seed {}, config has {}", record.seed, campaign.config.seed),
                });
            }
            if record.batch != campaign.batch {
                return Err(Error::ReplayMismatch {
                    round: record.round,
                    message: "staged batch differs from the log".into(),
                });
            }
            for submission in &record.submissions {
                if !campaign.annotators.contains(&submission.annotator) {
                    campaign.register_annotator(&submission.annotator)?;
                }
                campaign.submit(submission.clone())?;
            }
            campaign.advance(record.forced)?;
            let replayed = campaign.history.last().expect("advance records a round");
            if replayed.decisions != record.decisions {
                return Err(Error::ReplayMismatch {
                    round: record.round,
                    message: "lifecycle decisions differ from the log".into(),
                });
            }
        }
        Ok(campaign)
    }
}

pub fn append_round(path: impl AsRef<Path>, state: &RoundState) -> Result<()> {
    let path = path.as_ref();
    let mut line = serde_json::to_string(state)?;
    line.push('\n');
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(line.as_bytes())
        .and_then(|_| file.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads a line-delimited log; a missing file is an empty log.
pub fn read_jsonl_log<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_rounds(path: impl AsRef<Path>) -> Result<Vec<RoundState>> {
    read_jsonl_log(path)
}
