//! Label aggregation: majority vote and a Dawid-Skene generative model
//! fitted by expectation-maximization.
//!
//! The generative model assumes labeling functions are conditionally
//! independent given the true class. Each LF `j` has a row-stochastic
//! confusion matrix `θ_j[k][l] = P(j votes l | true class k)`; abstentions
//! are not modeled. The prior `π` and all confusion rows receive additive
//! (Laplace) smoothing `α`, which makes the fit a MAP estimate under a
//! Dirichlet prior.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::label_space::LabelSpace;
use crate::matrix::LabelMatrix;

pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    MajorityVote,
    Generative,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-example class distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorLabels {
    pub example_ids: Vec<String>,
    pub probs: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub example_id: String,
    pub probs: Vec<f64>,
    pub provenance: Provenance,
}

impl PosteriorLabels {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn hard_labels(&self) -> Vec<usize> {
        self.probs.iter().map(|p| argmax(p)).collect()
    }

    pub fn hard_label(&self, i: usize) -> usize {
        argmax(&self.probs[i])
    }

    pub fn confidence(&self, i: usize) -> f64 {
        self.probs[i][self.hard_label(i)]
    }

    /// Mean probability mass per class.
    pub fn class_distribution(&self) -> Vec<f64> {
        let Some(first) = self.probs.first() else {
            return Vec::new();
        };
        let mut totals = vec![0.0; first.len()];
        for p in &self.probs {
            for (t, v) in totals.iter_mut().zip(p) {
                *t += v;
            }
        }
        totals.iter().map(|t| t / self.probs.len() as f64).collect()
    }

    pub fn to_jsonl_string(&self) -> Result<String> {
        let mut out = String::new();
        for (id, probs) in self.example_ids.iter().zip(&self.probs) {
            let record = PosteriorRecord {
                example_id: id.clone(),
                probs: probs.clone(),
                provenance: self.provenance,
            };
            out.push_str(&serde_json::to_string(&record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_jsonl_string()?)
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut out = PosteriorLabels {
            example_ids: Vec::new(),
            probs: Vec::new(),
            provenance: Provenance::Generative,
        };
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: PosteriorRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            out.provenance = record.provenance;
            out.example_ids.push(record.example_id);
            out.probs.push(record.probs);
        }
        Ok(out)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

fn example_ids(dataset: &Dataset) -> Vec<String> {
    dataset.examples().iter().map(|e| e.id.clone()).collect()
}

/// Normalized vote counts; examples without votes get the uniform vector.
pub fn majority_vote(matrix: &LabelMatrix, dataset: &Dataset) -> PosteriorLabels {
    let k = matrix.num_classes();
    let probs = (0..matrix.num_examples())
        .map(|i| {
            let mut counts = vec![0.0; k];
            for (_, class) in matrix.row(i) {
                counts[class] += 1.0;
            }
            let total: f64 = counts.iter().sum();
            if total == 0.0 {
                vec![1.0 / k as f64; k]
            } else {
                counts.iter().map(|c| c / total).collect()
            }
        })
        .collect();
    PosteriorLabels {
        example_ids: example_ids(dataset),
        probs,
        provenance: Provenance::MajorityVote,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerativeConfig {
    pub max_iters: usize,
    /// Stop once the relative objective improvement drops below this.
    pub tol: f64,
    /// Additive smoothing applied to prior and confusion counts.
    pub smoothing: f64,
    /// Keeps the class prior fixed instead of learning it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_prior: Option<Vec<f64>>,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        GenerativeConfig {
            max_iters: 1000,
            tol: 1e-6,
            smoothing: 1.0,
            fixed_prior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModelParams {
    pub version: u32,
    pub label_space: LabelSpace,
    pub lf_ids: Vec<String>,
    pub prior: Vec<f64>,
    /// One K×K row-stochastic matrix per LF, aligned with `lf_ids`.
    pub confusions: Vec<Vec<Vec<f64>>>,
    /// Smoothed (MAP) log-likelihood after each EM iteration.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
}

impl LabelModelParams {
    pub fn num_classes(&self) -> usize {
        self.prior.len()
    }

    pub fn lf_position(&self, lf_id: &str) -> Result<usize> {
        self.lf_ids
            .iter()
            .position(|id| id == lf_id)
            .ok_or_else(|| Error::UnknownLf(lf_id.to_string()))
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json_string()?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: LabelModelParams = serde_json::from_str(&text)?;
        if params.version != PARAMS_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported params version {}", params.version)));
        }
        Ok(params)
    }
}

/// Prior-weighted diagonal of the LF's confusion matrix.
pub fn lf_learned_accuracy(params: &LabelModelParams, lf_id: &str) -> Result<f64> {
    let j = params.lf_position(lf_id)?;
    Ok(learned_accuracy(&params.prior, &params.confusions[j]))
}

fn learned_accuracy(prior: &[f64], confusion: &[Vec<f64>]) -> f64 {
    prior.iter().enumerate().map(|(k, p)| p * confusion[k][k]).sum()
}

/// Votes per example, with LF positions local to the fitted LF list.
struct VoteTable {
    lf_ids: Vec<String>,
    votes: Vec<Vec<(usize, usize)>>,
}

impl VoteTable {
    fn from_matrix(matrix: &LabelMatrix) -> Self {
        let active: Vec<usize> = matrix.active_lfs().collect();
        let mut local = vec![usize::MAX; matrix.lfs().len()];
        for (pos, &lf) in active.iter().enumerate() {
            local[lf] = pos;
        }
        let votes = (0..matrix.num_examples())
            .map(|i| matrix.row(i).map(|(lf, class)| (local[lf], class)).collect())
            .collect();
        VoteTable {
            lf_ids: active.iter().map(|&lf| matrix.lf(lf).id.clone()).collect(),
            votes,
        }
    }
}

fn validate_prior(prior: &[f64], k: usize) -> Result<()> {
    let sum: f64 = prior.iter().sum();
    if prior.len() != k || prior.iter().any(|&p| !(p > 0.0) || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "fixed prior must be {k} positive entries summing to 1"
        )));
    }
    Ok(())
}

/// Fits prior and confusion matrices by EM, initialized from majority vote.
pub fn fit_generative(matrix: &LabelMatrix, dataset: &Dataset, config: &GenerativeConfig) -> Result<LabelModelParams> {
    let k = matrix.num_classes();
    if matrix.num_votes() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if !(config.smoothing >= 0.0) || !(config.tol >= 0.0) || config.max_iters == 0 {
        return Err(Error::InvalidConfig("smoothing and tol must be ≥ 0, max_iters ≥ 1".into()));
    }
    if let Some(prior) = &config.fixed_prior {
        validate_prior(prior, k)?;
    }
    let table = VoteTable::from_matrix(matrix);
    let num_lfs = table.lf_ids.len();
    let alpha = config.smoothing;

    let mut posteriors = majority_vote(matrix, dataset).probs;
    let mut prior = vec![0.0; k];
    let mut confusions = vec![vec![vec![0.0; k]; k]; num_lfs];
    let mut trace = Vec::new();
    let mut converged = false;

    for iter in 0..config.max_iters {
        // M-step
        match &config.fixed_prior {
            Some(fixed) => prior.copy_from_slice(fixed),
            None => {
                prior.iter_mut().for_each(|p| *p = alpha);
                for p in &posteriors {
                    for (acc, v) in prior.iter_mut().zip(p) {
                        *acc += v;
                    }
                }
                normalize(&mut prior);
            }
        }
        for confusion in confusions.iter_mut() {
            confusion.iter_mut().flatten().for_each(|c| *c = alpha);
        }
        for (votes, p) in table.votes.iter().zip(&posteriors) {
            for &(lf, l) in votes {
                for (row, v) in confusions[lf].iter_mut().zip(p) {
                    row[l] += v;
                }
            }
        }
        confusions.iter_mut().flatten().for_each(|row| normalize(row));

        // E-step
        let log_prior: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
        let log_conf: Vec<Vec<Vec<f64>>> = confusions
            .iter()
            .map(|c| c.iter().map(|row| row.iter().map(|v| v.ln()).collect()).collect())
            .collect();
        let mut data_ll = 0.0;
        for (votes, p) in table.votes.iter().zip(posteriors.iter_mut()) {
            data_ll += e_step(&prior, &log_prior, &log_conf, votes, p);
        }
        let mut objective = data_ll;
        if alpha > 0.0 {
            if config.fixed_prior.is_none() {
                objective += alpha * log_prior.iter().sum::<f64>();
            }
            objective += alpha * log_conf.iter().flatten().flatten().sum::<f64>();
        }
        if !objective.is_finite() {
            return Err(Error::NonFiniteLikelihood(iter));
        }
        let previous = trace.last().copied();
        trace.push(objective);
        if let Some(prev) = previous {
            let scale = if prev == 0.0 { 1.0 } else { prev.abs() };
            if (objective - prev) / scale < config.tol {
                converged = true;
                break;
            }
        }
    }

    let mut params = LabelModelParams {
        version: PARAMS_VERSION,
        label_space: dataset.label_space().clone(),
        lf_ids: table.lf_ids,
        prior,
        confusions,
        log_likelihood_trace: trace,
        converged,
    };
    guard_label_switching(&mut params);
    Ok(params)
}

/// Writes the posterior for one example into `out`, returning the
/// example's marginal log-likelihood.
fn e_step(prior: &[f64], log_prior: &[f64], log_conf: &[Vec<Vec<f64>>], votes: &[(usize, usize)], out: &mut [f64]) -> f64 {
    if votes.is_empty() {
        out.copy_from_slice(prior);
        return 0.0;
    }
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = log_prior[k] + votes.iter().map(|&(lf, l)| log_conf[lf][k][l]).sum::<f64>();
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    for slot in out.iter_mut() {
        *slot = (*slot - max).exp();
        total += *slot;
    }
    out.iter_mut().for_each(|v| *v /= total);
    max + total.ln()
}

fn normalize(values: &mut [f64]) {
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
}

/// Relabels latent classes when the fit converged to a permuted solution
/// (mean learned accuracy below chance).
fn guard_label_switching(params: &mut LabelModelParams) {
    let k = params.num_classes();
    let chance = 1.0 / k as f64;
    let mean = |p: &LabelModelParams| {
        p.confusions.iter().map(|c| learned_accuracy(&p.prior, c)).sum::<f64>() / p.confusions.len().max(1) as f64
    };
    if params.confusions.is_empty() || mean(params) >= chance {
        return;
    }
    let score = |perm: &[usize]| -> f64 {
        params
            .confusions
            .iter()
            .map(|c| (0..k).map(|latent| params.prior[latent] * c[latent][perm[latent]]).sum::<f64>())
            .sum()
    };
    let perm = best_permutation(k, score);
    let mut prior = vec![0.0; k];
    for latent in 0..k {
        prior[perm[latent]] = params.prior[latent];
    }
    for confusion in params.confusions.iter_mut() {
        let mut permuted = vec![Vec::new(); k];
        for latent in 0..k {
            permuted[perm[latent]] = confusion[latent].clone();
        }
        *confusion = permuted;
    }
    params.prior = prior;
    assert!(
        mean(params) >= chance - 1e-12,
        "class permutation failed to restore above-chance accuracy"
    );
}

/// Exhaustive search for small K, greedy assignment otherwise.
fn best_permutation(k: usize, score: impl Fn(&[usize]) -> f64) -> Vec<usize> {
    let mut best: Vec<usize> = (0..k).collect();
    if k <= 8 {
        let mut best_score = score(&best);
        let mut perm: Vec<usize> = (0..k).collect();
        while next_permutation(&mut perm) {
            let s = score(&perm);
            if s > best_score {
                best_score = s;
                best.copy_from_slice(&perm);
            }
        }
        return best;
    }
    let mut used = vec![false; k];
    for latent in 0..k {
        let mut choice = None;
        let mut choice_score = f64::NEG_INFINITY;
        for target in (0..k).filter(|&t| !used[t]) {
            let mut trial = best.clone();
            trial[latent] = target;
            let s = score(&trial);
            if s > choice_score {
                choice_score = s;
                choice = Some(target);
            }
        }
        let target = choice.expect("a free target always exists");
        used[target] = true;
        best[latent] = target;
    }
    best
}

fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Posteriors under fitted parameters. Examples without votes get the prior.
pub fn apply_generative(params: &LabelModelParams, matrix: &LabelMatrix, dataset: &Dataset) -> Result<PosteriorLabels> {
    let k = params.num_classes();
    if matrix.num_classes() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: matrix.num_classes(),
        });
    }
    let positions: Vec<Option<usize>> = matrix.lfs().iter().map(|lf| params.lf_position(&lf.id).ok()).collect();
    let log_prior: Vec<f64> = params.prior.iter().map(|p| p.ln()).collect();
    let log_conf: Vec<Vec<Vec<f64>>> = params
        .confusions
        .iter()
        .map(|c| c.iter().map(|row| row.iter().map(|v| v.ln()).collect()).collect())
        .collect();
    let mut probs = Vec::with_capacity(matrix.num_examples());
    for i in 0..matrix.num_examples() {
        let votes = matrix
            .row(i)
            .map(|(lf, class)| {
                positions[lf]
                    .map(|pos| (pos, class))
                    .ok_or_else(|| Error::UnknownLf(matrix.lf(lf).id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut p = vec![0.0; k];
        let ll = e_step(&params.prior, &log_prior, &log_conf, &votes, &mut p);
        if !ll.is_finite() && !votes.is_empty() {
            return Err(Error::NonFiniteLikelihood(0));
        }
        probs.push(p);
    }
    Ok(PosteriorLabels {
        example_ids: example_ids(dataset),
        probs,
        provenance: Provenance::Generative,
    })
}
