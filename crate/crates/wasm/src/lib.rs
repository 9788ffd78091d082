//! Browser demo bindings. Each export takes plain numbers or strings and
//! returns a JSON document; the page in `www/` draws it.

use std::collections::BTreeMap;

use serde::Serialize;
use wasm_bindgen::prelude::*;
use weaklab::ablation::{
    run_sweep, simulate_matrix, synthetic_gold_dataset, synthetic_pool, AblationGrid, PoolConfig, SimulatedAnnotator,
    SweepConfig,
};
use weaklab::label_model::{apply_generative, fit_generative, lf_learned_accuracy, majority_vote};
use weaklab::rng::derive_seed;
use weaklab::stats::{cohen_kappa_pairs, lf_stats};
use weaklab::{Dataset, GenerativeConfig, LabelSpace, PosteriorLabels};

#[derive(Debug, Serialize)]
pub struct AnnotatorReport {
    pub id: String,
    /// Accuracy the simulator was configured with.
    pub true_accuracy: f64,
    /// Accuracy of the votes actually drawn.
    pub empirical_accuracy: f64,
    pub learned_accuracy: f64,
    pub coverage: f64,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub examples: usize,
    pub label_model_accuracy: f64,
    pub majority_vote_accuracy: f64,
    pub em_iterations: usize,
    pub annotators: Vec<AnnotatorReport>,
}

fn accuracy(posteriors: &PosteriorLabels, dataset: &Dataset) -> f64 {
    let correct = (0..dataset.len())
        .filter(|&i| dataset.example(i).gold == Some(posteriors.hard_label(i)))
        .count();
    correct as f64 / dataset.len() as f64
}

/// Simulates `annotators` crowd workers (accuracy 0.6 to 0.85) plus
/// `adversaries` workers at accuracy 0.3 on a binary task, then compares
/// the label model against majority vote.
pub fn compare(examples: usize, annotators: usize, adversaries: usize, seed: u64) -> Result<Comparison, String> {
    let run = || -> weaklab::Result<Comparison> {
        let dataset = synthetic_gold_dataset(LabelSpace::binary_toxicity(), examples)?;
        let mut pool = synthetic_pool(
            &PoolConfig {
                size: annotators,
                num_classes: 2,
                ..PoolConfig::default()
            },
            seed,
        )?;
        for j in 0..adversaries {
            pool.push(SimulatedAnnotator::with_accuracy(format!("adv{j}"), 2, 0.3, 0.6, derive_seed(seed, &[900 + j as u64]))?);
        }
        let matrix = simulate_matrix(&dataset, &pool, derive_seed(seed, &[1]))?;
        let params = fit_generative(&matrix, &dataset, &GenerativeConfig::default())?;
        let posteriors = apply_generative(&params, &matrix, &dataset)?;
        let majority = majority_vote(&matrix, &dataset);
        let mut reports = Vec::new();
        for a in &pool {
            if matrix.lf_idx(a.id()).is_err() {
                continue;
            }
            let stats = lf_stats(&matrix, &dataset, a.id())?;
            reports.push(AnnotatorReport {
                id: a.id().to_string(),
                true_accuracy: a.mean_accuracy(),
                empirical_accuracy: stats.accuracy.unwrap_or(0.0),
                learned_accuracy: lf_learned_accuracy(&params, a.id())?,
                coverage: stats.coverage,
            });
        }
        Ok(Comparison {
            examples,
            label_model_accuracy: accuracy(&posteriors, &dataset),
            majority_vote_accuracy: accuracy(&majority, &dataset),
            em_iterations: params.log_likelihood_trace.len(),
            annotators: reports,
        })
    };
    run().map_err(|e| e.to_string())
}

/// Accuracy by annotator count and per-annotator example cap.
pub fn sweep(examples: usize, trials: usize, seed: u64) -> Result<AblationGrid, String> {
    let run = || -> weaklab::Result<AblationGrid> {
        let dataset = synthetic_gold_dataset(LabelSpace::binary_toxicity(), examples)?;
        let pool = synthetic_pool(&PoolConfig::default(), seed)?;
        let config = SweepConfig {
            annotator_counts: vec![1, 2, 4, 8, 16],
            examples_caps: vec![10, 25, 50, 100, 200, 400],
            trials,
            test_per_class: (examples / 4).clamp(1, 100),
            ..SweepConfig::default()
        };
        run_sweep(&dataset, &pool, &config, derive_seed(seed, &[2]))
    };
    run().map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct KappaReport {
    pub value: f64,
    pub percent: String,
    pub items: usize,
    pub degenerate: bool,
    pub observed_agreement: f64,
    pub classes: Vec<String>,
}

/// Cohen's kappa between two label sequences separated by commas or
/// whitespace. `-` marks a missing label; such positions are skipped.
pub fn kappa(first: &str, second: &str) -> Result<KappaReport, String> {
    let split = |s: &str| -> Vec<String> {
        s.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    };
    let (a, b) = (split(first), split(second));
    if a.len() != b.len() {
        return Err(format!("sequences differ in length: {} vs {}", a.len(), b.len()));
    }
    let pairs_raw: Vec<(&String, &String)> = a.iter().zip(&b).filter(|(x, y)| *x != "-" && *y != "-").collect();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (x, y) in &pairs_raw {
        index.entry(x.as_str()).or_default();
        index.entry(y.as_str()).or_default();
    }
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    // A single observed label still needs a second class for the table.
    let num_classes = index.len().max(2);
    let pairs: Vec<(usize, usize)> = pairs_raw.iter().map(|(x, y)| (index[x.as_str()], index[y.as_str()])).collect();
    let k = cohen_kappa_pairs(&pairs, num_classes).map_err(|e| e.to_string())?;
    let agree = pairs.iter().filter(|(x, y)| x == y).count();
    Ok(KappaReport {
        value: k.value,
        percent: k.percent(),
        items: k.items,
        degenerate: k.degenerate,
        observed_agreement: agree as f64 / pairs.len() as f64,
        classes: index.keys().map(|c| c.to_string()).collect(),
    })
}

fn to_js<T: Serialize>(result: Result<T, String>) -> Result<String, JsError> {
    let value = result.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = compareLabelModels)]
pub fn compare_label_models(examples: usize, annotators: usize, adversaries: usize, seed: u32) -> Result<String, JsError> {
    to_js(compare(examples, annotators, adversaries, seed.into()))
}

#[wasm_bindgen(js_name = ablationCurves)]
pub fn ablation_curves(examples: usize, trials: usize, seed: u32) -> Result<String, JsError> {
    to_js(sweep(examples, trials, seed.into()))
}

#[wasm_bindgen(js_name = cohenKappa)]
pub fn cohen_kappa(first: &str, second: &str) -> Result<String, JsError> {
    to_js(kappa(first, second))
}
