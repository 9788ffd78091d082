//! Annotator-count versus examples-per-annotator studies on simulated pools.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Example};
use crate::error::{Error, Result};
use crate::label_model::{apply_generative, fit_generative, GenerativeConfig};
use crate::label_space::LabelSpace;
use crate::matrix::{LabelMatrix, LfKind};
use crate::rng::{derive_seed, seeded};

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAnnotator")]
pub struct SimulatedAnnotator {
    id: String,
    confusion: Vec<Vec<f64>>,
    coverage: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct RawAnnotator {
    id: String,
    confusion: Vec<Vec<f64>>,
    coverage: f64,
    seed: u64,
}

impl TryFrom<RawAnnotator> for SimulatedAnnotator {
    type Error = Error;

    fn try_from(raw: RawAnnotator) -> Result<Self> {
        SimulatedAnnotator::new(raw.id, raw.confusion, raw.coverage, raw.seed)
    }
}

impl SimulatedAnnotator {
    /// `confusion[true][vote]`; rows must be probability distributions.
    pub fn new(id: impl Into<String>, confusion: Vec<Vec<f64>>, coverage: f64, seed: u64) -> Result<Self> {
        let id = id.into();
        let k = confusion.len();
        if k < 2 {
            return Err(Error::InvalidConfig(format!("annotator `{id}`: confusion needs ≥ 2 classes")));
        }
        for row in &confusion {
            if row.len() != k || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidConfig(format!("annotator `{id}`: confusion must be K×K in [0,1]")));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::InvalidConfig(format!("annotator `{id}`: confusion rows must sum to 1")));
            }
        }
        if !(coverage > 0.0 && coverage <= 1.0) {
            return Err(Error::InvalidConfig(format!("annotator `{id}`: coverage must be in (0,1]")));
        }
        Ok(SimulatedAnnotator {
            id,
            confusion,
            coverage,
            seed,
        })
    }

    /// Correct with probability `accuracy`, otherwise uniform over the
    /// other classes.
    pub fn with_accuracy(id: impl Into<String>, num_classes: usize, accuracy: f64, coverage: f64, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidConfig("confusion needs ≥ 2 classes".into()));
        }
        let off = (1.0 - accuracy) / (num_classes - 1) as f64;
        let confusion = (0..num_classes)
            .map(|t| (0..num_classes).map(|v| if t == v { accuracy } else { off }).collect())
            .collect();
        SimulatedAnnotator::new(id, confusion, coverage, seed)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn confusion(&self) -> &[Vec<f64>] {
        &self.confusion
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    /// Mean diagonal of the confusion matrix.
    pub fn mean_accuracy(&self) -> f64 {
        let k = self.num_classes();
        (0..k).map(|c| self.confusion[c][c]).sum::<f64>() / k as f64
    }

    fn draw(&self, gold: usize, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = &self.confusion[gold];
        for (class, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return class;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
    }
}

/// Each annotator votes on each example with probability `coverage`; the
/// vote is drawn from the confusion row of the gold class.
pub fn simulate_matrix(dataset: &Dataset, annotators: &[SimulatedAnnotator], seed: u64) -> Result<LabelMatrix> {
    let k = dataset.num_classes();
    let mut golds = Vec::with_capacity(dataset.len());
    for example in dataset.examples() {
        golds.push(example.gold.ok_or_else(|| Error::MissingGold(example.id.clone()))?);
    }
    let mut matrix = LabelMatrix::for_dataset(dataset);
    for annotator in annotators {
        if annotator.num_classes() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: annotator.num_classes(),
            });
        }
        let lf = matrix.register_lf(&annotator.id, LfKind::infer(&annotator.id))?;
        let mut rng = seeded(derive_seed(seed, &[annotator.seed]));
        for (i, &gold) in golds.iter().enumerate() {
            if rng.random::<f64>() < annotator.coverage {
                let vote = annotator.draw(gold, &mut rng);
                matrix.set_vote(i, lf, vote)?;
            }
        }
    }
    Ok(matrix)
}

/// Active LFs with the most votes, ties by id.
pub fn select_top_annotators(matrix: &LabelMatrix, n: usize) -> Vec<String> {
    let mut ranked: Vec<(usize, &str)> = matrix
        .active_lfs()
        .map(|lf| (matrix.lf_vote_count(lf), matrix.lf(lf).id.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
    ranked.into_iter().take(n).map(|(_, id)| id.to_string()).collect()
}

/// Keeps a seeded uniform sample of at most `cap` votes per LF. Samples for
/// increasing caps under one seed are nested.
pub fn cap_examples_per_annotator(matrix: &LabelMatrix, cap: usize, seed: u64) -> Result<LabelMatrix> {
    if cap == 0 {
        return Err(Error::InvalidConfig("examples cap must be ≥ 1".into()));
    }
    let mut keep: HashMap<usize, BTreeSet<usize>> = HashMap::new();
    for (lf, def) in matrix.lfs().iter().enumerate() {
        let mut examples = matrix.examples_of(lf);
        if examples.len() > cap {
            let mut rng = seeded(derive_seed(seed, &[fnv(&def.id)]));
            examples.shuffle(&mut rng);
            examples.truncate(cap);
        }
        keep.insert(lf, examples.into_iter().collect());
    }
    Ok(matrix.filter_votes(|example, lf| keep[&lf].contains(&example)))
}

fn fnv(s: &str) -> u64 {
    crate::classifier::fnv1a64(s.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub test: Vec<usize>,
    pub remainder: Vec<usize>,
}

/// Exactly `per_class` gold examples of every class go to the test side.
pub fn balanced_test_split(dataset: &Dataset, per_class: usize, seed: u64) -> Result<Split> {
    if per_class == 0 {
        return Err(Error::InvalidConfig("per-class test size must be ≥ 1".into()));
    }
    let k = dataset.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in dataset.gold_indices() {
        by_class[dataset.example(i).gold.expect("gold index")].push(i);
    }
    let mut test = Vec::with_capacity(per_class * k);
    let mut rng = seeded(seed);
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::InsufficientSupport {
                class: dataset.label_space().class_name(class)?.to_string(),
                available: members.len(),
                requested: per_class,
            });
        }
        let picks = rand::seq::index::sample(&mut rng, members.len(), per_class);
        test.extend(picks.into_iter().map(|p| members[p]));
    }
    test.sort_unstable();
    let chosen: BTreeSet<usize> = test.iter().copied().collect();
    let remainder = (0..dataset.len()).filter(|i| !chosen.contains(i)).collect();
    Ok(Split { test, remainder })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub annotator_counts: Vec<usize>,
    pub examples_caps: Vec<usize>,
    pub trials: usize,
    /// Per-class size of the balanced evaluation split.
    pub test_per_class: usize,
    /// Accuracy levels for the minimal-cap view.
    pub targets: Vec<f64>,
    pub label_model: GenerativeConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            annotator_counts: vec![2, 4, 8, 16],
            examples_caps: vec![50, 200, 1000],
            trials: 20,
            test_per_class: 100,
            targets: vec![0.6, 0.7, 0.8, 0.9],
            label_model: GenerativeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub accuracy: f64,
    /// Fraction of test examples with at least one vote.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n_annotators: usize,
    pub examples_cap: usize,
    pub trials: Vec<TrialResult>,
    pub mean_accuracy: f64,
    pub mean_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalCap {
    pub n_annotators: usize,
    pub target_accuracy: f64,
    /// Smallest cap whose mean accuracy reaches the target, if any.
    pub examples_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub annotator_counts: Vec<usize>,
    pub examples_caps: Vec<usize>,
    /// Row-major: annotator count, then cap.
    pub cells: Vec<CellResult>,
    pub minimal_caps: Vec<MinimalCap>,
}

impl AblationGrid {
    pub fn cell(&self, n_annotators: usize, examples_cap: usize) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.n_annotators == n_annotators && c.examples_cap == examples_cap)
    }

    pub fn write_grid_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n_annotators", "examples_cap", "trial", "accuracy", "coverage"])?;
        for cell in &self.cells {
            for t in &cell.trials {
                w.write_record([
                    cell.n_annotators.to_string(),
                    cell.examples_cap.to_string(),
                    t.trial.to_string(),
                    format!("{:.6}", t.accuracy),
                    format!("{:.6}", t.coverage),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<grid csv>", e))
    }

    pub fn write_summary_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n_annotators", "target_accuracy", "min_examples_cap"])?;
        for m in &self.minimal_caps {
            w.write_record([
                m.n_annotators.to_string(),
                format!("{}", m.target_accuracy),
                m.examples_cap.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<summary csv>", e))
    }
}

fn strictly_increasing(axis: &[usize]) -> bool {
    axis.windows(2).all(|w| w[0] < w[1])
}

/// Accuracy of the generative posterior argmax for a single grid cell.
pub fn evaluate_cell(
    dataset: &Dataset,
    full: &LabelMatrix,
    split: &Split,
    n_annotators: usize,
    examples_cap: usize,
    seed: u64,
    config: &GenerativeConfig,
) -> Result<(f64, f64)> {
    let chosen = select_top_annotators(full, n_annotators);
    let keep: Vec<usize> = chosen.iter().map(|id| full.lf_idx(id)).collect::<Result<_>>()?;
    let capped = cap_examples_per_annotator(&full.restrict(&keep), examples_cap, seed)?;
    let params = fit_generative(&capped, dataset, config)?;
    let posteriors = apply_generative(&params, &capped, dataset)?;
    let mut correct = 0usize;
    let mut covered = 0usize;
    for &i in &split.test {
        if posteriors.hard_label(i) == dataset.example(i).gold.ok_or_else(|| Error::MissingGold(dataset.example(i).id.clone()))? {
            correct += 1;
        }
        if capped.vote_count(i) > 0 {
            covered += 1;
        }
    }
    let n = split.test.len() as f64;
    Ok((correct as f64 / n, covered as f64 / n))
}

/// Runs every (annotator count, cap) cell over `trials` simulated pools.
/// Trial `t` uses the same simulated matrix, split and caps in every cell.
pub fn run_sweep(dataset: &Dataset, pool: &[SimulatedAnnotator], config: &SweepConfig, seed: u64) -> Result<AblationGrid> {
    sweep_with(dataset, config, seed, |trial_seed| {
        simulate_matrix(dataset, pool, derive_seed(trial_seed, &[0]))
    })
}

/// Same grid over an observed matrix, e.g. real crowd labels. Trials then
/// differ only in the test split and the per-annotator caps.
pub fn run_sweep_on_matrix(dataset: &Dataset, matrix: &LabelMatrix, config: &SweepConfig, seed: u64) -> Result<AblationGrid> {
    if matrix.num_examples() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            found: matrix.num_examples(),
        });
    }
    sweep_with(dataset, config, seed, |_| Ok(matrix.clone()))
}

fn sweep_with(
    dataset: &Dataset,
    config: &SweepConfig,
    seed: u64,
    mut matrix_for: impl FnMut(u64) -> Result<LabelMatrix>,
) -> Result<AblationGrid> {
    if config.annotator_counts.is_empty() || config.examples_caps.is_empty() {
        return Err(Error::InvalidConfig("sweep axes must be non-empty".into()));
    }
    if !strictly_increasing(&config.annotator_counts) || !strictly_increasing(&config.examples_caps) {
        return Err(Error::InvalidConfig("sweep axes must be strictly increasing".into()));
    }
    if config.annotator_counts[0] == 0 || config.examples_caps[0] == 0 || config.trials == 0 {
        return Err(Error::InvalidConfig("axis values and trials must be ≥ 1".into()));
    }
    let mut results: BTreeMap<(usize, usize), Vec<TrialResult>> = BTreeMap::new();
    for trial in 0..config.trials {
        let trial_seed = derive_seed(seed, &[trial as u64]);
        let full = matrix_for(trial_seed)?;
        let split = balanced_test_split(dataset, config.test_per_class, derive_seed(trial_seed, &[1]))?;
        let cap_seed = derive_seed(trial_seed, &[2]);
        for &n in &config.annotator_counts {
            for &cap in &config.examples_caps {
                let (accuracy, coverage) = evaluate_cell(dataset, &full, &split, n, cap, cap_seed, &config.label_model)?;
                results.entry((n, cap)).or_default().push(TrialResult {
                    trial,
                    seed: trial_seed,
                    accuracy,
                    coverage,
                });
            }
        }
    }
    let cells: Vec<CellResult> = results
        .into_iter()
        .map(|((n_annotators, examples_cap), trials)| {
            let m = trials.len() as f64;
            CellResult {
                n_annotators,
                examples_cap,
                mean_accuracy: trials.iter().map(|t| t.accuracy).sum::<f64>() / m,
                mean_coverage: trials.iter().map(|t| t.coverage).sum::<f64>() / m,
                trials,
            }
        })
        .collect();
    let mut minimal_caps = Vec::new();
    for &n in &config.annotator_counts {
        for &target in &config.targets {
            let examples_cap = cells
                .iter()
                .filter(|c| c.n_annotators == n && c.mean_accuracy >= target)
                .map(|c| c.examples_cap)
                .min();
            minimal_caps.push(MinimalCap {
                n_annotators: n,
                target_accuracy: target,
                examples_cap,
            });
        }
    }
    Ok(AblationGrid {
        annotator_counts: config.annotator_counts.clone(),
        examples_caps: config.examples_caps.clone(),
        cells,
        minimal_caps,
    })
}

/// Gold-only dataset with classes assigned round-robin, so class counts
/// differ by at most one.
pub fn synthetic_gold_dataset(label_space: LabelSpace, n: usize) -> Result<Dataset> {
    let k = label_space.len();
    Dataset::from_examples(
        label_space,
        (0..n).map(|i| Example::new(format!("s{i:05}"), format!("synthetic item {i}")).with_gold(i % k)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub size: usize,
    pub num_classes: usize,
    /// Accuracies are spread evenly over this range.
    pub accuracy: (f64, f64),
    /// Coverages decay geometrically from the first to the last annotator.
    pub coverage: (f64, f64),
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            size: 16,
            num_classes: 2,
            accuracy: (0.6, 0.85),
            coverage: (0.6, 0.05),
        }
    }
}

/// Annotators `a00`, `a01`, … with accuracies drawn from a seeded shuffle of
/// an even grid, so coverage rank and accuracy are unrelated.
pub fn synthetic_pool(config: &PoolConfig, seed: u64) -> Result<Vec<SimulatedAnnotator>> {
    if config.size == 0 {
        return Err(Error::InvalidConfig("pool size must be ≥ 1".into()));
    }
    let steps = (config.size.max(2) - 1) as f64;
    let (a_lo, a_hi) = config.accuracy;
    let mut accuracies: Vec<f64> = (0..config.size).map(|i| a_lo + (a_hi - a_lo) * i as f64 / steps).collect();
    accuracies.shuffle(&mut seeded(seed));
    let (c_hi, c_lo) = config.coverage;
    let ratio = if c_hi > 0.0 { (c_lo / c_hi).powf(1.0 / steps) } else { 1.0 };
    (0..config.size)
        .map(|i| {
            let coverage = (c_hi * ratio.powi(i as i32)).clamp(f64::MIN_POSITIVE, 1.0);
            SimulatedAnnotator::with_accuracy(format!("a{i:02}"), config.num_classes, accuracies[i], coverage, i as u64)
        })
        .collect()
}

/// Loads the public crowd-sourced toxicity corpus: a comments TSV with
/// `rev_id` and `comment` columns and an annotations TSV with `rev_id`,
/// `worker_id` and `toxicity` (0 or 1). Each worker becomes an annotator LF
/// `worker:<id>`; gold is the majority worker vote, ties going to non-toxic.
/// The corpus' `NEWLINE_TOKEN` and `TAB_TOKEN` markers are restored.
pub fn load_toxicity(comments: impl Read, annotations: impl Read) -> Result<(Dataset, LabelMatrix)> {
    let space = LabelSpace::binary_toxicity();
    let mut texts: Vec<(String, String)> = Vec::new();
    let mut rdr = tsv_reader(comments);
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, "rev_id")?;
    let text_col = column(&headers, "comment")?;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let id = field(&record, id_col, line)?;
        let text = field(&record, text_col, line)?
            .replace("NEWLINE_TOKEN", "\n")
            .replace("TAB_TOKEN", "\t")
            .trim()
            .to_string();
        texts.push((id, text));
    }
    let mut votes: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
    let mut rdr = tsv_reader(annotations);
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, "rev_id")?;
    let worker_col = column(&headers, "worker_id")?;
    let label_col = column(&headers, "toxicity")?;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let id = field(&record, id_col, line)?;
        let worker = field(&record, worker_col, line)?;
        let raw = field(&record, label_col, line)?;
        let label = match raw.parse::<f64>() {
            Ok(v) if v == 0.0 => 0,
            Ok(v) if v == 1.0 => 1,
            _ => {
                return Err(Error::MalformedLine {
                    line: line + 2,
                    message: format!("toxicity must be 0 or 1, got `{raw}`"),
                })
            }
        };
        votes.entry(id).or_default().push((format!("worker:{worker}"), label));
    }
    let mut examples = Vec::with_capacity(texts.len());
    for (id, text) in texts {
        let mut example = Example::new(id.clone(), text);
        if let Some(vs) = votes.get(&id) {
            let toxic = vs.iter().filter(|(_, l)| *l == 1).count();
            example = example.with_gold(usize::from(2 * toxic > vs.len()));
        }
        examples.push(example);
    }
    let dataset = Dataset::from_examples(space, examples)?;
    let mut matrix = LabelMatrix::for_dataset(&dataset);
    for (id, vs) in &votes {
        let example = dataset.index_of(id)?;
        for (worker, label) in vs {
            let lf = matrix.ensure_lf(worker, LfKind::Annotator)?;
            matrix.set_vote(example, lf, *label)?;
        }
    }
    Ok((dataset, matrix))
}

pub fn load_toxicity_files(comments: impl AsRef<Path>, annotations: impl AsRef<Path>) -> Result<(Dataset, LabelMatrix)> {
    let open = |p: &Path| std::fs::File::open(p).map_err(|e| Error::io(p, e));
    load_toxicity(open(comments.as_ref())?, open(annotations.as_ref())?)
}

fn tsv_reader(input: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(input)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::MalformedLine {
        line: 1,
        message: format!("missing column `{name}`"),
    })
}

fn field(record: &csv::StringRecord, col: usize, line: usize) -> Result<String> {
    record.get(col).map(|s| s.trim().to_string()).ok_or_else(|| Error::MalformedLine {
        line: line + 2,
        message: format!("missing field {}", col + 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(n: usize) -> Dataset {
        synthetic_gold_dataset(LabelSpace::binary_toxicity(), n).unwrap()
    }

    #[test]
    fn annotator_invariants() {
        assert!(SimulatedAnnotator::with_accuracy("a", 2, 0.8, 0.0, 0).is_err());
        assert!(SimulatedAnnotator::with_accuracy("a", 2, 0.8, 1.0001, 0).is_err());
        assert!(SimulatedAnnotator::new("a", vec![vec![0.5, 0.4], vec![0.5, 0.5]], 1.0, 0).is_err());
        let json = r#"{"id":"a","confusion":[[1.0,0.0],[0.2,0.7]],"coverage":1.0,"seed":0}"#;
        assert!(serde_json::from_str::<SimulatedAnnotator>(json).is_err());
    }

    #[test]
    fn identity_annotator_copies_gold() {
        let ds = binary(20);
        let a = SimulatedAnnotator::with_accuracy("a", 2, 1.0, 1.0, 3).unwrap();
        let m = simulate_matrix(&ds, &[a], 1).unwrap();
        for i in 0..ds.len() {
            assert_eq!(m.vote(i, 0), ds.example(i).gold);
        }
    }

    #[test]
    fn simulation_needs_gold() {
        let ds = Dataset::from_examples(LabelSpace::binary_toxicity(), [Example::new("x", "t")]).unwrap();
        let a = SimulatedAnnotator::with_accuracy("a", 2, 1.0, 1.0, 3).unwrap();
        assert!(matches!(simulate_matrix(&ds, &[a], 0), Err(Error::MissingGold(_))));
    }

    #[test]
    fn top_annotators_by_vote_count() {
        let mut m = LabelMatrix::new(100, 2);
        for (id, n) in [("a", 100), ("b", 50), ("c", 75)] {
            let lf = m.register_lf(id, LfKind::Annotator).unwrap();
            for i in 0..n {
                m.set_vote(i, lf, 0).unwrap();
            }
        }
        assert_eq!(select_top_annotators(&m, 2), ["a", "c"]);
        assert_eq!(select_top_annotators(&m, 10), ["a", "c", "b"]);
        let mut tie = LabelMatrix::new(10, 2);
        for id in ["b", "a"] {
            let lf = tie.register_lf(id, LfKind::Annotator).unwrap();
            for i in 0..10 {
                tie.set_vote(i, lf, 1).unwrap();
            }
        }
        assert_eq!(select_top_annotators(&tie, 1), ["a"]);
    }

    #[test]
    fn caps_are_nested_and_deterministic() {
        let ds = binary(300);
        let pool = synthetic_pool(&PoolConfig { size: 3, ..Default::default() }, 1).unwrap();
        let m = simulate_matrix(&ds, &pool, 4).unwrap();
        let one = cap_examples_per_annotator(&m, 1, 9).unwrap();
        for lf in 0..3 {
            assert_eq!(one.lf_vote_count(lf), 1);
        }
        let small = cap_examples_per_annotator(&m, 20, 9).unwrap();
        let large = cap_examples_per_annotator(&m, 40, 9).unwrap();
        assert_eq!(small, cap_examples_per_annotator(&m, 20, 9).unwrap());
        for lf in 0..3 {
            let big: BTreeSet<usize> = large.examples_of(lf).into_iter().collect();
            assert!(small.examples_of(lf).iter().all(|i| big.contains(i)));
        }
        assert_eq!(cap_examples_per_annotator(&m, 300, 9).unwrap(), m);
        assert!(cap_examples_per_annotator(&m, 0, 9).is_err());
    }

    #[test]
    fn balanced_split_partitions() {
        let ds = binary(50);
        let split = balanced_test_split(&ds, 10, 3).unwrap();
        let toxic = split.test.iter().filter(|&&i| ds.example(i).gold == Some(1)).count();
        assert_eq!((split.test.len(), toxic), (20, 10));
        let mut all: Vec<usize> = split.test.iter().chain(&split.remainder).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert!(balanced_test_split(&ds, 0, 3).is_err());
        match balanced_test_split(&ds, 26, 3) {
            Err(Error::InsufficientSupport { class, .. }) => assert_eq!(class, "non_toxic"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn perfect_annotators_give_perfect_cell() {
        let ds = binary(200);
        let pool = vec![SimulatedAnnotator::with_accuracy("a", 2, 1.0, 1.0, 0).unwrap()];
        let config = SweepConfig {
            annotator_counts: vec![1],
            examples_caps: vec![200],
            trials: 1,
            test_per_class: 20,
            ..Default::default()
        };
        let grid = run_sweep(&ds, &pool, &config, 0).unwrap();
        assert_eq!(grid.cells[0].mean_accuracy, 1.0);
        let mut out = Vec::new();
        grid.write_grid_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("n_annotators,examples_cap,trial,accuracy,coverage\n1,200,0,1.000000,1.000000"));
        assert_eq!(grid.minimal_caps[0].examples_cap, Some(200));
    }

    #[test]
    fn observed_matrix_sweep_matches_simulated_single_trial() {
        let ds = binary(400);
        let pool = synthetic_pool(&PoolConfig::default(), 4).unwrap();
        let config = SweepConfig {
            annotator_counts: vec![2, 8],
            examples_caps: vec![30, 300],
            trials: 1,
            test_per_class: 50,
            ..Default::default()
        };
        let simulated = run_sweep(&ds, &pool, &config, 17).unwrap();
        let trial_seed = derive_seed(17, &[0]);
        let matrix = simulate_matrix(&ds, &pool, derive_seed(trial_seed, &[0])).unwrap();
        let observed = run_sweep_on_matrix(&ds, &matrix, &config, 17).unwrap();
        assert_eq!(simulated, observed);
        let short = LabelMatrix::new(10, 2);
        assert!(run_sweep_on_matrix(&ds, &short, &config, 17).is_err());
    }

    #[test]
    fn sweep_rejects_bad_axes() {
        let ds = binary(40);
        let pool = synthetic_pool(&PoolConfig::default(), 0).unwrap();
        for (n, m) in [(vec![], vec![10]), (vec![2, 2], vec![10]), (vec![2], vec![20, 10])] {
            let config = SweepConfig {
                annotator_counts: n,
                examples_caps: m,
                ..Default::default()
            };
            assert!(matches!(run_sweep(&ds, &pool, &config, 0), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn toxicity_loader_maps_workers() {
        let comments = "rev_id\tcomment\tyear\n1\thello NEWLINE_TOKENthere\t2015\n2\tyou idiot\t2015\n3\tunlabeled\t2015\n";
        let annotations = "rev_id\tworker_id\ttoxicity\ttoxicity_score\n1\t7\t0\t0.0\n1\t8\t1\t-1.0\n2\t7\t1\t-2.0\n2\t9\t1\t-1.0\n";
        let (ds, m) = load_toxicity(comments.as_bytes(), annotations.as_bytes()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.example(0).text, "hello \nthere");
        assert_eq!(ds.example(0).gold, Some(0));
        assert_eq!(ds.example(1).gold, Some(1));
        assert_eq!(ds.example(2).gold, None);
        let w7 = m.lf_idx("worker:7").unwrap();
        assert_eq!(m.lf(w7).kind, LfKind::Annotator);
        assert_eq!(m.vote(1, w7), Some(1));
        assert_eq!(m.num_votes(), 4);
        let bad = "rev_id\tworker_id\ttoxicity\n1\t7\tmaybe\n";
        assert!(load_toxicity(comments.as_bytes(), bad.as_bytes()).is_err());
    }
}
