#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weaklab::ablation::{simulate_matrix, synthetic_gold_dataset, SimulatedAnnotator};
use weaklab::{Dataset, Example, LabelMatrix, LabelSpace, LfKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain EM in probability space. `votes[i][j]` is LF j's vote on example
/// i. Initialized from normalized vote counts; runs until no parameter moves
/// by more than 1e-15 or `max_iters` is reached.
pub fn em_oracle(votes: &[Vec<Option<usize>>], k: usize, alpha: f64, max_iters: usize) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
    let m = votes[0].len();
    let mut post: Vec<Vec<f64>> = votes
        .iter()
        .map(|row| {
            let mut c = vec![0.0; k];
            for v in row.iter().flatten() {
                c[*v] += 1.0;
            }
            let t: f64 = c.iter().sum();
            if t == 0.0 {
                vec![1.0 / k as f64; k]
            } else {
                c.iter().map(|x| x / t).collect()
            }
        })
        .collect();
    let mut prior = vec![0.0; k];
    let mut theta = vec![vec![vec![0.0; k]; k]; m];
    for _ in 0..max_iters {
        let mut new_prior = vec![alpha; k];
        for p in &post {
            for c in 0..k {
                new_prior[c] += p[c];
            }
        }
        let total: f64 = new_prior.iter().sum();
        new_prior.iter_mut().for_each(|x| *x /= total);
        let mut new_theta = vec![vec![vec![alpha; k]; k]; m];
        for (row, p) in votes.iter().zip(&post) {
            for (j, v) in row.iter().enumerate() {
                if let Some(l) = v {
                    for c in 0..k {
                        new_theta[j][c][*l] += p[c];
                    }
                }
            }
        }
        for t in new_theta.iter_mut().flatten() {
            let s: f64 = t.iter().sum();
            t.iter_mut().for_each(|x| *x /= s);
        }
        let mut delta: f64 = new_prior.iter().zip(&prior).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        for (a, b) in new_theta.iter().flatten().flatten().zip(theta.iter().flatten().flatten()) {
            delta = delta.max((a - b).abs());
        }
        prior = new_prior;
        theta = new_theta;
        for (row, p) in votes.iter().zip(post.iter_mut()) {
            let mut unnorm: Vec<f64> = (0..k)
                .map(|c| {
                    row.iter()
                        .enumerate()
                        .filter_map(|(j, v)| v.map(|l| theta[j][c][l]))
                        .product::<f64>()
                        * prior[c]
                })
                .collect();
            let z: f64 = unnorm.iter().sum();
            unnorm.iter_mut().for_each(|x| *x /= z);
            *p = unnorm;
        }
        if delta < 1e-15 {
            break;
        }
    }
    (prior, theta)
}

pub fn matrix_from_votes(dataset: &Dataset, lf_ids: &[&str], votes: &[Vec<Option<usize>>]) -> LabelMatrix {
    let mut m = LabelMatrix::for_dataset(dataset);
    for id in lf_ids {
        m.register_lf(id, LfKind::infer(id)).unwrap();
    }
    for (i, row) in votes.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if let Some(l) = v {
                m.set_vote(i, j, *l).unwrap();
            }
        }
    }
    m
}

/// Random gold dataset and matrix with `lfs` annotators voting at the
/// given density.
pub fn random_matrix(seed: u64, n: usize, lfs: usize, k: usize, density: f64) -> (Dataset, LabelMatrix) {
    let mut r = rng(seed);
    let space = LabelSpace::numbered(k).unwrap();
    let ds = Dataset::from_examples(
        space,
        (0..n).map(|i| Example::new(format!("e{i}"), "").with_gold(r.random_range(0..k))),
    )
    .unwrap();
    let mut m = LabelMatrix::for_dataset(&ds);
    for j in 0..lfs {
        m.register_lf(&format!("lf{j}"), LfKind::Annotator).unwrap();
    }
    for i in 0..n {
        for j in 0..lfs {
            if r.random::<f64>() < density {
                m.set_vote(i, j, r.random_range(0..k)).unwrap();
            }
        }
    }
    (ds, m)
}

pub const POOL_ACCURACIES: [f64; 5] = [0.6, 0.7, 0.75, 0.8, 0.9];

pub fn annotator_pool(k: usize, accuracies: &[f64], coverage: f64) -> Vec<SimulatedAnnotator> {
    accuracies
        .iter()
        .enumerate()
        .map(|(i, &a)| SimulatedAnnotator::with_accuracy(format!("ann{i}"), k, a, coverage, i as u64).unwrap())
        .collect()
}

pub fn simulated(k: usize, n: usize, pool: &[SimulatedAnnotator], seed: u64) -> (Dataset, LabelMatrix) {
    let ds = synthetic_gold_dataset(LabelSpace::numbered(k).unwrap(), n).unwrap();
    let m = simulate_matrix(&ds, pool, seed).unwrap();
    (ds, m)
}

pub fn accuracy(predicted: &[usize], dataset: &Dataset, indices: &[usize]) -> f64 {
    let correct = indices.iter().filter(|&&i| dataset.example(i).gold == Some(predicted[i])).count();
    correct as f64 / indices.len() as f64
}

/// Synthetic three-class corpus for the labeling loop.
///
/// Ordinary examples of class k carry two of the class's keywords. Hard
/// examples of class k carry one keyword of class k, one of class k+1 and a
/// context word seen nowhere else. Three crowd annotators label both
/// splits; every hard example gets exactly two crowd votes, one for k and
/// one for k+1.
pub struct ConflictCorpus {
    pub train: Dataset,
    pub gold: Vec<usize>,
    pub train_matrix: LabelMatrix,
    pub heldout: Dataset,
    pub heldout_matrix: LabelMatrix,
}

pub const CORPUS_K: usize = 3;
const CROWD: usize = 3;
const FILLER: [&str; 12] = [
    "the", "a", "we", "you", "it", "today", "class", "look", "again", "here", "now", "so",
];
const KEYWORDS: [[&str; 4]; CORPUS_K] = [
    ["apple", "pear", "plum", "fig"],
    ["river", "lake", "creek", "pond"],
    ["stone", "rock", "pebble", "slate"],
];

fn doc(r: &mut ChaCha8Rng, class: usize, hard: bool) -> String {
    let mut words: Vec<String> = Vec::new();
    if hard {
        words.push(KEYWORDS[class][r.random_range(0..4)].to_string());
        words.push(KEYWORDS[(class + 1) % CORPUS_K][r.random_range(0..4)].to_string());
        words.push(format!("ctx{class}x{}", r.random_range(0..3)));
    } else {
        let mut kw = KEYWORDS[class].to_vec();
        kw.shuffle(r);
        words.extend(kw.into_iter().take(2).map(String::from));
    }
    for _ in 0..4 {
        words.push(FILLER[r.random_range(0..FILLER.len())].to_string());
    }
    words.shuffle(r);
    words.join(" ")
}

fn split(r: &mut ChaCha8Rng, prefix: &str, n: usize, hard_rate: f64, with_gold: bool) -> (Dataset, LabelMatrix, Vec<usize>) {
    let space = LabelSpace::numbered(CORPUS_K).unwrap();
    let mut examples = Vec::new();
    let mut gold = Vec::new();
    let mut hard = Vec::new();
    for i in 0..n {
        let class = i % CORPUS_K;
        let h = r.random::<f64>() < hard_rate;
        let mut e = Example::new(format!("{prefix}{i:04}"), doc(r, class, h));
        if with_gold {
            e = e.with_gold(class);
        }
        examples.push(e);
        gold.push(class);
        hard.push(h);
    }
    let ds = Dataset::from_examples(space, examples).unwrap();
    let mut m = LabelMatrix::for_dataset(&ds);
    for a in 0..CROWD {
        m.register_lf(&format!("crowd{a}"), LfKind::Annotator).unwrap();
    }
    for i in 0..n {
        let class = gold[i];
        if hard[i] {
            let mut who: Vec<usize> = (0..CROWD).collect();
            who.shuffle(r);
            m.set_vote(i, who[0], class).unwrap();
            m.set_vote(i, who[1], (class + 1) % CORPUS_K).unwrap();
            continue;
        }
        for a in 0..CROWD {
            if r.random::<f64>() < 0.8 {
                let vote = if r.random::<f64>() < 0.99 {
                    class
                } else {
                    (class + 1 + r.random_range(0..CORPUS_K - 1)) % CORPUS_K
                };
                m.set_vote(i, a, vote).unwrap();
            }
        }
    }
    (ds, m, gold)
}

pub fn conflict_corpus(seed: u64, train_n: usize, heldout_n: usize, hard_rate: f64) -> ConflictCorpus {
    let mut r = rng(seed);
    let (train, train_matrix, gold) = split(&mut r, "t", train_n, hard_rate, false);
    let (heldout, heldout_matrix, _) = split(&mut r, "h", heldout_n, hard_rate, true);
    ConflictCorpus {
        train,
        gold,
        train_matrix,
        heldout,
        heldout_matrix,
    }
}
