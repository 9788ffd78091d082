//! Labeling-function statistics and inter-annotator agreement.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::LabelMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfStats {
    pub lf_id: String,
    pub coverage: f64,
    pub overlap: f64,
    pub conflict: f64,
    pub correct: usize,
    /// Examples this LF labeled that carry gold.
    pub labeled_gold: usize,
    pub accuracy: Option<f64>,
}

/// Coverage, overlap and conflict use the whole dataset as denominator;
/// accuracy uses the gold-carrying examples the LF labeled.
pub fn lf_stats(matrix: &LabelMatrix, dataset: &Dataset, lf_id: &str) -> Result<LfStats> {
    let lf = matrix.active_lf_idx(lf_id)?;
    Ok(stats_for(matrix, dataset, lf))
}

/// Stats for every active LF, in registration order.
pub fn all_lf_stats(matrix: &LabelMatrix, dataset: &Dataset) -> Vec<LfStats> {
    matrix.active_lfs().map(|lf| stats_for(matrix, dataset, lf)).collect()
}

fn stats_for(matrix: &LabelMatrix, dataset: &Dataset, lf: usize) -> LfStats {
    let (mut labeled, mut overlapping, mut conflicting) = (0usize, 0usize, 0usize);
    let (mut correct, mut labeled_gold) = (0usize, 0usize);
    for i in 0..matrix.num_examples() {
        let Some(own) = matrix.vote(i, lf) else { continue };
        labeled += 1;
        let mut others = matrix.row(i).filter(|&(other, _)| other != lf).peekable();
        if others.peek().is_some() {
            overlapping += 1;
            if others.any(|(_, class)| class != own) {
                conflicting += 1;
            }
        }
        if let Some(gold) = dataset.example(i).gold {
            labeled_gold += 1;
            if gold == own {
                correct += 1;
            }
        }
    }
    let n = matrix.num_examples();
    let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    LfStats {
        lf_id: matrix.lf(lf).id.clone(),
        coverage: frac(labeled),
        overlap: frac(overlapping),
        conflict: frac(conflicting),
        correct,
        labeled_gold,
        accuracy: (labeled_gold > 0).then(|| correct as f64 / labeled_gold as f64),
    }
}

/// Layout of the labeling-function results table.
pub fn render_lf_table(stats: &[LfStats]) -> String {
    let width = stats.iter().map(|s| s.lf_id.len()).max().unwrap_or(2).max(2);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>width$}  {:>8}  {:>8}  {:>7}  {:>8}",
        "ID", "Overlap", "Conflict", "Correct", "Accuracy"
    );
    for s in stats {
        let accuracy = s.accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.3}"));
        let _ = writeln!(
            out,
            "{:>width$}  {:>8.3}  {:>8.3}  {:>7}  {:>8}",
            s.lf_id, s.overlap, s.conflict, s.correct, accuracy
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    /// In [-1, 1].
    pub value: f64,
    /// Set when chance agreement is 1 (a single class used by everyone);
    /// `value` is then reported as 0.
    pub degenerate: bool,
    pub items: usize,
}

impl Kappa {
    /// Percent form with one decimal, e.g. `0.794` → `"79.4"`.
    pub fn percent(&self) -> String {
        format_kappa_percent(self.value)
    }
}

pub fn format_kappa_percent(value: f64) -> String {
    format!("{:.1}", value * 100.0)
}

/// Cohen's kappa over the examples both LFs labeled.
pub fn cohen_kappa(matrix: &LabelMatrix, lf_a: &str, lf_b: &str) -> Result<Kappa> {
    let a = matrix.active_lf_idx(lf_a)?;
    let b = matrix.active_lf_idx(lf_b)?;
    let pairs: Vec<(usize, usize)> = (0..matrix.num_examples())
        .filter_map(|i| Some((matrix.vote(i, a)?, matrix.vote(i, b)?)))
        .collect();
    cohen_kappa_pairs(&pairs, matrix.num_classes())
}

/// Cohen's kappa for paired ratings with classes in `0..num_classes`.
pub fn cohen_kappa_pairs(pairs: &[(usize, usize)], num_classes: usize) -> Result<Kappa> {
    if pairs.is_empty() {
        return Err(Error::NoCoLabeled);
    }
    let mut marg_a = vec![0u64; num_classes];
    let mut marg_b = vec![0u64; num_classes];
    let mut agree = 0u64;
    for &(x, y) in pairs {
        for c in [x, y] {
            if c >= num_classes {
                return Err(Error::ClassOutOfRange { index: c, num_classes });
            }
        }
        marg_a[x] += 1;
        marg_b[y] += 1;
        agree += u64::from(x == y);
    }
    let n = pairs.len() as u64;
    let chance: u64 = marg_a.iter().zip(&marg_b).map(|(a, b)| a * b).sum();
    if chance == n * n {
        return Ok(Kappa {
            value: 0.0,
            degenerate: true,
            items: pairs.len(),
        });
    }
    let p_o = agree as f64 / n as f64;
    let p_e = chance as f64 / (n * n) as f64;
    Ok(Kappa {
        value: (p_o - p_e) / (1.0 - p_e),
        degenerate: false,
        items: pairs.len(),
    })
}

/// Fleiss' kappa over the examples labeled by every listed LF.
pub fn fleiss_kappa(matrix: &LabelMatrix, lfs: &[&str]) -> Result<Kappa> {
    if lfs.len() < 2 {
        return Err(Error::TooFewRaters(lfs.len()));
    }
    let idx: Vec<usize> = lfs.iter().map(|id| matrix.active_lf_idx(id)).collect::<Result<_>>()?;
    let k = matrix.num_classes();
    let mut table = Vec::new();
    for i in 0..matrix.num_examples() {
        let votes: Option<Vec<usize>> = idx.iter().map(|&lf| matrix.vote(i, lf)).collect();
        if let Some(votes) = votes {
            let mut counts = vec![0usize; k];
            for v in votes {
                counts[v] += 1;
            }
            table.push(counts);
        }
    }
    fleiss_kappa_counts(&table)
}

/// Fleiss' kappa from an items × classes count table with a constant
/// number of ratings per item.
pub fn fleiss_kappa_counts(table: &[Vec<usize>]) -> Result<Kappa> {
    let first = table.first().ok_or(Error::NoCoLabeled)?;
    let raters: usize = first.iter().sum();
    if raters < 2 {
        return Err(Error::TooFewRaters(raters));
    }
    let k = first.len();
    let mut class_totals = vec![0usize; k];
    let mut agreement_sum = 0.0;
    for row in table {
        let total: usize = row.iter().sum();
        if row.len() != k || total != raters {
            return Err(Error::InvalidConfig("ragged rating table".into()));
        }
        let pairs_agreeing: usize = row.iter().map(|&c| c * c.saturating_sub(1)).sum();
        agreement_sum += pairs_agreeing as f64 / (raters * (raters - 1)) as f64;
        for (t, &c) in class_totals.iter_mut().zip(row) {
            *t += c;
        }
    }
    let items = table.len();
    let all = (items * raters) as f64;
    if class_totals.iter().filter(|&&t| t > 0).count() == 1 {
        return Ok(Kappa {
            value: 0.0,
            degenerate: true,
            items,
        });
    }
    let p_bar = agreement_sum / items as f64;
    let p_e: f64 = class_totals.iter().map(|&t| (t as f64 / all).powi(2)).sum();
    Ok(Kappa {
        value: (p_bar - p_e) / (1.0 - p_e),
        degenerate: false,
        items,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairKappa {
    pub lf_a: String,
    pub lf_b: String,
    pub kappa: Kappa,
}

/// Cohen's kappa for every pair of the listed LFs that share an example.
pub fn pairwise_kappas(matrix: &LabelMatrix, lfs: &[&str]) -> Result<Vec<PairKappa>> {
    let mut out = Vec::new();
    for (i, a) in lfs.iter().enumerate() {
        for b in &lfs[i + 1..] {
            match cohen_kappa(matrix, a, b) {
                Ok(kappa) => out.push(PairKappa {
                    lf_a: a.to_string(),
                    lf_b: b.to_string(),
                    kappa,
                }),
                Err(Error::NoCoLabeled) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

pub fn mean_pairwise_kappa(pairs: &[PairKappa]) -> Option<f64> {
    (!pairs.is_empty()).then(|| pairs.iter().map(|p| p.kappa.value).sum::<f64>() / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Example;
    use crate::label_space::LabelSpace;
    use crate::matrix::LfKind;

    fn fixture() -> (Dataset, LabelMatrix) {
        let space = LabelSpace::new("t", ["A", "B"]).unwrap();
        let ds = Dataset::from_examples(space, (1..=4).map(|i| Example::new(format!("e{i}"), "x"))).unwrap();
        let mut m = LabelMatrix::for_dataset(&ds);
        let a = m.register_lf("lf-a", LfKind::Annotator).unwrap();
        let b = m.register_lf("lf-b", LfKind::Annotator).unwrap();
        for (ex, class) in [(0, 0), (1, 0), (2, 1)] {
            m.set_vote(ex, a, class).unwrap();
        }
        for (ex, class) in [(1, 1), (2, 1)] {
            m.set_vote(ex, b, class).unwrap();
        }
        (ds, m)
    }

    #[test]
    fn single_lf_covers_everything() {
        let space = LabelSpace::new("t", ["A", "B"]).unwrap();
        let ds = Dataset::from_examples(space, (0..4).map(|i| Example::new(format!("e{i}"), "x"))).unwrap();
        let mut m = LabelMatrix::for_dataset(&ds);
        let lf = m.register_lf("solo", LfKind::Rule).unwrap();
        for i in 0..4 {
            m.set_vote(i, lf, 0).unwrap();
        }
        let s = lf_stats(&m, &ds, "solo").unwrap();
        assert_eq!((s.coverage, s.overlap, s.conflict), (1.0, 0.0, 0.0));
        assert_eq!(s.accuracy, None);
    }

    #[test]
    fn hand_enumerated_fractions() {
        let (ds, m) = fixture();
        let s = lf_stats(&m, &ds, "lf-a").unwrap();
        assert_eq!(s.coverage, 0.75);
        assert_eq!(s.overlap, 0.5);
        assert_eq!(s.conflict, 0.25);
        let s = lf_stats(&m, &ds, "lf-b").unwrap();
        assert_eq!((s.coverage, s.overlap, s.conflict), (0.5, 0.5, 0.25));
    }

    #[test]
    fn discarded_lf_rejected() {
        let (ds, mut m) = fixture();
        m.discard(0).unwrap();
        assert!(matches!(lf_stats(&m, &ds, "lf-a"), Err(Error::DiscardedLf(_))));
        assert!(matches!(lf_stats(&m, &ds, "nope"), Err(Error::UnknownLf(_))));
        let s = lf_stats(&m, &ds, "lf-b").unwrap();
        assert_eq!((s.overlap, s.conflict), (0.0, 0.0));
    }

    #[test]
    fn kappa_from_contingency_counts() {
        let mut pairs = Vec::new();
        for (x, y, n) in [(0, 0, 20), (0, 1, 5), (1, 0, 10), (1, 1, 15)] {
            pairs.extend(std::iter::repeat_n((x, y), n));
        }
        let k = cohen_kappa_pairs(&pairs, 2).unwrap();
        assert!((k.value - 0.4).abs() < 1e-12, "{k:?}");
        assert!(!k.degenerate);
    }

    #[test]
    fn kappa_edge_cases() {
        let same = [(0, 0), (1, 1), (2, 2), (1, 1)];
        assert_eq!(cohen_kappa_pairs(&same, 3).unwrap().value, 1.0);
        let single = [(1, 1), (1, 1)];
        let k = cohen_kappa_pairs(&single, 3).unwrap();
        assert_eq!((k.value, k.degenerate), (0.0, true));
        assert!(matches!(cohen_kappa_pairs(&[], 2), Err(Error::NoCoLabeled)));
        let (_, m) = fixture();
        let k = cohen_kappa(&m, "lf-a", "lf-b").unwrap();
        assert_eq!(k.items, 2);
    }

    #[test]
    fn kappa_percent_rendering() {
        assert_eq!(format_kappa_percent(0.794), "79.4");
        assert_eq!(format_kappa_percent(0.494), "49.4");
    }

    #[test]
    fn fleiss_small_table() {
        // item 1: (A, A, B); item 2: (B, B, B)
        let k = fleiss_kappa_counts(&[vec![2, 1], vec![0, 3]]).unwrap();
        assert!((k.value - 0.25).abs() < 1e-12, "{k:?}");
        let k = fleiss_kappa_counts(&[vec![3, 0], vec![0, 3]]).unwrap();
        assert_eq!(k.value, 1.0);
    }

    #[test]
    fn fleiss_needs_two_raters() {
        let (_, m) = fixture();
        assert!(matches!(fleiss_kappa(&m, &["lf-a"]), Err(Error::TooFewRaters(1))));
        let k = fleiss_kappa(&m, &["lf-a", "lf-b"]).unwrap();
        assert_eq!(k.items, 2);
    }

    #[test]
    fn table_layout() {
        let (ds, m) = fixture();
        let table = render_lf_table(&all_lf_stats(&m, &ds));
        let header: Vec<_> = table.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["ID", "Overlap", "Conflict", "Correct", "Accuracy"]);
        assert_eq!(table.lines().count(), 3);
    }
}
