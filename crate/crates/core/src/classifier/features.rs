use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_HASH_DIM: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureSpec {
    /// Word n-gram counts hashed into `dim` buckets.
    HashedNgrams { dim: usize, min_n: usize, max_n: usize },
    /// Precomputed dense vectors carried by the examples file.
    ExternalEmbedding { dim: usize },
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec::HashedNgrams {
            dim: DEFAULT_HASH_DIM,
            min_n: 1,
            max_n: 2,
        }
    }
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        match *self {
            FeatureSpec::HashedNgrams { dim, .. } | FeatureSpec::ExternalEmbedding { dim } => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureVector {
    /// Sorted, duplicate-free `(index, value)` pairs.
    Sparse { dim: usize, entries: Vec<(u32, f64)> },
    Dense(Vec<f64>),
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        match self {
            FeatureVector::Sparse { dim, .. } => *dim,
            FeatureVector::Dense(values) => values.len(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            FeatureVector::Sparse { entries, .. } => entries.len(),
            FeatureVector::Dense(values) => values.iter().filter(|v| **v != 0.0).count(),
        }
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        match self {
            FeatureVector::Sparse { entries, .. } => entries.iter().map(|&(i, v)| weights[i as usize] * v).sum(),
            FeatureVector::Dense(values) => values.iter().zip(weights).map(|(v, w)| v * w).sum(),
        }
    }

    /// Calls `f(index, value)` for every stored entry.
    pub fn for_each(&self, mut f: impl FnMut(usize, f64)) {
        match self {
            FeatureVector::Sparse { entries, .. } => entries.iter().for_each(|&(i, v)| f(i as usize, v)),
            FeatureVector::Dense(values) => values.iter().enumerate().for_each(|(i, &v)| f(i, v)),
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |hash, &b| (hash ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Lowercased, whitespace-tokenized word n-gram counts. N-grams are joined
/// with a single space before hashing.
pub fn featurize(text: &str, spec: &FeatureSpec) -> Result<FeatureVector> {
    let FeatureSpec::HashedNgrams { dim, min_n, max_n } = *spec else {
        return Err(Error::InvalidConfig("text featurization needs a hashed-ngrams spec".into()));
    };
    if dim == 0 || dim > u32::MAX as usize || min_n == 0 || min_n > max_n {
        return Err(Error::InvalidConfig(format!("bad hashed-ngrams spec {spec:?}")));
    }
    let lowered = text.to_lowercase();
    let tokens: Vec<&str> = lowered.split_whitespace().collect();
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for n in min_n..=max_n {
        for gram in tokens.windows(n) {
            let bucket = (fnv1a64(gram.join(" ").as_bytes()) % dim as u64) as u32;
            *counts.entry(bucket).or_insert(0.0) += 1.0;
        }
    }
    Ok(FeatureVector::Sparse {
        dim,
        entries: counts.into_iter().collect(),
    })
}

/// Features for every example in the dataset under `spec`.
pub fn dataset_features(dataset: &Dataset, spec: &FeatureSpec) -> Result<Vec<FeatureVector>> {
    match spec {
        FeatureSpec::HashedNgrams { .. } => dataset.examples().iter().map(|e| featurize(&e.text, spec)).collect(),
        FeatureSpec::ExternalEmbedding { dim } => dataset
            .examples()
            .iter()
            .map(|e| {
                let values = e.features.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(format!("example `{}` has no embedding", e.id))
                })?;
                if values.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        found: values.len(),
                    });
                }
                Ok(FeatureVector::Dense(values.clone()))
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unigrams(dim: usize) -> FeatureSpec {
        FeatureSpec::HashedNgrams { dim, min_n: 1, max_n: 1 }
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn empty_text_is_empty_vector() {
        let v = featurize("", &FeatureSpec::default()).unwrap();
        assert_eq!(v.nnz(), 0);
        assert_eq!(v.dim(), DEFAULT_HASH_DIM);
    }

    #[test]
    fn repeated_token_counts() {
        let v = featurize("why WHY", &unigrams(1024)).unwrap();
        let FeatureVector::Sparse { entries, .. } = &v else { panic!() };
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0], ((fnv1a64(b"why") % 1024) as u32, 2.0));
        assert_eq!(v, featurize("why WHY", &unigrams(1024)).unwrap());
    }

    #[test]
    fn bigrams_join_with_space() {
        let spec = FeatureSpec::HashedNgrams { dim: 1 << 20, min_n: 2, max_n: 2 };
        let v = featurize("Square  root\tof", &spec).unwrap();
        let FeatureVector::Sparse { entries, .. } = &v else { panic!() };
        let mut expected: Vec<u32> = ["square root", "root of"]
            .iter()
            .map(|g| (fnv1a64(g.as_bytes()) % (1 << 20)) as u32)
            .collect();
        expected.sort_unstable();
        assert_eq!(entries.iter().map(|e| e.0).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn embedding_spec_cannot_featurize_text() {
        assert!(featurize("x", &FeatureSpec::ExternalEmbedding { dim: 3 }).is_err());
    }
}
