//! Examples and their line-delimited JSON interchange format.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_space::LabelSpace;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub text: String,
    /// Index into the dataset's label space.
    pub gold: Option<usize>,
    /// Externally computed embedding.
    pub features: Option<Vec<f64>>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Example {
            id: id.into(),
            text: text.into(),
            gold: None,
            features: None,
        }
    }

    pub fn with_gold(mut self, gold: usize) -> Self {
        self.gold = Some(gold);
        self
    }
}

/// One line of an examples file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    label_space: LabelSpace,
    examples: Vec<Example>,
    index: HashMap<String, usize>,
    feature_dim: Option<usize>,
}

impl Dataset {
    pub fn new(label_space: LabelSpace) -> Self {
        Dataset {
            label_space,
            examples: Vec::new(),
            index: HashMap::new(),
            feature_dim: None,
        }
    }

    pub fn from_examples(label_space: LabelSpace, examples: impl IntoIterator<Item = Example>) -> Result<Self> {
        let mut dataset = Dataset::new(label_space);
        for (line, example) in examples.into_iter().enumerate() {
            dataset.push_at(example, line + 1)?;
        }
        Ok(dataset)
    }

    pub fn push(&mut self, example: Example) -> Result<()> {
        let line = self.examples.len() + 1;
        self.push_at(example, line)
    }

    fn push_at(&mut self, example: Example, line: usize) -> Result<()> {
        if self.index.contains_key(&example.id) {
            return Err(Error::DuplicateExample { line, id: example.id });
        }
        if let Some(gold) = example.gold {
            if gold >= self.label_space.len() {
                return Err(Error::ClassOutOfRange {
                    index: gold,
                    num_classes: self.label_space.len(),
                });
            }
        }
        if let Some(features) = &example.features {
            match self.feature_dim {
                Some(expected) if expected != features.len() => {
                    return Err(Error::FeatureDimension {
                        line,
                        expected,
                        found: features.len(),
                    })
                }
                None if self.examples.iter().any(|e| e.features.is_none()) => {
                    return Err(Error::FeatureDimension {
                        line,
                        expected: 0,
                        found: features.len(),
                    })
                }
                _ => self.feature_dim = Some(features.len()),
            }
        } else if let Some(expected) = self.feature_dim {
            return Err(Error::FeatureDimension { line, expected, found: 0 });
        }
        self.index.insert(example.id.clone(), self.examples.len());
        self.examples.push(example);
        Ok(())
    }

    /// Reads a line-delimited examples file. Blank lines are skipped.
    pub fn read_jsonl(path: impl AsRef<Path>, label_space: LabelSpace) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), label_space)
    }

    pub fn from_reader(reader: impl BufRead, label_space: LabelSpace) -> Result<Self> {
        let mut dataset = Dataset::new(label_space);
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ExampleRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
            let gold = record
                .gold
                .as_deref()
                .map(|name| dataset.label_space.index_of(name))
                .transpose()?;
            if let Some(features) = &record.features {
                if features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::MalformedLine {
                        line: line_no,
                        message: "non-finite feature value".into(),
                    });
                }
            }
            let example = Example {
                id: record.id,
                text: record.text,
                gold,
                features: record.features,
            };
            dataset.push_at(example, line_no)?;
        }
        Ok(dataset)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| match e {
            Error::Json(j) if j.is_io() => Error::io(path, j.into()),
            other => other,
        })?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        for example in &self.examples {
            let record = self.record(example);
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n").map_err(serde_json::Error::io)?;
        }
        Ok(())
    }

    fn record(&self, example: &Example) -> ExampleRecord {
        ExampleRecord {
            id: example.id.clone(),
            text: example.text.clone(),
            gold: example.gold.map(|g| self.label_space.classes()[g].clone()),
            features: example.features.clone(),
        }
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, index: usize) -> &Example {
        &self.examples[index]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownExample(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.index.get(id).map(|&i| &self.examples[i])
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.feature_dim
    }

    pub fn gold_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.examples
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.gold.map(|_| i))
    }

    /// Seeded uniform subset of `ceil(fraction * len)` examples, kept in
    /// their original order.
    pub fn random_subset(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("subset fraction {fraction} not in (0, 1]")));
        }
        let amount = ((fraction * self.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut picked = index::sample(&mut rng::seeded(seed), self.len(), amount.min(self.len())).into_vec();
        picked.sort_unstable();
        self.select(&picked)
    }

    /// New dataset holding the examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::from_examples(
            self.label_space.clone(),
            indices.iter().map(|&i| self.examples[i].clone()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> LabelSpace {
        LabelSpace::new("t", ["A", "B"]).unwrap()
    }

    #[test]
    fn loads_valid_lines() {
        let text = r#"{"id":"e1","text":"why?","gold":"A"}
{"id":"e2","text":"what"}

{"id":"e3","text":"ok","gold":"B"}
"#;
        let ds = Dataset::from_reader(text.as_bytes(), space()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.example(2).gold, Some(1));
        assert_eq!(ds.index_of("e2").unwrap(), 1);
    }

    #[test]
    fn unknown_gold_names_class() {
        let text = r#"{"id":"e1","text":"x","gold":"Zebra"}"#;
        let err = Dataset::from_reader(text.as_bytes(), space()).unwrap_err();
        assert!(err.to_string().contains("Zebra"), "{err}");
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        let dup = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
        assert!(matches!(
            Dataset::from_reader(dup.as_bytes(), space()),
            Err(Error::DuplicateExample { line: 2, .. })
        ));
        let bad = "{\"id\":\"a\",\"text\":\"x\"}\n{not json\n";
        assert!(matches!(
            Dataset::from_reader(bad.as_bytes(), space()),
            Err(Error::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn inconsistent_feature_dimension() {
        let text = "{\"id\":\"a\",\"text\":\"x\",\"features\":[1,2]}\n{\"id\":\"b\",\"text\":\"y\",\"features\":[1]}\n";
        assert!(matches!(
            Dataset::from_reader(text.as_bytes(), space()),
            Err(Error::FeatureDimension { line: 2, expected: 2, found: 1 })
        ));
        let missing = "{\"id\":\"a\",\"text\":\"x\",\"features\":[1,2]}\n{\"id\":\"b\",\"text\":\"y\"}\n";
        assert!(Dataset::from_reader(missing.as_bytes(), space()).is_err());
    }

    #[test]
    fn twenty_percent_of_classroom_corpus() {
        let examples = (0..867).map(|i| Example::new(format!("u{i:03}"), format!("utterance {i}")));
        let ds = Dataset::from_examples(LabelSpace::iqa(), examples).unwrap();
        let subset = ds.random_subset(0.2, 11).unwrap();
        assert_eq!(subset.len(), 174);
        assert_eq!(subset, ds.random_subset(0.2, 11).unwrap());
        assert_ne!(subset, ds.random_subset(0.2, 12).unwrap());
    }
}
