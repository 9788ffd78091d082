//! Sparse example × labeling-function vote matrix.
//!
//! Abstention is the absence of an entry. Discarding a labeling function
//! drops all of its entries, so discarded functions never reach any
//! downstream computation.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Prefix that marks rule-based labeling functions in interchange files.
pub const RULE_PREFIX: &str = "rule:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LfKind {
    Annotator,
    Rule,
}

impl LfKind {
    pub fn infer(id: &str) -> LfKind {
        if id.starts_with(RULE_PREFIX) {
            LfKind::Rule
        } else {
            LfKind::Annotator
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LfStatus {
    Active,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelingFunction {
    pub id: String,
    pub kind: LfKind,
    pub status: LfStatus,
}

impl LabelingFunction {
    pub fn is_active(&self) -> bool {
        self.status == LfStatus::Active
    }
}

/// A single vote, addressed by example position and LF id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub example: usize,
    pub lf: String,
    pub class: usize,
}

/// One line of a label-matrix file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub example_id: String,
    pub lf_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    num_examples: usize,
    num_classes: usize,
    lfs: Vec<LabelingFunction>,
    lf_index: HashMap<String, usize>,
    rows: Vec<BTreeMap<usize, usize>>,
}

impl LabelMatrix {
    pub fn new(num_examples: usize, num_classes: usize) -> Self {
        LabelMatrix {
            num_examples,
            num_classes,
            lfs: Vec::new(),
            lf_index: HashMap::new(),
            rows: vec![BTreeMap::new(); num_examples],
        }
    }

    pub fn for_dataset(dataset: &Dataset) -> Self {
        Self::new(dataset.len(), dataset.num_classes())
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn register_lf(&mut self, id: &str, kind: LfKind) -> Result<usize> {
        if self.lf_index.contains_key(id) {
            return Err(Error::DuplicateLf(id.to_string()));
        }
        let idx = self.lfs.len();
        self.lfs.push(LabelingFunction {
            id: id.to_string(),
            kind,
            status: LfStatus::Active,
        });
        self.lf_index.insert(id.to_string(), idx);
        Ok(idx)
    }

    /// Index of an active LF, registering it if unknown.
    pub fn ensure_lf(&mut self, id: &str, kind: LfKind) -> Result<usize> {
        match self.lf_index.get(id) {
            Some(&idx) if self.lfs[idx].is_active() => Ok(idx),
            Some(_) => Err(Error::DiscardedLf(id.to_string())),
            None => self.register_lf(id, kind),
        }
    }

    pub fn lfs(&self) -> &[LabelingFunction] {
        &self.lfs
    }

    pub fn lf(&self, idx: usize) -> &LabelingFunction {
        &self.lfs[idx]
    }

    pub fn lf_idx(&self, id: &str) -> Result<usize> {
        self.lf_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownLf(id.to_string()))
    }

    /// Index of `id`, failing unless it is registered and active.
    pub fn active_lf_idx(&self, id: &str) -> Result<usize> {
        let idx = self.lf_idx(id)?;
        if !self.lfs[idx].is_active() {
            return Err(Error::DiscardedLf(id.to_string()));
        }
        Ok(idx)
    }

    pub fn active_lfs(&self) -> impl Iterator<Item = usize> + '_ {
        self.lfs
            .iter()
            .enumerate()
            .filter(|(_, lf)| lf.is_active())
            .map(|(i, _)| i)
    }

    /// Writes a vote, returning the previous vote of that LF on that example.
    pub fn set_vote(&mut self, example: usize, lf: usize, class: usize) -> Result<Option<usize>> {
        if example >= self.num_examples {
            return Err(Error::UnknownExample(format!("#{example}")));
        }
        let entry = self.lfs.get(lf).ok_or_else(|| Error::UnknownLf(format!("#{lf}")))?;
        if !entry.is_active() {
            return Err(Error::DiscardedLf(entry.id.clone()));
        }
        if class >= self.num_classes {
            return Err(Error::ClassOutOfRange {
                index: class,
                num_classes: self.num_classes,
            });
        }
        Ok(self.rows[example].insert(lf, class))
    }

    pub fn apply(&mut self, votes: &[Vote]) -> Result<()> {
        for vote in votes {
            let lf = self.ensure_lf(&vote.lf, LfKind::infer(&vote.lf))?;
            self.set_vote(vote.example, lf, vote.class)?;
        }
        Ok(())
    }

    pub fn vote(&self, example: usize, lf: usize) -> Option<usize> {
        self.rows[example].get(&lf).copied()
    }

    /// Votes on one example as `(lf index, class)` in registration order.
    pub fn row(&self, example: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows[example].iter().map(|(&lf, &class)| (lf, class))
    }

    pub fn vote_count(&self, example: usize) -> usize {
        self.rows[example].len()
    }

    pub fn num_votes(&self) -> usize {
        self.rows.iter().map(BTreeMap::len).sum()
    }

    pub fn lf_vote_count(&self, lf: usize) -> usize {
        self.rows.iter().filter(|row| row.contains_key(&lf)).count()
    }

    /// Examples labeled by `lf`, ascending.
    pub fn examples_of(&self, lf: usize) -> Vec<usize> {
        (0..self.num_examples)
            .filter(|&i| self.rows[i].contains_key(&lf))
            .collect()
    }

    /// Marks `lf` discarded and removes its entries. Returns the examples
    /// left with no votes at all.
    pub fn discard(&mut self, lf: usize) -> Result<Vec<usize>> {
        let entry = self.lfs.get_mut(lf).ok_or_else(|| Error::UnknownLf(format!("#{lf}")))?;
        if !entry.is_active() {
            return Err(Error::DiscardedLf(entry.id.clone()));
        }
        entry.status = LfStatus::Discarded;
        let mut emptied = Vec::new();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if row.remove(&lf).is_some() && row.is_empty() {
                emptied.push(i);
            }
        }
        Ok(emptied)
    }

    /// Copy that keeps only the listed LFs, preserving registration order.
    pub fn restrict(&self, keep: &[usize]) -> LabelMatrix {
        let mut kept: Vec<usize> = keep.to_vec();
        kept.sort_unstable();
        kept.dedup();
        let mut out = LabelMatrix::new(self.num_examples, self.num_classes);
        let mut remap = HashMap::new();
        for &old in &kept {
            let lf = &self.lfs[old];
            let new = out.lfs.len();
            out.lfs.push(lf.clone());
            out.lf_index.insert(lf.id.clone(), new);
            remap.insert(old, new);
        }
        for (row, out_row) in self.rows.iter().zip(out.rows.iter_mut()) {
            for (lf, &class) in row {
                if let Some(&new) = remap.get(lf) {
                    out_row.insert(new, class);
                }
            }
        }
        out
    }

    /// Copy holding only the votes for which `keep(example, lf)` is true.
    pub fn filter_votes(&self, mut keep: impl FnMut(usize, usize) -> bool) -> LabelMatrix {
        let mut out = self.clone();
        for (i, row) in out.rows.iter_mut().enumerate() {
            row.retain(|&lf, _| keep(i, lf));
        }
        out
    }

    /// Vote records sorted by example order, then LF id.
    pub fn records(&self, dataset: &Dataset) -> Vec<VoteRecord> {
        let classes = dataset.label_space().classes();
        let mut out = Vec::with_capacity(self.num_votes());
        for (i, row) in self.rows.iter().enumerate() {
            let mut entries: Vec<(&str, usize)> = row.iter().map(|(&lf, &c)| (self.lfs[lf].id.as_str(), c)).collect();
            entries.sort_unstable();
            let example_id = &dataset.example(i).id;
            out.extend(entries.into_iter().map(|(lf, c)| VoteRecord {
                example_id: example_id.clone(),
                lf_id: lf.to_string(),
                label: classes[c].clone(),
            }));
        }
        out
    }

    pub fn from_records(dataset: &Dataset, records: impl IntoIterator<Item = VoteRecord>) -> Result<Self> {
        let mut matrix = LabelMatrix::for_dataset(dataset);
        for record in records {
            matrix.insert_record(dataset, &record)?;
        }
        Ok(matrix)
    }

    fn insert_record(&mut self, dataset: &Dataset, record: &VoteRecord) -> Result<()> {
        let example = dataset.index_of(&record.example_id)?;
        let class = dataset.label_space().index_of(&record.label)?;
        let lf = self.ensure_lf(&record.lf_id, LfKind::infer(&record.lf_id))?;
        self.set_vote(example, lf, class)?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>, dataset: &Dataset) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), dataset)
    }

    pub fn from_reader(reader: impl BufRead, dataset: &Dataset) -> Result<Self> {
        let mut matrix = LabelMatrix::for_dataset(dataset);
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: VoteRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
            matrix.insert_record(dataset, &record)?;
        }
        Ok(matrix)
    }

    pub fn to_jsonl_string(&self, dataset: &Dataset) -> Result<String> {
        let mut out = String::new();
        for record in self.records(dataset) {
            out.push_str(&serde_json::to_string(&record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_jsonl_string(dataset)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(text.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}
