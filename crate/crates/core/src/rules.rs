//! Pattern-based labeling functions.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{Vote, RULE_PREFIX};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    /// Whole-word, case-insensitive literal.
    #[default]
    Keyword,
    /// Case-insensitive regular expression.
    Regex,
}

/// One line of a rules file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub id: String,
    pub pattern: String,
    /// Class name voted on match.
    pub label: String,
    #[serde(default)]
    pub kind: PatternKind,
}

impl RuleSpec {
    pub fn keyword(id: &str, pattern: &str, label: &str) -> Self {
        RuleSpec {
            id: id.to_string(),
            pattern: pattern.to_string(),
            label: label.to_string(),
            kind: PatternKind::Keyword,
        }
    }

    pub fn regex(id: &str, pattern: &str, label: &str) -> Self {
        RuleSpec {
            kind: PatternKind::Regex,
            ..RuleSpec::keyword(id, pattern, label)
        }
    }

    /// LF id under which this rule votes.
    pub fn lf_id(&self) -> String {
        if self.id.starts_with(RULE_PREFIX) {
            self.id.clone()
        } else {
            format!("{RULE_PREFIX}{}", self.id)
        }
    }

    fn compile(&self) -> Result<Regex> {
        let source = match self.kind {
            PatternKind::Regex => self.pattern.clone(),
            PatternKind::Keyword => {
                let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
                let lead = if word(self.pattern.chars().next()) { r"\b" } else { "" };
                let trail = if word(self.pattern.chars().last()) { r"\b" } else { "" };
                format!("{lead}{}{trail}", regex::escape(&self.pattern))
            }
        };
        if self.pattern.is_empty() {
            return Err(Error::InvalidPattern {
                rule: self.id.clone(),
                message: "empty pattern".into(),
            });
        }
        RegexBuilder::new(&source)
            .case_insensitive(true)
            .build()
            .map_err(|e| Error::InvalidPattern {
                rule: self.id.clone(),
                message: e.to_string(),
            })
    }
}

pub fn read_rules(path: impl AsRef<Path>) -> Result<Vec<RuleSpec>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rules = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rule = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        rules.push(rule);
    }
    Ok(rules)
}

/// Runs every rule over the dataset text. All patterns are validated before
/// any vote is produced.
pub fn apply_rule_lfs(dataset: &Dataset, rules: &[RuleSpec]) -> Result<Vec<Vote>> {
    let compiled = rules
        .iter()
        .map(|rule| {
            let class = dataset.label_space().index_of(&rule.label)?;
            Ok((rule.lf_id(), rule.compile()?, class))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut votes = Vec::new();
    for (i, example) in dataset.examples().iter().enumerate() {
        for (lf, regex, class) in &compiled {
            if regex.is_match(&example.text) {
                votes.push(Vote {
                    example: i,
                    lf: lf.clone(),
                    class: *class,
                });
            }
        }
    }
    Ok(votes)
}
