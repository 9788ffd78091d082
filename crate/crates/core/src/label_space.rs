//! Ordered class names shared by every component.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four teacher-question categories of the Instructional Quality Assessment.
pub const IQA_CLASSES: [&str; 4] = [
    "Probing and Exploring",
    "Procedural or Factual",
    "Other Mathematical",
    "Non-Mathematical",
];

/// Optional fifth category used during early labeling rounds; reports
/// usually filter it out.
pub const EXPOSITORY: &str = "Expository";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSpace")]
pub struct LabelSpace {
    name: String,
    classes: Vec<String>,
}

#[derive(Deserialize)]
struct RawLabelSpace {
    name: String,
    classes: Vec<String>,
}

impl TryFrom<RawLabelSpace> for LabelSpace {
    type Error = Error;

    fn try_from(raw: RawLabelSpace) -> Result<Self> {
        LabelSpace::new(raw.name, raw.classes)
    }
}

impl LabelSpace {
    pub fn new<S: Into<String>>(name: impl Into<String>, classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.len() < 2 {
            return Err(Error::InvalidLabelSpace(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut seen = HashSet::new();
        for class in &classes {
            if class.trim().is_empty() {
                return Err(Error::InvalidLabelSpace("empty class name".into()));
            }
            if !seen.insert(class.as_str()) {
                return Err(Error::InvalidLabelSpace(format!("duplicate class `{class}`")));
            }
        }
        Ok(LabelSpace {
            name: name.into(),
            classes,
        })
    }

    pub fn iqa() -> Self {
        LabelSpace::new("iqa", IQA_CLASSES).expect("static label space is valid")
    }

    pub fn iqa_with_expository() -> Self {
        let classes = IQA_CLASSES.iter().copied().chain([EXPOSITORY]);
        LabelSpace::new("iqa-expository", classes).expect("static label space is valid")
    }

    /// Space with classes `c0..c{k-1}`, used by simulations.
    pub fn numbered(k: usize) -> Result<Self> {
        LabelSpace::new(format!("k{k}"), (0..k).map(|c| format!("c{c}")))
    }

    pub fn binary_toxicity() -> Self {
        LabelSpace::new("toxicity", ["non_toxic", "toxic"]).expect("static label space is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, class: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    pub fn class_name(&self, index: usize) -> Result<&str> {
        self.classes
            .get(index)
            .map(String::as_str)
            .ok_or(Error::ClassOutOfRange {
                index,
                num_classes: self.classes.len(),
            })
    }
}

impl Default for LabelSpace {
    fn default() -> Self {
        LabelSpace::iqa()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iqa_order() {
        let space = LabelSpace::iqa();
        assert_eq!(space.len(), 4);
        assert_eq!(space.class_name(0).unwrap(), "Probing and Exploring");
        assert_eq!(space.index_of("Non-Mathematical").unwrap(), 3);
        assert_eq!(LabelSpace::iqa_with_expository().index_of(EXPOSITORY).unwrap(), 4);
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(LabelSpace::new("x", ["a"]).is_err());
        assert!(LabelSpace::new("x", ["a", "a"]).is_err());
        assert!(LabelSpace::new("x", ["a", " "]).is_err());
        let err = serde_json::from_str::<LabelSpace>(r#"{"name":"x","classes":["a"]}"#);
        assert!(err.is_err());
    }
}
