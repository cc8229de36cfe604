//! Task datasets: the shared BIO label schema, a deterministic synthetic
//! language generator, the annotated-utterance grammar and a MASSIVE-style
//! JSON-lines reader.

pub mod annot;
pub mod generator;
pub mod massive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LabeledSequence;

pub use annot::{
    normalize_annot_utt, parse_annot_utt, render_annot_utt, spans_from_labels, AnnotatedUtterance, SlotSpan,
};
pub use generator::{generate_language, GeneratorConfig, SplitSizes, VocabLayout};
pub use massive::{export_jsonl, ingest_massive, MassiveCorpus, MassiveRecord, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Vitality {
    Low,
    Mid,
    High,
    Unassigned,
}

impl Vitality {
    /// Relative resource weight; unassigned languages weigh like LOW.
    pub fn weight(self) -> f64 {
        match self {
            Vitality::Low | Vitality::Unassigned => 1.0,
            Vitality::Mid => 2.0,
            Vitality::High => 4.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Vitality::Low => "LOW",
            Vitality::Mid => "MID",
            Vitality::High => "HIGH",
            Vitality::Unassigned => "UNASSIGNED",
        }
    }
}

impl std::str::FromStr for Vitality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LOW" => Ok(Vitality::Low),
            "MID" => Ok(Vitality::Mid),
            "HIGH" => Ok(Vitality::High),
            "UNASSIGNED" => Ok(Vitality::Unassigned),
            other => Err(Error::InvalidInput(format!("unknown vitality `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub lang_id: String,
    pub script_id: usize,
    pub family_id: usize,
    pub vitality: Vitality,
    pub overlap: f64,
    pub seed: u64,
}

impl LanguageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lang_id.is_empty() {
            return Err(Error::InvalidConfig("lang_id must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::InvalidConfig(format!(
                "{}: overlap must be in [0,1], got {}",
                self.lang_id, self.overlap
            )));
        }
        Ok(())
    }
}

/// O plus a B-/I- pair per slot type: `O = 0`, `B-s = 1 + 2s`, `I-s = 2 + 2s`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    slots: Vec<String>,
}

pub const DEFAULT_SLOTS: [&str; 6] = ["time", "date", "place", "person", "item", "event"];

impl Default for LabelSchema {
    fn default() -> Self {
        Self::new(DEFAULT_SLOTS.iter().map(|s| s.to_string()).collect()).expect("default slots are valid")
    }
}

impl LabelSchema {
    pub fn new(slots: Vec<String>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::InvalidConfig("label schema needs at least one slot type".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &slots {
            if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '[' || c == ']' || c == ':') {
                return Err(Error::InvalidConfig(format!("invalid slot name `{s}`")));
            }
            if !seen.insert(s) {
                return Err(Error::InvalidConfig(format!("duplicate slot name `{s}`")));
            }
        }
        Ok(Self { slots })
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn num_labels(&self) -> usize {
        1 + 2 * self.slots.len()
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == name)
    }

    pub fn begin(slot: usize) -> usize {
        1 + 2 * slot
    }

    pub fn inside(slot: usize) -> usize {
        2 + 2 * slot
    }

    /// `None` for O, otherwise `(slot, is_begin)`.
    pub fn decode(label: usize) -> Option<(usize, bool)> {
        if label == 0 {
            None
        } else {
            Some(((label - 1) / 2, label % 2 == 1))
        }
    }

    pub fn label_names(&self) -> Vec<String> {
        let mut names = vec!["O".to_string()];
        for s in &self.slots {
            names.push(format!("B-{s}"));
            names.push(format!("I-{s}"));
        }
        names
    }
}

/// Every I- label continues a B- or I- label of the same slot.
pub fn check_bio(labels: &[usize], num_labels: usize) -> Result<()> {
    let mut prev: Option<usize> = None;
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_labels {
            return Err(Error::InvalidInput(format!("label id {l} at {i} ≥ {num_labels}")));
        }
        match LabelSchema::decode(l) {
            Some((slot, false)) if prev != Some(slot) => {
                return Err(Error::InvalidInput(format!(
                    "I- label at {i} does not continue a span of its slot"
                )));
            }
            Some((slot, _)) => prev = Some(slot),
            None => prev = None,
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub spec: LanguageSpec,
    pub train: Vec<LabeledSequence>,
    pub valid: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
    pub label_names: Vec<String>,
}

impl TaskDataset {
    pub fn lang_id(&self) -> &str {
        &self.spec.lang_id
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn splits(&self) -> [(&'static str, &[LabeledSequence]); 3] {
        [("train", &self.train), ("valid", &self.valid), ("test", &self.test)]
    }

    /// Label range and BIO validity of every sequence.
    pub fn validate(&self) -> Result<()> {
        for (name, split) in self.splits() {
            for (i, s) in split.iter().enumerate() {
                if s.tokens.len() != s.labels.len() {
                    return Err(Error::InvalidInput(format!(
                        "{}/{name}[{i}]: length mismatch",
                        self.spec.lang_id
                    )));
                }
                check_bio(&s.labels, self.num_labels())
                    .map_err(|e| Error::InvalidInput(format!("{}/{name}[{i}]: {e}", self.spec.lang_id)))?;
            }
        }
        Ok(())
    }

    pub fn max_token(&self) -> Option<usize> {
        self.splits()
            .iter()
            .flat_map(|(_, s)| s.iter())
            .flat_map(|s| s.tokens.iter().copied())
            .max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_has_thirteen_labels() {
        let s = LabelSchema::default();
        assert_eq!(s.num_labels(), 13);
        assert_eq!(s.label_names()[1], "B-time");
        assert_eq!(s.label_names()[2], "I-time");
        assert_eq!(LabelSchema::decode(4), Some((1, false)));
        assert_eq!(LabelSchema::decode(0), None);
    }

    #[test]
    fn bio_checks() {
        assert!(check_bio(&[0, 1, 2, 2, 0, 3], 13).is_ok());
        assert!(check_bio(&[0, 2], 13).is_err());
        assert!(check_bio(&[1, 4], 13).is_err());
        assert!(check_bio(&[13], 13).is_err());
    }

    #[test]
    fn vitality_parses() {
        assert_eq!("mid".parse::<Vitality>().unwrap(), Vitality::Mid);
        assert!("huge".parse::<Vitality>().is_err());
    }
}
