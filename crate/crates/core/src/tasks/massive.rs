//! MASSIVE-style JSON-lines corpora: one record per utterance with `locale`,
//! `partition` (`train`, `dev` or `test`), `utt` and `annot_utt`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::annot::{parse_annot_utt, render_annot_utt, spans_from_labels};
use super::{LabelSchema, LanguageSpec, TaskDataset, Vitality};
use crate::error::{Error, Result};
use crate::model::LabeledSequence;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MassiveRecord {
    pub locale: String,
    pub partition: String,
    pub utt: String,
    pub annot_utt: String,
}

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Word ↔ id map; id 0 is padding and id 1 stands for unseen words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let uniq: BTreeSet<String> = words.into_iter().filter(|w| w != PAD_TOKEN && w != UNK_TOKEN).collect();
        all.extend(uniq);
        let index = all.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words: all, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(1)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MassiveCorpus {
    pub vocab: Vocabulary,
    pub schema: LabelSchema,
    pub datasets: BTreeMap<String, TaskDataset>,
}

/// Reads a corpus. The vocabulary is the union of all train-partition words;
/// the slot schema is the sorted set of slot names seen anywhere. Utterances
/// longer than `max_len` tokens are truncated. Locales listed in `vitality`
/// get that tag, all others are UNASSIGNED.
pub fn ingest_massive(path: &Path, max_len: usize, vitality: &BTreeMap<String, Vitality>) -> Result<MassiveCorpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_massive_str(&text, max_len, vitality)
}

pub fn ingest_massive_str(text: &str, max_len: usize, vitality: &BTreeMap<String, Vitality>) -> Result<MassiveCorpus> {
    if max_len == 0 {
        return Err(Error::InvalidConfig("max_len must be positive".into()));
    }
    let mut parsed = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MassiveRecord = serde_json::from_str(line).map_err(|e| Error::Line {
            line: line_no,
            message: format!("malformed record: {e}"),
        })?;
        if !matches!(rec.partition.as_str(), "train" | "dev" | "test") {
            return Err(Error::Line {
                line: line_no,
                message: format!("unknown partition `{}`", rec.partition),
            });
        }
        let utt = parse_annot_utt(&rec.annot_utt).map_err(|e| Error::Line {
            line: line_no,
            message: format!("bad annot_utt: {e}"),
        })?;
        parsed.push((rec.locale, rec.partition, utt));
    }
    if parsed.is_empty() {
        return Err(Error::InvalidInput("corpus has no records".into()));
    }
    let vocab = Vocabulary::new(
        parsed
            .iter()
            .filter(|(_, p, _)| p == "train")
            .flat_map(|(_, _, u)| u.tokens.iter().cloned()),
    );
    let slots: BTreeSet<String> = parsed
        .iter()
        .flat_map(|(_, _, u)| u.spans.iter().map(|s| s.slot.clone()))
        .collect();
    let schema = if slots.is_empty() {
        // A corpus without spans still needs one slot for a valid schema.
        LabelSchema::new(vec!["slot".into()])?
    } else {
        LabelSchema::new(slots.into_iter().collect())?
    };
    let mut datasets: BTreeMap<String, TaskDataset> = BTreeMap::new();
    for (locale, partition, utt) in parsed {
        let ds = datasets.entry(locale.clone()).or_insert_with(|| TaskDataset {
            spec: LanguageSpec {
                lang_id: locale.clone(),
                script_id: 0,
                family_id: 0,
                vitality: vitality.get(&locale).copied().unwrap_or(Vitality::Unassigned),
                overlap: 0.0,
                seed: 0,
            },
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
            label_names: schema.label_names(),
        });
        let mut tokens: Vec<usize> = utt.tokens.iter().map(|w| vocab.id(w)).collect();
        let mut labels = utt.label_ids(&schema)?;
        tokens.truncate(max_len);
        labels.truncate(max_len);
        let seq = LabeledSequence { tokens, labels };
        match partition.as_str() {
            "train" => ds.train.push(seq),
            "dev" => ds.valid.push(seq),
            _ => ds.test.push(seq),
        }
    }
    Ok(MassiveCorpus {
        vocab,
        schema,
        datasets,
    })
}

/// Writes datasets as MASSIVE-style records, naming tokens with `word`.
pub fn export_jsonl(
    out: &mut impl Write,
    datasets: &[TaskDataset],
    schema: &LabelSchema,
    word: impl Fn(usize) -> String,
) -> Result<()> {
    for ds in datasets {
        for (partition, split) in [("train", &ds.train), ("dev", &ds.valid), ("test", &ds.test)] {
            for seq in split {
                let words: Vec<String> = seq.tokens.iter().map(|&t| word(t)).collect();
                let spans = spans_from_labels(&seq.labels, schema);
                let rec = MassiveRecord {
                    locale: ds.spec.lang_id.clone(),
                    partition: partition.into(),
                    utt: words.join(" "),
                    annot_utt: render_annot_utt(&words, &spans),
                };
                let line = serde_json::to_string(&rec)?;
                writeln!(out, "{line}").map_err(|e| Error::io("<export>", e))?;
            }
        }
    }
    Ok(())
}
