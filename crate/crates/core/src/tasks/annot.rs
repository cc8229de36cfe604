//! The annotated-utterance format: whitespace-separated tokens with slot spans
//! written `[slot : tok tok]`, e.g. `wake me at [time : nine am]`.
//!
//! Error positions are 0-based character offsets into the raw string.

use serde::{Deserialize, Serialize};

use super::LabelSchema;
use crate::error::{AnnotationErrorKind as Kind, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub slot: String,
    /// First token of the span.
    pub start: usize,
    /// One past the last token.
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedUtterance {
    pub raw: String,
    pub tokens: Vec<String>,
    pub spans: Vec<SlotSpan>,
}

impl AnnotatedUtterance {
    /// `O`, `B-slot`, `I-slot` per token.
    pub fn bio_tags(&self) -> Vec<String> {
        let mut tags = vec!["O".to_string(); self.tokens.len()];
        for span in &self.spans {
            for (k, tag) in tags[span.start..span.end].iter_mut().enumerate() {
                *tag = if k == 0 {
                    format!("B-{}", span.slot)
                } else {
                    format!("I-{}", span.slot)
                };
            }
        }
        tags
    }

    pub fn label_ids(&self, schema: &LabelSchema) -> Result<Vec<usize>> {
        let mut labels = vec![0; self.tokens.len()];
        for span in &self.spans {
            let s = schema
                .slot_index(&span.slot)
                .ok_or_else(|| Error::InvalidInput(format!("slot `{}` is not in the label schema", span.slot)))?;
            labels[span.start] = LabelSchema::begin(s);
            for l in &mut labels[span.start + 1..span.end] {
                *l = LabelSchema::inside(s);
            }
        }
        Ok(labels)
    }

    pub fn plain(&self) -> String {
        self.tokens.join(" ")
    }
}

fn fail<T>(pos: usize, kind: Kind) -> Result<T> {
    Err(Error::Annotation { pos, kind })
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && c != '[' && c != ']'
}

pub fn parse_annot_utt(raw: &str) -> Result<AnnotatedUtterance> {
    let chars: Vec<char> = raw.chars().collect();
    if chars.iter().all(|c| c.is_whitespace()) {
        return fail(0, Kind::EmptyInput);
    }
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    // (slot, first token, position of '[')
    let mut open: Option<(String, usize, usize)> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '[' {
            if open.is_some() {
                return fail(i, Kind::NestedSpan);
            }
            let bracket = i;
            i += 1;
            while i < chars.len() && chars[i].is_whitespace() {
                i += 1;
            }
            let name_start = i;
            while i < chars.len() && is_word_char(chars[i]) && chars[i] != ':' {
                i += 1;
            }
            let name: String = chars[name_start..i].iter().collect();
            while i < chars.len() && chars[i].is_whitespace() {
                i += 1;
            }
            if i < chars.len() && chars[i] == ':' {
                if name.is_empty() {
                    return fail(name_start, Kind::EmptySlotName);
                }
                i += 1;
            } else if i >= chars.len() {
                return fail(bracket, Kind::UnbalancedOpen);
            } else if chars[i] == '[' {
                return fail(i, Kind::NestedSpan);
            } else if name.is_empty() {
                return fail(name_start, Kind::EmptySlotName);
            } else {
                return fail(i, Kind::MissingSeparator);
            }
            open = Some((name, tokens.len(), bracket));
        } else if c == ']' {
            let Some((slot, start, bracket)) = open.take() else {
                return fail(i, Kind::UnbalancedClose);
            };
            if start == tokens.len() {
                return fail(bracket, Kind::EmptySpan);
            }
            spans.push(SlotSpan {
                slot,
                start,
                end: tokens.len(),
            });
            i += 1;
        } else {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        }
    }
    if let Some((_, _, bracket)) = open {
        return fail(bracket, Kind::UnbalancedOpen);
    }
    if tokens.is_empty() {
        return fail(0, Kind::EmptyInput);
    }
    Ok(AnnotatedUtterance {
        raw: raw.to_string(),
        tokens,
        spans,
    })
}

/// Canonical text for `tokens` with the given spans. Spans must be sorted,
/// non-overlapping and non-empty.
pub fn render_annot_utt<S: AsRef<str>>(tokens: &[S], spans: &[SlotSpan]) -> String {
    let mut out = String::new();
    let mut next = spans.iter().peekable();
    let mut i = 0;
    while i < tokens.len() {
        if !out.is_empty() {
            out.push(' ');
        }
        match next.peek() {
            Some(span) if span.start == i => {
                out.push('[');
                out.push_str(&span.slot);
                out.push_str(" :");
                for t in &tokens[span.start..span.end] {
                    out.push(' ');
                    out.push_str(t.as_ref());
                }
                out.push(']');
                i = span.end;
                next.next();
            }
            _ => {
                out.push_str(tokens[i].as_ref());
                i += 1;
            }
        }
    }
    out
}

/// Spans of a well-formed BIO label sequence.
pub fn spans_from_labels(labels: &[usize], schema: &LabelSchema) -> Vec<SlotSpan> {
    let mut spans: Vec<SlotSpan> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match LabelSchema::decode(l) {
            Some((s, true)) => spans.push(SlotSpan {
                slot: schema.slots()[s].clone(),
                start: i,
                end: i + 1,
            }),
            Some((s, false)) => match spans.last_mut() {
                Some(last) if last.end == i && last.slot == schema.slots()[s] => last.end = i + 1,
                _ => spans.push(SlotSpan {
                    slot: schema.slots()[s].clone(),
                    start: i,
                    end: i + 1,
                }),
            },
            None => {}
        }
    }
    spans
}

/// Collapses whitespace and rewrites spans in the canonical `[slot : ...]` form.
pub fn normalize_annot_utt(raw: &str) -> Result<String> {
    let parsed = parse_annot_utt(raw)?;
    Ok(render_annot_utt(&parsed.tokens, &parsed.spans))
}
