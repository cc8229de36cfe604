//! Deterministic synthetic "languages".
//!
//! Token ids are laid out as
//!
//! ```text
//! 0 pad | 1 unk | shared pool | script 0 | script 1 | ...
//! ```
//!
//! and every pool (shared or per script) holds filler words plus, for each
//! slot type, a set of span-initial and a set of span-continuation words.
//! A language draws each token from the shared pool with probability
//! `overlap`, otherwise from its script's private pool.
//!
//! A family fixes two things: the sentence templates (how filler and slot
//! spans are arranged) and which slot type each shared-pool value word
//! expresses. Languages of one family therefore agree on the meaning of shared
//! words, while languages of different families disagree, which is what makes
//! shared words a channel for both transfer and interference.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{LabelSchema, LanguageSpec, TaskDataset, Vitality};
use crate::error::{Error, Result};
use crate::model::LabeledSequence;
use crate::numeric::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 200,
            valid: 50,
            test: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub slots: Vec<String>,
    pub shared_filler: usize,
    /// Span-initial and span-continuation words per slot in the shared pool
    /// (each set has this many words).
    pub shared_per_slot: usize,
    pub private_filler: usize,
    pub private_per_slot: usize,
    pub num_scripts: usize,
    pub templates_per_family: usize,
    pub max_len: usize,
    /// Scale train sizes by vitality (LOW ½, MID 1, HIGH 2).
    pub vitality_scaling: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            slots: super::DEFAULT_SLOTS.iter().map(|s| s.to_string()).collect(),
            shared_filler: 8,
            shared_per_slot: 2,
            private_filler: 8,
            private_per_slot: 2,
            num_scripts: 8,
            templates_per_family: 8,
            max_len: 16,
            vitality_scaling: false,
        }
    }
}

impl GeneratorConfig {
    pub fn schema(&self) -> Result<LabelSchema> {
        LabelSchema::new(self.slots.clone())
    }

    pub fn layout(&self) -> VocabLayout {
        VocabLayout {
            num_slots: self.slots.len(),
            shared_filler: self.shared_filler,
            shared_per_slot: self.shared_per_slot,
            private_filler: self.private_filler,
            private_per_slot: self.private_per_slot,
            num_scripts: self.num_scripts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schema()?;
        if self.shared_filler == 0
            || self.private_filler == 0
            || self.shared_per_slot == 0
            || self.private_per_slot == 0
        {
            return Err(Error::InvalidConfig(
                "every vocabulary pool needs at least one word".into(),
            ));
        }
        if self.num_scripts == 0 || self.templates_per_family == 0 {
            return Err(Error::InvalidConfig(
                "num_scripts and templates_per_family must be positive".into(),
            ));
        }
        // One slot of length one between minimal filler must fit.
        if self.max_len < 3 {
            return Err(Error::InvalidConfig(format!(
                "max_len must be ≥ 3, got {}",
                self.max_len
            )));
        }
        Ok(())
    }

    pub fn train_size(&self, base: usize, vitality: Vitality) -> usize {
        if !self.vitality_scaling {
            return base;
        }
        ((base as f64 * vitality.weight() / 2.0).round() as usize).max(1)
    }
}

/// Token-id arithmetic for a generator configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VocabLayout {
    num_slots: usize,
    shared_filler: usize,
    shared_per_slot: usize,
    private_filler: usize,
    private_per_slot: usize,
    num_scripts: usize,
}

pub const UNK_ID: usize = 1;
const FIRST_WORD: usize = 2;

impl VocabLayout {
    fn shared_size(&self) -> usize {
        self.shared_filler + 2 * self.num_slots * self.shared_per_slot
    }

    fn private_size(&self) -> usize {
        self.private_filler + 2 * self.num_slots * self.private_per_slot
    }

    pub fn vocab_size(&self) -> usize {
        FIRST_WORD + self.shared_size() + self.num_scripts * self.private_size()
    }

    pub fn shared_range(&self) -> std::ops::Range<usize> {
        FIRST_WORD..FIRST_WORD + self.shared_size()
    }

    pub fn script_range(&self, script: usize) -> std::ops::Range<usize> {
        let start = FIRST_WORD + self.shared_size() + script * self.private_size();
        start..start + self.private_size()
    }

    /// The pool `(start, filler, per_slot)` for the shared pool or a script.
    fn pool(&self, script: Option<usize>) -> (usize, usize, usize) {
        match script {
            None => (FIRST_WORD, self.shared_filler, self.shared_per_slot),
            Some(s) => (self.script_range(s).start, self.private_filler, self.private_per_slot),
        }
    }

    fn filler(&self, script: Option<usize>, rng: &mut Rng) -> usize {
        let (start, filler, _) = self.pool(script);
        start + rng.below(filler)
    }

    /// A word expressing `slot` in the pool, span-initial or continuation.
    fn value(&self, script: Option<usize>, slot: usize, initial: bool, rng: &mut Rng) -> usize {
        let (start, filler, per_slot) = self.pool(script);
        let set = 2 * slot + usize::from(!initial);
        start + filler + set * per_slot + rng.below(per_slot)
    }

    pub fn token_name(id: usize) -> String {
        match id {
            0 => "<pad>".into(),
            UNK_ID => "<unk>".into(),
            _ => format!("w{id}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Segment {
    Filler(usize),
    Slot { slot: usize, len: usize },
}

/// Templates and shared-word roles of one family. Depends only on the family
/// id, never on a language seed.
#[derive(Clone, Debug)]
struct Family {
    templates: Vec<Vec<Segment>>,
    /// `roles[s]` is the slot expressed by the shared words of set `s`.
    roles: Vec<usize>,
}

impl Family {
    fn new(family_id: usize, cfg: &GeneratorConfig) -> Self {
        let mut rng = Rng::new(family_id as u64).fork("family");
        let num_slots = cfg.slots.len();
        let mut roles: Vec<usize> = (0..num_slots).collect();
        if family_id != 0 {
            rng.shuffle(&mut roles);
        }
        let templates = (0..cfg.templates_per_family)
            .map(|t| loop {
                let tpl = Self::template(&mut rng, t % num_slots, num_slots);
                let len: usize = tpl
                    .iter()
                    .map(|s| match s {
                        Segment::Filler(n) => *n,
                        Segment::Slot { len, .. } => *len,
                    })
                    .sum();
                if len <= cfg.max_len {
                    break tpl;
                }
            })
            .collect();
        Self { templates, roles }
    }

    fn template(rng: &mut Rng, first_slot: usize, num_slots: usize) -> Vec<Segment> {
        let n_slots = 1 + rng.below(3);
        let mut segs = Vec::new();
        let lead = rng.below(3);
        if lead > 0 {
            segs.push(Segment::Filler(lead));
        }
        for k in 0..n_slots {
            if k > 0 {
                segs.push(Segment::Filler(1 + rng.below(3)));
            }
            let slot = if k == 0 { first_slot } else { rng.below(num_slots) };
            segs.push(Segment::Slot {
                slot,
                len: 1 + rng.below(3),
            });
        }
        let trail = rng.below(3);
        if trail > 0 {
            segs.push(Segment::Filler(trail));
        }
        segs
    }
}

fn sample(family: &Family, layout: &VocabLayout, spec: &LanguageSpec, rng: &mut Rng) -> LabeledSequence {
    let tpl = &family.templates[rng.below(family.templates.len())];
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    for seg in tpl {
        match *seg {
            Segment::Filler(n) => {
                for _ in 0..n {
                    let shared = rng.bernoulli(spec.overlap);
                    let script = (!shared).then_some(spec.script_id);
                    tokens.push(layout.filler(script, rng));
                    labels.push(0);
                }
            }
            Segment::Slot { slot, len } => {
                for k in 0..len {
                    let initial = k == 0;
                    let tok = if rng.bernoulli(spec.overlap) {
                        // Shared word whose family role is `slot`.
                        let set = family
                            .roles
                            .iter()
                            .position(|&r| r == slot)
                            .expect("roles are a permutation");
                        layout.value(None, set, initial, rng)
                    } else {
                        layout.value(Some(spec.script_id), slot, initial, rng)
                    };
                    tokens.push(tok);
                    labels.push(if initial {
                        LabelSchema::begin(slot)
                    } else {
                        LabelSchema::inside(slot)
                    });
                }
            }
        }
    }
    LabeledSequence { tokens, labels }
}

/// Generates the train/valid/test splits of one synthetic language. Splits
/// never share a sequence, and the content depends only on the spec's seed,
/// script, family and overlap.
pub fn generate_language(spec: &LanguageSpec, sizes: SplitSizes, cfg: &GeneratorConfig) -> Result<TaskDataset> {
    spec.validate()?;
    cfg.validate()?;
    if sizes.train == 0 || sizes.valid == 0 || sizes.test == 0 {
        return Err(Error::InvalidConfig(format!(
            "{}: every split needs at least one sequence",
            spec.lang_id
        )));
    }
    if spec.script_id >= cfg.num_scripts {
        return Err(Error::InvalidConfig(format!(
            "{}: script_id {} but only {} scripts are laid out",
            spec.lang_id, spec.script_id, cfg.num_scripts
        )));
    }
    let schema = cfg.schema()?;
    let layout = cfg.layout();
    let family = Family::new(spec.family_id, cfg);
    let mut rng = Rng::new(spec.seed).fork("generate");
    let train_n = cfg.train_size(sizes.train, spec.vitality);
    let total = train_n + sizes.valid + sizes.test;
    let budget = 50 * total + 1000;
    let mut seen = HashSet::with_capacity(total);
    let mut all = Vec::with_capacity(total);
    let mut attempts = 0;
    while all.len() < total {
        if attempts == budget {
            return Err(Error::InvalidConfig(format!(
                "{}: vocab exhaustion, only {} distinct sequences after {attempts} draws (needed {total})",
                spec.lang_id,
                all.len()
            )));
        }
        attempts += 1;
        let s = sample(&family, &layout, spec, &mut rng);
        if seen.insert(s.clone()) {
            all.push(s);
        }
    }
    let test = all.split_off(train_n + sizes.valid);
    let valid = all.split_off(train_n);
    Ok(TaskDataset {
        spec: spec.clone(),
        train: all,
        valid,
        test,
        label_names: schema.label_names(),
    })
}
