//! A miniature token-tagging encoder.
//!
//! ```text
//! h0 = E[tok] + P[pos]
//! q, k, v = h0·W_Qᵀ, h0·W_Kᵀ, h0·W_Vᵀ      (LoRA may adapt W_Q and W_V)
//! h1 = h0 + dropout(attention(q, k, v)·W_Oᵀ)
//! h2 = h1 + dropout(gelu(h1·W_1)·W_2)
//! logits = h2·W_C + b_C
//! ```
//!
//! The attention projections use the `[out × in]` layout so LoRA factors
//! attach to them directly; `W_1: d×4d`, `W_2: 4d×d` and `W_C: d×labels` are
//! applied on the right.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lora::{adapted_projection, AdapterSet};
use crate::numeric::io::{encode_tensor, read_tensor, write_tensor};
use crate::numeric::{dropout_mask, glorot_uniform, ParamAccess, Rng, Tape, Tensor, Var};
use crate::regimes::Regime;

/// Reserved padding token.
pub const PAD_ID: usize = 0;

pub const PARAM_NAMES: [&str; 10] = ["E", "P", "W_Q", "W_K", "W_V", "W_O", "W_1", "W_2", "W_C", "b_C"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub max_seq_len: usize,
    pub num_labels: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, num_labels: usize) -> Self {
        Self {
            vocab_size,
            hidden_dim: 32,
            max_seq_len: 24,
            num_labels,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig(
                "vocab_size must cover at least the pad id and one token".into(),
            ));
        }
        if self.hidden_dim < 4 {
            return Err(Error::InvalidConfig(format!(
                "hidden_dim must be ≥ 4, got {}",
                self.hidden_dim
            )));
        }
        if self.max_seq_len == 0 {
            return Err(Error::InvalidConfig("max_seq_len must be positive".into()));
        }
        if self.num_labels < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_labels must be ≥ 2, got {}",
                self.num_labels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
}

impl LabeledSequence {
    pub fn new(tokens: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        Ok(Self { tokens, labels })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
    frozen: BTreeMap<String, bool>,
}

impl ModelParams {
    /// Glorot-uniform initialization. Lookup tables use the range of a `d×d`
    /// projection; the classifier bias starts at zero.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let (v, s, c, ff) = (
            config.vocab_size,
            config.max_seq_len,
            config.num_labels,
            4 * config.hidden_dim,
        );
        let mut tensors = BTreeMap::new();
        let mut put = |name: &str, t: Tensor| {
            tensors.insert(name.to_string(), t);
        };
        put("E", glorot_uniform(rng, &[v, d], d, d));
        put("P", glorot_uniform(rng, &[s, d], d, d));
        for name in ["W_Q", "W_K", "W_V", "W_O"] {
            put(name, glorot_uniform(rng, &[d, d], d, d));
        }
        put("W_1", glorot_uniform(rng, &[d, ff], d, ff));
        put("W_2", glorot_uniform(rng, &[ff, d], ff, d));
        put("W_C", glorot_uniform(rng, &[d, c], d, c));
        put("b_C", Tensor::zeros(&[c]));
        let frozen = PARAM_NAMES.iter().map(|n| (n.to_string(), false)).collect();
        Ok(Self {
            config: config.clone(),
            tensors,
            frozen,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                left: slot.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.get(name).copied().unwrap_or(true)
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let flag = self
            .frozen
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        *flag = frozen;
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        self.frozen.values_mut().for_each(|f| *f = true);
    }

    pub fn all_frozen(&self) -> bool {
        self.frozen.values().all(|&f| f)
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Names and shapes of the tensors that are currently trainable.
    pub fn trainable_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors
            .iter()
            .filter(|(n, _)| !self.is_frozen(n))
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }

    /// SHA-256 over names, shapes, frozen flags and raw tensor bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            h.update([u8::from(self.is_frozen(name))]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            h.update(encode_tensor(t));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, dir: &Path, regime: &str, seed: u64) -> Result<()> {
        for (name, t) in &self.tensors {
            write_tensor(dir, name, t)?;
        }
        let manifest = CheckpointManifest {
            kind: "model".into(),
            config: self.config.clone(),
            frozen: self.frozen.clone(),
            regime: regime.to_string(),
            seed,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointManifest)> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        manifest.config.validate()?;
        let mut params = ModelParams {
            config: manifest.config.clone(),
            tensors: BTreeMap::new(),
            frozen: manifest.frozen.clone(),
        };
        for name in PARAM_NAMES {
            params.tensors.insert(name.to_string(), read_tensor(dir, name)?);
        }
        Ok((params, manifest))
    }
}

impl ParamAccess for ModelParams {
    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        if self.is_frozen(name) {
            return None;
        }
        self.tensors.get_mut(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: String,
    pub config: ModelConfig,
    pub frozen: BTreeMap<String, bool>,
    pub regime: String,
    pub seed: u64,
}

/// A padded batch laid out as `batch × seq_len` rows.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub lengths: Vec<usize>,
    pub seq_len: usize,
    pub targets: Vec<Option<usize>>,
}

impl Batch {
    pub fn new(seqs: &[&LabeledSequence], config: &ModelConfig) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let seq_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut batch = Batch {
            ids: Vec::with_capacity(seqs.len() * seq_len),
            positions: Vec::with_capacity(seqs.len() * seq_len),
            lengths: Vec::with_capacity(seqs.len()),
            seq_len,
            targets: Vec::with_capacity(seqs.len() * seq_len),
        };
        for (i, s) in seqs.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidInput(format!("sequence {i} is empty")));
            }
            if s.len() > config.max_seq_len {
                return Err(Error::InvalidInput(format!(
                    "sequence {i} has {} tokens, max_seq_len is {}",
                    s.len(),
                    config.max_seq_len
                )));
            }
            if s.labels.len() != s.tokens.len() {
                return Err(Error::InvalidInput(format!(
                    "sequence {i}: token/label length mismatch"
                )));
            }
            if let Some(&t) = s.tokens.iter().find(|&&t| t >= config.vocab_size) {
                return Err(Error::InvalidInput(format!(
                    "sequence {i}: token id {t} ≥ vocab_size {}",
                    config.vocab_size
                )));
            }
            if let Some(&l) = s.labels.iter().find(|&&l| l >= config.num_labels) {
                return Err(Error::InvalidInput(format!(
                    "sequence {i}: label id {l} ≥ num_labels {}",
                    config.num_labels
                )));
            }
            batch.lengths.push(s.len());
            for p in 0..seq_len {
                batch.positions.push(p);
                if p < s.len() {
                    batch.ids.push(s.tokens[p]);
                    batch.targets.push(Some(s.labels[p]));
                } else {
                    batch.ids.push(PAD_ID);
                    batch.targets.push(None);
                }
            }
        }
        Ok(batch)
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }
}

/// Dropout randomness for a training-mode forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// Records the forward pass on `tape` and returns the `(batch·seq_len)×labels`
/// logits. Model tensors are trainable unless frozen; adapter tensors always
/// are. A head inside `adapters` replaces the model's classifier.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    adapters: Option<&AdapterSet>,
    batch: &Batch,
    mut mode: Mode<'_>,
) -> Result<Var> {
    let cfg = &params.config;
    let d = cfg.hidden_dim;
    let rows = batch.ids.len();
    let model_param = |tape: &mut Tape, name: &str| -> Result<Var> {
        Ok(tape.param(name, params.get(name)?, !params.is_frozen(name)))
    };
    let e = model_param(tape, "E")?;
    let p = model_param(tape, "P")?;
    let wq = model_param(tape, "W_Q")?;
    let wk = model_param(tape, "W_K")?;
    let wv = model_param(tape, "W_V")?;
    let wo = model_param(tape, "W_O")?;
    let w1 = model_param(tape, "W_1")?;
    let w2 = model_param(tape, "W_2")?;
    let (wc, bc) = match adapters.and_then(AdapterSet::head) {
        Some(head) => (
            tape.param(crate::lora::HEAD_WEIGHT, &head.weight, true),
            tape.param(crate::lora::HEAD_BIAS, &head.bias, true),
        ),
        None => (model_param(tape, "W_C")?, model_param(tape, "b_C")?),
    };

    let tok = tape.gather(e, &batch.ids)?;
    let pos = tape.gather(p, &batch.positions)?;
    let h0 = tape.add(tok, pos)?;

    let project = |tape: &mut Tape, w: Var, target: &str, mode: &mut Mode<'_>| -> Result<Var> {
        let Some(adapter) = adapters.and_then(|s| s.get(target)) else {
            return tape.matmul_bt(h0, w);
        };
        let a = tape.param(&adapter.a_name(), adapter.a(), true);
        let b = tape.param(&adapter.b_name(), adapter.b(), true);
        let mask = match mode {
            Mode::Train(rng) => Some(dropout_mask(rng, rows * d, adapter.dropout())),
            Mode::Eval => None,
        };
        adapted_projection(tape, h0, w, Some((a, b, adapter.scaling(), mask)))
    };
    let q = project(tape, wq, "W_Q", &mut mode)?;
    let k = project(tape, wk, "W_K", &mut mode)?;
    let v = project(tape, wv, "W_V", &mut mode)?;

    let att = tape.attention(q, k, v, &batch.lengths, batch.seq_len)?;
    let mut o = tape.matmul_bt(att, wo)?;
    if let Mode::Train(rng) = &mut mode {
        o = tape.dropout(o, dropout_mask(rng, rows * d, cfg.dropout_rate))?;
    }
    let h1 = tape.add(h0, o)?;
    let f = tape.matmul(h1, w1)?;
    let f = tape.gelu(f)?;
    let mut f = tape.matmul(f, w2)?;
    if let Mode::Train(rng) = &mut mode {
        f = tape.dropout(f, dropout_mask(rng, rows * d, cfg.dropout_rate))?;
    }
    let h2 = tape.add(h1, f)?;
    let z = tape.matmul(h2, wc)?;
    tape.add_row(z, bc)
}

/// Per-token logits with shape `[batch, seq_len, num_labels]`.
pub fn forward(
    params: &ModelParams,
    adapters: Option<&AdapterSet>,
    batch: &[&LabeledSequence],
    mode: Mode<'_>,
) -> Result<Tensor> {
    let b = Batch::new(batch, &params.config)?;
    let mut tape = Tape::new();
    let logits = forward_on_tape(&mut tape, params, adapters, &b, mode)?;
    let flat = tape.value(logits)?.clone();
    flat.reshape(vec![b.batch_size(), b.seq_len, params.config.num_labels])
}

/// Mean token-level cross-entropy over the non-pad positions of `batch`.
pub fn loss(logits: &Tensor, batch: &[&LabeledSequence]) -> Result<f64> {
    let (b, s, c) = match logits.shape() {
        [b, s, c] => (*b, *s, *c),
        other => {
            return Err(Error::InvalidInput(format!(
                "logits must be [batch, seq, labels], got {other:?}"
            )))
        }
    };
    if b != batch.len() || batch.iter().any(|x| x.len() > s) {
        return Err(Error::ShapeMismatch {
            op: "loss",
            left: logits.shape().to_vec(),
            right: vec![batch.len(), batch.iter().map(|x| x.len()).max().unwrap_or(0)],
        });
    }
    let mut targets = Vec::with_capacity(b * s);
    for seq in batch {
        for p in 0..s {
            targets.push(seq.labels.get(p).copied());
        }
    }
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone().reshape(vec![b * s, c])?);
    let out = tape.softmax_xent(l, &targets)?;
    Ok(tape.value(out)?.data()[0])
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted label ids for every real position of every sequence.
pub fn predict(
    params: &ModelParams,
    adapters: Option<&AdapterSet>,
    batch: &[&LabeledSequence],
) -> Result<Vec<Vec<usize>>> {
    let logits = forward(params, adapters, batch, Mode::Eval)?;
    let (s, c) = (logits.shape()[1], logits.shape()[2]);
    let data = logits.data();
    Ok(batch
        .iter()
        .enumerate()
        .map(|(b, seq)| {
            (0..seq.len())
                .map(|p| argmax(&data[(b * s + p) * c..(b * s + p + 1) * c]))
                .collect()
        })
        .collect())
}

/// Predictions over a whole split, evaluated in fixed-size chunks.
pub fn predict_all(
    params: &ModelParams,
    adapters: Option<&AdapterSet>,
    seqs: &[LabeledSequence],
    chunk: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(seqs.len());
    for part in seqs.chunks(chunk.max(1)) {
        let refs: Vec<&LabeledSequence> = part.iter().collect();
        out.extend(predict(params, adapters, &refs)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// Base-model scalars that receive gradients.
    pub base: usize,
    /// LoRA factor scalars.
    pub adapter: usize,
    /// Scalars of a trainable replacement head.
    pub head: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.base + self.adapter + self.head
    }
}

/// Trainable scalars for one model (or one adapter set) under `regime`.
/// LoRA regimes, and any run carrying adapters, freeze the whole base.
pub fn count_trainable(params: &ModelParams, adapters: Option<&AdapterSet>, regime: Regime) -> ParamCount {
    match adapters {
        Some(set) => ParamCount {
            base: 0,
            adapter: set.adapter_numel(),
            head: set.head_numel(),
        },
        None if regime.uses_lora() => ParamCount::default(),
        None => ParamCount {
            base: params.numel(),
            ..ParamCount::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            hidden_dim: 8,
            max_seq_len: 6,
            num_labels: 3,
            dropout_rate: 0.1,
        }
    }

    fn seq(tokens: &[usize], labels: &[usize]) -> LabeledSequence {
        LabeledSequence::new(tokens.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn logits_shape() {
        let params = ModelParams::init(&tiny_config(), &mut Rng::new(1)).unwrap();
        let a = seq(&[1, 2, 3], &[0, 1, 2]);
        let b = seq(&[4, 5], &[0, 0]);
        let logits = forward(&params, None, &[&a, &b], Mode::Eval).unwrap();
        assert_eq!(logits.shape(), &[2, 3, 3]);
    }

    #[test]
    fn rejects_bad_tokens_and_empty_sequences() {
        let params = ModelParams::init(&tiny_config(), &mut Rng::new(1)).unwrap();
        let bad = seq(&[1, 12], &[0, 0]);
        assert!(forward(&params, None, &[&bad], Mode::Eval).is_err());
        let empty = seq(&[], &[]);
        assert!(forward(&params, None, &[&empty], Mode::Eval).is_err());
        let long = seq(&[1; 7], &[0; 7]);
        assert!(forward(&params, None, &[&long], Mode::Eval).is_err());
    }

    #[test]
    fn equal_classifier_columns_give_uniform_logits() {
        let mut params = ModelParams::init(&tiny_config(), &mut Rng::new(2)).unwrap();
        let col: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let wc = Tensor::from_fn(&[8, 3], |idx| col[idx / 3]);
        params.set("W_C", wc).unwrap();
        let s = seq(&[5], &[0]);
        let logits = forward(&params, None, &[&s], Mode::Eval).unwrap();
        let row = logits.data();
        assert_eq!(row[0], row[1]);
        assert_eq!(row[1], row[2]);
    }

    #[test]
    fn loss_cases() {
        let s = seq(&[1, 2], &[0, 2]);
        // Large margin on the correct class.
        let mut data = vec![0.0; 6];
        data[0] = 20.0;
        data[5] = 20.0;
        let logits = Tensor::new(vec![1, 2, 3], data).unwrap();
        assert!(loss(&logits, &[&s]).unwrap() < 1e-3);

        let uniform = Tensor::filled(&[1, 2, 3], 0.4);
        assert!((loss(&uniform, &[&s]).unwrap() - 3f64.ln()).abs() < 1e-12);

        // Hand computation: token 0 logits (1, 0, 0) target 0; token 1 logits (0, 2, 1) target 2.
        let logits = Tensor::new(vec![1, 2, 3], vec![1.0, 0.0, 0.0, 0.0, 2.0, 1.0]).unwrap();
        let ce0 = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        let ce1 = -(1f64.exp() / (1.0 + 2f64.exp() + 1f64.exp())).ln();
        assert!((loss(&logits, &[&s]).unwrap() - (ce0 + ce1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn frozen_params_are_not_mutable() {
        let mut params = ModelParams::init(&tiny_config(), &mut Rng::new(3)).unwrap();
        assert!(params.param_mut("W_Q").is_some());
        params.freeze_all();
        assert!(params.param_mut("W_Q").is_none());
        assert!(params.all_frozen());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut params = ModelParams::init(&tiny_config(), &mut Rng::new(4)).unwrap();
        params.set_frozen("E", true).unwrap();
        params.save(dir.path(), "VANILLA", 4).unwrap();
        let (back, manifest) = ModelParams::load(dir.path()).unwrap();
        assert_eq!(back, params);
        assert_eq!(back.fingerprint(), params.fingerprint());
        assert_eq!(manifest.regime, "VANILLA");
    }
}
