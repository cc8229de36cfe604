//! Low-rank adapters.
//!
//! An adapter attached to a frozen matrix `W0: d×k` holds `A: r×k` and
//! `B: d×r`; the adapted map is `h = W0·x + (α/r)·B·(A·x)`. `B` starts at zero
//! so a fresh adapter leaves the base function untouched, and
//! [`merge`] folds the update back into a dense matrix for inference.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::io::{read_tensor, write_tensor};
use crate::numeric::{dropout_mask, ParamAccess, Rng, Tape, Tensor, Var};

/// Standard deviation of the Gaussian used for `A` at initialization.
pub const A_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    target: String,
    a: Tensor,
    b: Tensor,
    rank: usize,
    alpha: f64,
    dropout: f64,
}

impl LoraAdapter {
    pub fn new(target: impl Into<String>, a: Tensor, b: Tensor, alpha: f64, dropout: f64) -> Result<Self> {
        let target = target.into();
        let (r, k) = match a.shape() {
            [r, k] => (*r, *k),
            s => return Err(Error::InvalidConfig(format!("adapter A must be 2-D, got {s:?}"))),
        };
        let (d, r2) = match b.shape() {
            [d, r2] => (*d, *r2),
            s => return Err(Error::InvalidConfig(format!("adapter B must be 2-D, got {s:?}"))),
        };
        if r != r2 {
            return Err(Error::ShapeMismatch {
                op: "lora_adapter",
                left: b.shape().to_vec(),
                right: a.shape().to_vec(),
            });
        }
        check_rank(r, d, k)?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidConfig(format!(
                "adapter dropout must be in [0,1), got {dropout}"
            )));
        }
        Ok(Self {
            target,
            a,
            b,
            rank: r,
            alpha,
            dropout,
        })
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    /// `α / r`.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Output dimension `d`.
    pub fn out_dim(&self) -> usize {
        self.b.shape()[0]
    }

    /// Input dimension `k`.
    pub fn in_dim(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn numel(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha;
    }

    pub fn a_mut(&mut self) -> &mut Tensor {
        &mut self.a
    }

    pub fn b_mut(&mut self) -> &mut Tensor {
        &mut self.b
    }

    pub fn a_name(&self) -> String {
        format!("lora.{}.A", self.target)
    }

    pub fn b_name(&self) -> String {
        format!("lora.{}.B", self.target)
    }
}

fn check_rank(r: usize, d: usize, k: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::InvalidConfig("adapter rank must be at least 1".into()));
    }
    if r > d.min(k) {
        return Err(Error::InvalidConfig(format!(
            "adapter rank {r} exceeds min(d, k) = {} for a {d}×{k} target",
            d.min(k)
        )));
    }
    Ok(())
}

/// `ΔW = B·A`, without the `α/r` factor.
pub fn lora_delta(adapter: &LoraAdapter) -> Result<Tensor> {
    adapter.b.matmul(&adapter.a)
}

fn check_target(w0: &Tensor, adapter: &LoraAdapter) -> Result<()> {
    if w0.shape() != [adapter.out_dim(), adapter.in_dim()] {
        return Err(Error::ShapeMismatch {
            op: "lora",
            left: w0.shape().to_vec(),
            right: vec![adapter.out_dim(), adapter.in_dim()],
        });
    }
    Ok(())
}

/// `h = W0·x + (α/r)·B·A·x'` where `x'` is `x` after adapter dropout when
/// `train_rng` is given and `x` otherwise.
pub fn lora_forward(w0: &Tensor, adapter: &LoraAdapter, x: &Tensor, train_rng: Option<&mut Rng>) -> Result<Tensor> {
    check_target(w0, adapter)?;
    if x.len() != adapter.in_dim() {
        return Err(Error::ShapeMismatch {
            op: "lora_forward",
            left: w0.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone().reshape(vec![1, adapter.in_dim()])?);
    let wv = tape.constant(w0.clone());
    let av = tape.constant(adapter.a.clone());
    let bv = tape.constant(adapter.b.clone());
    let mask = train_rng.map(|rng| dropout_mask(rng, adapter.in_dim(), adapter.dropout));
    let h = adapted_projection(&mut tape, xv, wv, Some((av, bv, adapter.scaling(), mask)))?;
    tape.value(h)?.clone().reshape(vec![adapter.out_dim()])
}

/// `W' = W0 + (α/r)·B·A`.
pub fn merge(w0: &Tensor, adapter: &LoraAdapter) -> Result<Tensor> {
    check_target(w0, adapter)?;
    w0.add(&lora_delta(adapter)?.scale(adapter.scaling()))
}

/// Fresh adapter for a `d×k` target: `A ~ N(0, 0.02²)`, `B = 0`.
pub fn init_adapter(
    rng: &mut Rng,
    target: &str,
    d: usize,
    k: usize,
    rank: usize,
    alpha: f64,
    dropout: f64,
) -> Result<LoraAdapter> {
    check_rank(rank, d, k)?;
    let a = Tensor::from_fn(&[rank, k], |_| rng.normal(0.0, A_INIT_STD));
    LoraAdapter::new(target, a, Tensor::zeros(&[d, rank]), alpha, dropout)
}

/// Row-convention projection on a tape: `x·W0ᵀ`, plus `s·(x'·Aᵀ)·Bᵀ` when an
/// adapter `(A, B, s, dropout mask)` is supplied. `x` is `n×k` and the mask,
/// if any, covers all of `x`.
pub(crate) fn adapted_projection(
    tape: &mut Tape,
    x: Var,
    w0: Var,
    adapter: Option<(Var, Var, f64, Option<Vec<f64>>)>,
) -> Result<Var> {
    let base = tape.matmul_bt(x, w0)?;
    let Some((a, b, scaling, mask)) = adapter else {
        return Ok(base);
    };
    let input = match mask {
        Some(mask) => tape.dropout(x, mask)?,
        None => x,
    };
    let down = tape.matmul_bt(input, a)?;
    let up = tape.matmul_bt(down, b)?;
    let scaled = tape.scale(up, scaling)?;
    tape.add(base, scaled)
}

/// Replacement classification head carried by an adapter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weight: Tensor,
    pub bias: Tensor,
}

pub const HEAD_WEIGHT: &str = "head.W_C";
pub const HEAD_BIAS: &str = "head.b_C";

/// The adapters φ used for one task (or shared by all tasks), optionally with
/// its own trainable classification head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterSet {
    adapters: BTreeMap<String, LoraAdapter>,
    head: Option<Head>,
}

/// Matrices adapted by default.
pub const DEFAULT_TARGETS: [&str; 2] = ["W_Q", "W_V"];

impl AdapterSet {
    pub fn new(adapters: Vec<LoraAdapter>, head: Option<Head>) -> Self {
        Self {
            adapters: adapters.into_iter().map(|a| (a.target.clone(), a)).collect(),
            head,
        }
    }

    /// One adapter per target with `B = 0`; the head, when requested, starts as
    /// a copy of the model's classifier.
    pub fn init(
        rng: &mut Rng,
        model: &ModelParams,
        targets: &[&str],
        rank: usize,
        alpha: f64,
        dropout: f64,
        with_head: bool,
    ) -> Result<Self> {
        let mut adapters = Vec::with_capacity(targets.len());
        for &target in targets {
            let w = model.get(target)?;
            let (d, k) = match w.shape() {
                [d, k] => (*d, *k),
                s => {
                    return Err(Error::InvalidConfig(format!(
                        "target `{target}` is not a matrix ({s:?})"
                    )))
                }
            };
            adapters.push(init_adapter(rng, target, d, k, rank, alpha, dropout)?);
        }
        let head = if with_head {
            Some(Head {
                weight: model.get("W_C")?.clone(),
                bias: model.get("b_C")?.clone(),
            })
        } else {
            None
        };
        Ok(Self::new(adapters, head))
    }

    pub fn get(&self, target: &str) -> Option<&LoraAdapter> {
        self.adapters.get(target)
    }

    pub fn adapters(&self) -> impl Iterator<Item = &LoraAdapter> {
        self.adapters.values()
    }

    pub fn head(&self) -> Option<&Head> {
        self.head.as_ref()
    }

    pub fn adapter_numel(&self) -> usize {
        self.adapters.values().map(LoraAdapter::numel).sum()
    }

    pub fn head_numel(&self) -> usize {
        self.head.as_ref().map_or(0, |h| h.weight.len() + h.bias.len())
    }

    /// Names and shapes of every trainable tensor in the set.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for a in self.adapters.values() {
            out.push((a.a_name(), a.a.shape().to_vec()));
            out.push((a.b_name(), a.b.shape().to_vec()));
        }
        if let Some(h) = &self.head {
            out.push((HEAD_WEIGHT.to_string(), h.weight.shape().to_vec()));
            out.push((HEAD_BIAS.to_string(), h.bias.shape().to_vec()));
        }
        out
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for a in self.adapters.values() {
            out.push((a.a_name(), &a.a));
            out.push((a.b_name(), &a.b));
        }
        if let Some(h) = &self.head {
            out.push((HEAD_WEIGHT.to_string(), &h.weight));
            out.push((HEAD_BIAS.to_string(), &h.bias));
        }
        out
    }

    pub fn save(&self, dir: &Path, task: Option<&str>) -> Result<()> {
        for (name, t) in self.tensors() {
            write_tensor(dir, &name, t)?;
        }
        let manifest = AdapterManifest {
            kind: "adapter_set".into(),
            task: task.map(str::to_string),
            adapters: self
                .adapters
                .values()
                .map(|a| AdapterEntry {
                    target: a.target.clone(),
                    rank: a.rank,
                    alpha: a.alpha,
                    dropout: a.dropout,
                })
                .collect(),
            head: self.head.is_some(),
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, Option<String>)> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: AdapterManifest = serde_json::from_str(&text)?;
        let mut adapters = Vec::new();
        for e in &manifest.adapters {
            let a = read_tensor(dir, &format!("lora.{}.A", e.target))?;
            let b = read_tensor(dir, &format!("lora.{}.B", e.target))?;
            adapters.push(LoraAdapter::new(e.target.clone(), a, b, e.alpha, e.dropout)?);
        }
        let head = if manifest.head {
            Some(Head {
                weight: read_tensor(dir, HEAD_WEIGHT)?,
                bias: read_tensor(dir, HEAD_BIAS)?,
            })
        } else {
            None
        };
        Ok((Self::new(adapters, head), manifest.task))
    }
}

impl ParamAccess for AdapterSet {
    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        if let Some(h) = &mut self.head {
            if name == HEAD_WEIGHT {
                return Some(&mut h.weight);
            }
            if name == HEAD_BIAS {
                return Some(&mut h.bias);
            }
        }
        let rest = name.strip_prefix("lora.")?;
        let (target, which) = rest.rsplit_once('.')?;
        let adapter = self.adapters.get_mut(target)?;
        match which {
            "A" => Some(&mut adapter.a),
            "B" => Some(&mut adapter.b),
            _ => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AdapterManifest {
    kind: String,
    task: Option<String>,
    adapters: Vec<AdapterEntry>,
    head: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdapterEntry {
    target: String,
    rank: usize,
    alpha: f64,
    dropout: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SharingMode {
    Shared,
    NonShared,
}

/// Task → adapter set. Shared mode holds one set answering for every task;
/// non-shared mode holds one set per task.
#[derive(Clone, Debug)]
pub struct AdapterRegistry {
    mode: SharingMode,
    tasks: Vec<String>,
    sets: BTreeMap<String, AdapterSet>,
}

const SHARED_KEY: &str = "*";

impl AdapterRegistry {
    pub fn shared(tasks: Vec<String>, set: AdapterSet) -> Self {
        Self {
            mode: SharingMode::Shared,
            tasks,
            sets: BTreeMap::from([(SHARED_KEY.to_string(), set)]),
        }
    }

    pub fn non_shared(sets: BTreeMap<String, AdapterSet>) -> Self {
        Self {
            mode: SharingMode::NonShared,
            tasks: sets.keys().cloned().collect(),
            sets,
        }
    }

    pub fn mode(&self) -> SharingMode {
        self.mode
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    /// Number of distinct adapter sets held.
    pub fn num_sets(&self) -> usize {
        self.sets.len()
    }

    pub fn get(&self, task: &str) -> Option<&AdapterSet> {
        if !self.tasks.iter().any(|t| t == task) {
            return None;
        }
        match self.mode {
            SharingMode::Shared => self.sets.get(SHARED_KEY),
            SharingMode::NonShared => self.sets.get(task),
        }
    }

    /// Trainable scalars summed over every distinct set.
    pub fn total_numel(&self) -> usize {
        self.sets.values().map(|s| s.adapter_numel() + s.head_numel()).sum()
    }
}
