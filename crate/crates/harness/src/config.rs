//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so an empty file describes the desk experiment:
//! six synthetic languages in three families, token overlap 0.2, five
//! shuffled orders and all five regimes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use polyforget_core::regimes::{LoraSettings, Regime, RegimeConfig};
use polyforget_core::tasks::{GeneratorConfig, LanguageSpec, SplitSizes, Vitality};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run `k` uses seed `seed + k`.
    pub seed: u64,
    pub num_orders: usize,
    pub max_hop: usize,
    pub workers: usize,
    pub regimes: Vec<Regime>,
    pub model: ModelSection,
    pub data: DataSection,
    pub orders: OrdersSection,
    pub full: TrainingSection,
    pub lora: LoraSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_orders: 5,
            max_hop: 9,
            workers: 1,
            regimes: Regime::ALL.to_vec(),
            model: ModelSection::default(),
            data: DataSection::default(),
            orders: OrdersSection::default(),
            full: TrainingSection::default(),
            lora: LoraSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// MASSIVE-style JSON-lines file; replaces the synthetic languages.
    pub massive: Option<PathBuf>,
    /// Token cap for ingested utterances.
    pub max_len: usize,
    /// Vitality per locale for ingested data.
    pub vitality: BTreeMap<String, Vitality>,
    /// Explicit synthetic languages; when empty they come from `synthetic`.
    pub languages: Vec<LanguageSpec>,
    pub synthetic: SyntheticSection,
    pub sizes: SplitSizes,
    pub generator: GeneratorConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            massive: None,
            max_len: 16,
            vitality: BTreeMap::new(),
            languages: Vec::new(),
            synthetic: SyntheticSection::default(),
            sizes: SplitSizes::default(),
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_languages: usize,
    pub overlap: f64,
    /// Family of language `i` is `families[i % len]`.
    pub families: Vec<usize>,
    /// Cycled like `families`.
    pub vitality: Vec<Vitality>,
    /// Language `i` is generated from `seed + i`.
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            num_languages: 6,
            overlap: 0.2,
            families: vec![0, 0, 1, 1, 2, 2],
            vitality: vec![Vitality::Mid],
            seed: 100,
        }
    }
}

impl SyntheticSection {
    pub fn specs(&self) -> Vec<LanguageSpec> {
        (0..self.num_languages)
            .map(|i| LanguageSpec {
                lang_id: format!("L{i}"),
                script_id: i,
                family_id: self.families[i % self.families.len()],
                vitality: self.vitality[i % self.vitality.len()],
                overlap: self.overlap,
                seed: self.seed + i as u64,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Shuffled,
    ResourceRanked,
    DestructiveLast,
    /// Orders listed in `explicit`.
    Explicit,
    /// The five bundled 52-locale orders, for MASSIVE data.
    Bundled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrdersSection {
    pub policy: PolicyKind,
    /// Shuffle seed; the experiment seed when absent.
    pub seed: Option<u64>,
    pub destructive: Vec<String>,
    pub explicit: Vec<Vec<String>>,
}

impl Default for OrdersSection {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Shuffled,
            seed: None,
            destructive: Vec::new(),
            explicit: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub reset_optimizer_per_task: bool,
    pub reinit_head_per_task: bool,
    pub eval_every_epoch: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 30,
            patience: 5,
            batch_size: 16,
            reset_optimizer_per_task: true,
            reinit_head_per_task: false,
            eval_every_epoch: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraSection {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub reset_optimizer_per_task: bool,
    pub reinit_head_per_task: bool,
    pub eval_every_epoch: bool,
    pub rank: usize,
    /// Defaults to the rank.
    pub alpha: Option<f64>,
    pub dropout: f64,
    pub train_head: bool,
    /// Ranks listed in the parameter report, besides the trained rank.
    pub ranks: Vec<usize>,
}

impl Default for LoraSection {
    fn default() -> Self {
        let t = TrainingSection::default();
        Self {
            learning_rate: 2e-2,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            reset_optimizer_per_task: t.reset_optimizer_per_task,
            reinit_head_per_task: t.reinit_head_per_task,
            eval_every_epoch: t.eval_every_epoch,
            rank: 4,
            alpha: None,
            dropout: 0.1,
            train_head: true,
            ranks: vec![2, 4, 8],
        }
    }
}

impl LoraSection {
    pub fn training(&self) -> TrainingSection {
        TrainingSection {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            reset_optimizer_per_task: self.reset_optimizer_per_task,
            reinit_head_per_task: self.reinit_head_per_task,
            eval_every_epoch: self.eval_every_epoch,
        }
    }

    pub fn settings(&self, rank: usize) -> LoraSettings {
        LoraSettings {
            rank,
            alpha: self.alpha.unwrap_or(rank as f64),
            dropout: self.dropout,
            train_head: self.train_head,
        }
    }

    pub fn report_ranks(&self) -> Vec<usize> {
        let mut r = self.ranks.clone();
        r.push(self.rank);
        r.sort_unstable();
        r.dedup();
        r
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| HarnessError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|message| HarnessError::Config {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    /// `None` gives the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.num_orders == 0 {
            return Err("num_orders must be ≥ 1".into());
        }
        if self.regimes.is_empty() {
            return Err("at least one regime is required".into());
        }
        let syn = &self.data.synthetic;
        if syn.families.is_empty() || syn.vitality.is_empty() {
            return Err("synthetic.families and synthetic.vitality must be non-empty".into());
        }
        if self.lora.report_ranks().contains(&0) {
            return Err("LoRA ranks must be positive".into());
        }
        for r in &self.regimes {
            self.regime_config(*r, self.seed)
                .validate()
                .map_err(|e| e.to_string())?;
        }
        self.data.generator.validate().map_err(|e| e.to_string())
    }

    /// Training settings of one regime for one seed.
    pub fn regime_config(&self, regime: Regime, seed: u64) -> RegimeConfig {
        let t = if regime.uses_lora() {
            self.lora.training()
        } else {
            self.full.clone()
        };
        RegimeConfig {
            regime,
            learning_rate: t.learning_rate,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            lora: regime.uses_lora().then(|| self.lora.settings(self.lora.rank)),
            seed,
            reset_optimizer_per_task: t.reset_optimizer_per_task,
            reinit_head_per_task: t.reinit_head_per_task,
            eval_every_epoch: t.eval_every_epoch,
        }
    }

    pub fn run_seed(&self, order_index: usize) -> u64 {
        self.seed + order_index as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_desk_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.num_orders, 5);
        assert_eq!(cfg.max_hop, 9);
        assert!(cfg.validate().is_ok());
        let lora = cfg.regime_config(Regime::SharedLora, 3);
        assert_eq!(lora.lora.unwrap().alpha, 4.0);
        assert_eq!(lora.learning_rate, 2e-2);
        assert_eq!(cfg.regime_config(Regime::Mono, 3).lora, None);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.regimes = vec![Regime::Vanilla, Regime::NonSharedLora];
        cfg.orders.policy = PolicyKind::DestructiveLast;
        cfg.orders.destructive = vec!["L5".into()];
        cfg.lora.ranks = vec![2, 4, 8];
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
        let cfg: ExperimentConfig = toml::from_str("num_orders = 0").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: ExperimentConfig = toml::from_str("[full]\npatience = 40").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn synthetic_specs_cycle_families() {
        let s = SyntheticSection {
            num_languages: 5,
            families: vec![0, 1],
            ..SyntheticSection::default()
        };
        let fams: Vec<usize> = s.specs().iter().map(|l| l.family_id).collect();
        assert_eq!(fams, [0, 1, 0, 1, 0]);
    }
}
