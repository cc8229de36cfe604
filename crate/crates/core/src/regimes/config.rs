use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    Multi,
    Mono,
    Vanilla,
    SharedLora,
    NonSharedLora,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::Multi,
        Regime::Mono,
        Regime::Vanilla,
        Regime::SharedLora,
        Regime::NonSharedLora,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Multi => "MULTI",
            Regime::Mono => "MONO",
            Regime::Vanilla => "VANILLA",
            Regime::SharedLora => "SHARED_LORA",
            Regime::NonSharedLora => "NON_SHARED_LORA",
        }
    }

    /// Whether the base model is frozen behind LoRA adapters by definition.
    pub fn uses_lora(self) -> bool {
        matches!(self, Regime::SharedLora | Regime::NonSharedLora)
    }

    /// Whether languages are consumed one after another by a single learner.
    pub fn is_sequential(self) -> bool {
        matches!(self, Regime::Vanilla | Regime::SharedLora)
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown regime `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraSettings {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    /// Train a per-adapter-set copy of the classifier.
    pub train_head: bool,
}

impl LoraSettings {
    /// `α = r`, dropout 0.1, trainable head.
    pub fn with_rank(rank: usize) -> Self {
        Self {
            rank,
            alpha: rank as f64,
            dropout: 0.1,
            train_head: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub regime: Regime,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Required for the LoRA regimes, optional for MULTI, absent otherwise.
    pub lora: Option<LoraSettings>,
    pub seed: u64,
    /// Fresh Adam moments for every language of a sequential run.
    pub reset_optimizer_per_task: bool,
    /// Re-initialize the classifier before every language of a sequential run.
    pub reinit_head_per_task: bool,
    /// Evaluate test F1 on every language after each epoch (diagnostic only).
    pub eval_every_epoch: bool,
}

impl RegimeConfig {
    /// Published defaults: LoRA runs use lr 5e-6, 100 epochs and patience 15;
    /// full fine-tuning uses lr 5e-5, 50 epochs and patience 5.
    pub fn defaults(regime: Regime, seed: u64) -> Self {
        let lora = regime.uses_lora();
        Self {
            regime,
            learning_rate: if lora { 5e-6 } else { 5e-5 },
            max_epochs: if lora { 100 } else { 50 },
            patience: if lora { 15 } else { 5 },
            batch_size: 16,
            lora: lora.then(|| LoraSettings::with_rank(4)),
            seed,
            reset_optimizer_per_task: true,
            reinit_head_per_task: false,
            eval_every_epoch: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("{}: {m}", self.regime)));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive".into());
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad(format!("patience must be in 1..=max_epochs, got {}", self.patience));
        }
        match (&self.lora, self.regime) {
            (None, r) if r.uses_lora() => return bad("LoRA settings are required".into()),
            (Some(_), Regime::Mono | Regime::Vanilla) => return bad("LoRA settings are not allowed".into()),
            (Some(l), _) if (l.rank == 0 || l.alpha.is_nan() || l.alpha <= 0.0 || !(0.0..1.0).contains(&l.dropout)) => {
                return bad(format!("invalid LoRA settings {l:?}"));
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for r in Regime::ALL {
            RegimeConfig::defaults(r, 0).validate().unwrap();
        }
        let c = RegimeConfig::defaults(Regime::SharedLora, 0);
        assert_eq!((c.learning_rate, c.max_epochs, c.patience), (5e-6, 100, 15));
        let c = RegimeConfig::defaults(Regime::Vanilla, 0);
        assert_eq!((c.learning_rate, c.max_epochs, c.patience), (5e-5, 50, 5));
    }

    #[test]
    fn lora_presence_is_checked() {
        let mut c = RegimeConfig::defaults(Regime::SharedLora, 0);
        c.lora = None;
        assert!(c.validate().is_err());
        let mut c = RegimeConfig::defaults(Regime::Vanilla, 0);
        c.lora = Some(LoraSettings::with_rank(2));
        assert!(c.validate().is_err());
        let mut c = RegimeConfig::defaults(Regime::Mono, 0);
        c.patience = 51;
        assert!(c.validate().is_err());
    }

    #[test]
    fn regime_names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.as_str().parse::<Regime>().unwrap(), r);
        }
        assert_eq!("shared-lora".parse::<Regime>().unwrap(), Regime::SharedLora);
    }
}
