//! Datasets and model shape resolved from a configuration.

use std::collections::BTreeMap;

use polyforget_core::model::ModelConfig;
use polyforget_core::tasks::{generate_language, ingest_massive, LabelSchema, TaskDataset, Vitality, VocabLayout};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Workload {
    pub datasets: Vec<TaskDataset>,
    pub model: ModelConfig,
    pub schema: LabelSchema,
    /// Surface form of every token id.
    pub vocab: Vec<String>,
}

/// Per-language facts persisted next to sweep results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageInfo {
    pub lang_id: String,
    pub vitality: Vitality,
    pub train_size: usize,
}

impl Workload {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let data = &cfg.data;
        let (datasets, schema, vocab, max_len) = match &data.massive {
            Some(path) => {
                let corpus = ingest_massive(path, data.max_len, &data.vitality)?;
                let vocab = corpus.vocab.words().to_vec();
                (
                    corpus.datasets.into_values().collect(),
                    corpus.schema,
                    vocab,
                    data.max_len,
                )
            }
            None => {
                let specs = if data.languages.is_empty() {
                    data.synthetic.specs()
                } else {
                    data.languages.clone()
                };
                let datasets = specs
                    .iter()
                    .map(|s| generate_language(s, data.sizes, &data.generator))
                    .collect::<polyforget_core::Result<Vec<_>>>()?;
                let layout = data.generator.layout();
                let vocab = (0..layout.vocab_size()).map(VocabLayout::token_name).collect();
                (datasets, data.generator.schema()?, vocab, data.generator.max_len)
            }
        };
        let model = ModelConfig {
            vocab_size: vocab.len(),
            hidden_dim: cfg.model.hidden_dim,
            max_seq_len: max_len,
            num_labels: schema.num_labels(),
            dropout_rate: cfg.model.dropout,
        };
        model.validate()?;
        Ok(Self {
            datasets,
            model,
            schema,
            vocab,
        })
    }

    pub fn langs(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.lang_id().to_string()).collect()
    }

    pub fn languages(&self) -> Vec<LanguageInfo> {
        self.datasets
            .iter()
            .map(|d| LanguageInfo {
                lang_id: d.lang_id().to_string(),
                vitality: d.spec.vitality,
                train_size: d.train.len(),
            })
            .collect()
    }

    /// Resource weight used for ranking: train size times vitality weight.
    pub fn resource_weights(&self) -> Vec<(String, f64)> {
        self.datasets
            .iter()
            .map(|d| (d.lang_id().to_string(), d.train.len() as f64 * d.spec.vitality.weight()))
            .collect()
    }

    pub fn vitality(&self) -> BTreeMap<String, Vitality> {
        self.datasets
            .iter()
            .map(|d| (d.lang_id().to_string(), d.spec.vitality))
            .collect()
    }
}
