use std::path::Path;

use polyforget_core::model::ModelConfig;
use polyforget_core::regimes::{
    train_mono, train_multi, train_nonshared_lora, train_shared_lora, train_vanilla, LanguageOrder, LoraSettings,
    Regime, RegimeConfig,
};
use polyforget_core::tasks::{generate_language, GeneratorConfig, LanguageSpec, SplitSizes, TaskDataset, Vitality};

fn datasets(n: usize) -> (Vec<TaskDataset>, ModelConfig) {
    let gen = GeneratorConfig::default();
    let sizes = SplitSizes {
        train: 24,
        valid: 8,
        test: 8,
    };
    let data: Vec<TaskDataset> = (0..n)
        .map(|i| {
            let spec = LanguageSpec {
                lang_id: format!("l{i}"),
                script_id: i,
                family_id: i / 2,
                vitality: Vitality::Mid,
                overlap: 0.3,
                seed: 100 + i as u64,
            };
            generate_language(&spec, sizes, &gen).unwrap()
        })
        .collect();
    let model = ModelConfig {
        vocab_size: gen.layout().vocab_size(),
        hidden_dim: 8,
        max_seq_len: gen.max_len,
        num_labels: data[0].num_labels(),
        dropout_rate: 0.1,
    };
    (data, model)
}

fn config(regime: Regime) -> RegimeConfig {
    let mut c = RegimeConfig::defaults(regime, 7);
    c.max_epochs = 3;
    c.patience = 2;
    c.batch_size = 8;
    c.learning_rate = if regime.uses_lora() { 1e-2 } else { 1e-3 };
    c
}

fn order(langs: &[&str]) -> LanguageOrder {
    LanguageOrder::new(0, langs.iter().map(|s| s.to_string()).collect())
}

#[test]
fn mono_equals_vanilla_on_one_language() {
    let (data, model) = datasets(1);
    let (mono, mono_fit) = train_mono(&data[0], &model, &config(Regime::Mono)).unwrap();
    let van = train_vanilla(&data, &order(&["l0"]), &model, &config(Regime::Vanilla)).unwrap();
    assert_eq!(mono.fingerprint(), van.params.fingerprint());
    assert_eq!(mono_fit.valid_f1, van.log.records[0].valid_f1);
}

#[test]
fn multi_on_one_language_equals_mono() {
    let (data, model) = datasets(1);
    let (mono, _) = train_mono(&data[0], &model, &config(Regime::Mono)).unwrap();
    let multi = train_multi(&data, &model, &config(Regime::Multi)).unwrap();
    assert_eq!(mono.fingerprint(), multi.params.fingerprint());
}

#[test]
fn shared_equals_nonshared_on_one_language() {
    let (data, model) = datasets(1);
    let shared = train_shared_lora(&data, &order(&["l0"]), &model, &config(Regime::SharedLora)).unwrap();
    let non = train_nonshared_lora(&data, &model, &config(Regime::NonSharedLora), 1).unwrap();
    assert_eq!(shared.adapters.as_ref().unwrap(), &non.sets["l0"]);
    assert_eq!(shared.log.records[0].test_f1, non.log.records[0].test_f1);
    assert_eq!(shared.log.records[0].valid_f1, non.log.records[0].valid_f1);
}

#[test]
fn nonshared_ignores_order_and_thread_count() {
    let (data, model) = datasets(3);
    let cfg = config(Regime::NonSharedLora);
    let a = train_nonshared_lora(&data, &model, &cfg, 1).unwrap();
    let reversed: Vec<TaskDataset> = data.iter().rev().cloned().collect();
    let b = train_nonshared_lora(&reversed, &model, &cfg, 3).unwrap();
    assert_eq!(a.sets, b.sets);
    for r in &a.log.records {
        let other = b.log.records.iter().find(|o| o.lang == r.lang).unwrap();
        assert_eq!(r.test_f1, other.test_f1);
    }
}

fn tensor_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn frozen_base_is_identical_across_lora_regimes() {
    let (data, model) = datasets(2);
    let shared = train_shared_lora(&data, &order(&["l1", "l0"]), &model, &config(Regime::SharedLora)).unwrap();
    let non = train_nonshared_lora(&data, &model, &config(Regime::NonSharedLora), 2).unwrap();
    assert_eq!(shared.base_fingerprint_before, shared.base_fingerprint_after);
    assert_eq!(non.base_fingerprint_before, non.base_fingerprint_after);
    assert_eq!(shared.base_fingerprint_after, non.base_fingerprint_after);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    shared.params.save(&a, "shared-lora", 7).unwrap();
    non.base.save(&b, "non-shared-lora", 7).unwrap();
    let fa = tensor_files(&a);
    assert!(!fa.is_empty());
    assert_eq!(fa, tensor_files(&b));
}

#[test]
fn lora_settings_are_honoured() {
    let (data, model) = datasets(1);
    let mut cfg = config(Regime::SharedLora);
    cfg.lora = Some(LoraSettings::with_rank(2));
    let out = train_shared_lora(&data, &order(&["l0"]), &model, &cfg).unwrap();
    assert!(out.adapters.unwrap().adapters().all(|a| a.rank() == 2));
}

#[test]
fn training_is_repeatable() {
    let (data, model) = datasets(2);
    let cfg = config(Regime::Vanilla);
    let a = train_vanilla(&data, &order(&["l0", "l1"]), &model, &cfg).unwrap();
    let b = train_vanilla(&data, &order(&["l0", "l1"]), &model, &cfg).unwrap();
    assert_eq!(a.log.to_jsonl().unwrap(), b.log.to_jsonl().unwrap());
    assert_eq!(a.params.fingerprint(), b.params.fingerprint());
}
