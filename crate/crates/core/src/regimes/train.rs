//! The training loop and the five regime drivers.
//!
//! Randomness is keyed so that equivalent computations coincide exactly:
//! the base model comes from the run seed alone, while shuffling, dropout and
//! adapter initialization are keyed by the language(s) being trained. A MONO
//! run on a language therefore matches the first step of any sequential run
//! that starts with it, and a one-language SHARED run matches the
//! NON-SHARED adapter for that language.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{EarlyStopper, LanguageOrder, LoraSettings, Regime, RegimeConfig, RunLog, StepRecord};
use crate::error::{Error, Result};
use crate::lora::{AdapterSet, DEFAULT_TARGETS, HEAD_BIAS, HEAD_WEIGHT};
use crate::metrics::f1;
use crate::model::{forward_on_tape, predict_all, Batch, LabeledSequence, Mode, ModelConfig, ModelParams};
use crate::numeric::{glorot_uniform, OptimizerState, ParamAccess, Rng, Tape, Tensor};
use crate::tasks::TaskDataset;

const EVAL_CHUNK: usize = 64;

/// Span F1 of the model (with optional adapters) on `seqs`.
pub fn evaluate(params: &ModelParams, adapters: Option<&AdapterSet>, seqs: &[LabeledSequence]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty split".into()));
    }
    let preds = predict_all(params, adapters, seqs, EVAL_CHUNK)?;
    let gold: Vec<Vec<usize>> = seqs.iter().map(|s| s.labels.clone()).collect();
    f1(&preds, &gold)
}

fn evaluate_all(
    params: &ModelParams,
    adapters: Option<&AdapterSet>,
    datasets: &[&TaskDataset],
) -> Result<BTreeMap<String, f64>> {
    datasets
        .iter()
        .map(|d| Ok((d.lang_id().to_string(), evaluate(params, adapters, &d.test)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub valid_f1: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub epochs: usize,
    pub early_stopped: bool,
    pub best_epoch: usize,
    pub epoch_test_f1: Vec<BTreeMap<String, f64>>,
}

fn check_datasets(datasets: &[&TaskDataset], model: &ModelConfig) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::InvalidInput("no datasets to train on".into()));
    }
    for d in datasets {
        if d.train.is_empty() || d.valid.is_empty() || d.test.is_empty() {
            return Err(Error::InvalidInput(format!("{}: empty dataset split", d.lang_id())));
        }
        if d.num_labels() != model.num_labels {
            return Err(Error::InvalidInput(format!(
                "{}: {} labels but the model has {}",
                d.lang_id(),
                d.num_labels(),
                model.num_labels
            )));
        }
        if let Some(t) = d.max_token().filter(|&t| t >= model.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "{}: token id {t} ≥ vocab_size {}",
                d.lang_id(),
                model.vocab_size
            )));
        }
    }
    Ok(())
}

/// Trains until early stopping or `max_epochs`, then restores the parameters
/// of the best validation epoch. With adapters, the base must be fully frozen
/// and only the adapter set is updated.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    params: &mut ModelParams,
    mut adapters: Option<&mut AdapterSet>,
    train: &[LabeledSequence],
    valid: &[LabeledSequence],
    cfg: &RegimeConfig,
    rng: &Rng,
    optimizer: &mut OptimizerState,
    eval_sets: &[&TaskDataset],
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidInput("empty train or validation split".into()));
    }
    let shapes = match adapters.as_deref() {
        Some(set) => {
            if !params.all_frozen() {
                return Err(Error::InvalidConfig("adapter training requires a frozen base".into()));
            }
            set.param_shapes()
        }
        None => params.trainable_shapes(),
    };
    if shapes.is_empty() {
        return Err(Error::InvalidConfig(
            "nothing to train: every parameter is frozen".into(),
        ));
    }
    for (name, shape) in &shapes {
        if !optimizer.is_registered(name) {
            optimizer.register(name, shape);
        }
    }

    let mut shuffle = rng.fork("shuffle");
    let mut dropout = rng.fork("dropout");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut out = FitOutcome {
        valid_f1: Vec::new(),
        train_loss: Vec::new(),
        epochs: 0,
        early_stopped: false,
        best_epoch: 0,
        epoch_test_f1: Vec::new(),
    };
    let mut best_params: Option<ModelParams> = None;
    let mut best_adapters: Option<AdapterSet> = None;

    for epoch in 1..=cfg.max_epochs {
        shuffle.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<&LabeledSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(&seqs, params.config())?;
            let mut tape = Tape::new();
            let logits = forward_on_tape(
                &mut tape,
                params,
                adapters.as_deref(),
                &batch,
                Mode::Train(&mut dropout),
            )?;
            let loss = tape.softmax_xent(logits, &batch.targets)?;
            loss_sum += tape.value(loss)?.data()[0];
            batches += 1;
            let grads = tape.backward(loss)?;
            match adapters.as_deref_mut() {
                Some(set) => optimizer.step(set, &grads)?,
                None => optimizer.step(params, &grads)?,
            }
        }
        out.train_loss.push(loss_sum / batches as f64);
        let score = evaluate(params, adapters.as_deref(), valid)?;
        out.valid_f1.push(score);
        out.epochs = epoch;
        if cfg.eval_every_epoch {
            out.epoch_test_f1
                .push(evaluate_all(params, adapters.as_deref(), eval_sets)?);
        }
        let (improved, stop) = stopper.observe(score);
        if improved {
            match adapters.as_deref() {
                Some(set) => best_adapters = Some(set.clone()),
                None => best_params = Some(params.clone()),
            }
        }
        if stop {
            out.early_stopped = true;
            break;
        }
    }
    out.best_epoch = stopper.best_epoch();
    match adapters {
        Some(set) => *set = best_adapters.expect("at least one epoch ran"),
        None => *params = best_params.expect("at least one epoch ran"),
    }
    Ok(out)
}

fn init_base(model: &ModelConfig, cfg: &RegimeConfig) -> Result<ModelParams> {
    ModelParams::init(model, &mut Rng::new(cfg.seed).fork("init"))
}

fn task_rng(seed: u64, key: &str) -> Rng {
    Rng::new(seed).fork(&format!("train:{key}"))
}

fn new_adapters(params: &ModelParams, lora: &LoraSettings, seed: u64, key: &str) -> Result<AdapterSet> {
    let mut rng = Rng::new(seed).fork(&format!("adapter:{key}"));
    AdapterSet::init(
        &mut rng,
        params,
        &DEFAULT_TARGETS,
        lora.rank,
        lora.alpha,
        lora.dropout,
        lora.train_head,
    )
}

fn reinit_head(params: &mut ModelParams, adapters: Option<&mut AdapterSet>, seed: u64, lang: &str) -> Result<()> {
    let (d, c) = (params.config().hidden_dim, params.config().num_labels);
    let mut rng = Rng::new(seed).fork(&format!("head:{lang}"));
    let w = glorot_uniform(&mut rng, &[d, c], d, c);
    let b = Tensor::zeros(&[c]);
    match adapters {
        Some(set) => {
            if set.head().is_none() {
                return Err(Error::InvalidConfig(
                    "head re-initialization needs a trainable head".into(),
                ));
            }
            *set.param_mut(HEAD_WEIGHT).expect("head present") = w;
            *set.param_mut(HEAD_BIAS).expect("head present") = b;
            Ok(())
        }
        None => {
            params.set("W_C", w)?;
            params.set("b_C", b)
        }
    }
}

fn record(
    cfg: &RegimeConfig,
    order_id: usize,
    step: usize,
    lang: &str,
    test_f1: BTreeMap<String, f64>,
    fit: &FitOutcome,
) -> StepRecord {
    StepRecord {
        regime: cfg.regime,
        order_id,
        seed: cfg.seed,
        step,
        lang: lang.to_string(),
        test_f1,
        valid_f1: fit.valid_f1.clone(),
        epochs: fit.epochs,
        early_stopped: fit.early_stopped,
        best_epoch: fit.best_epoch,
        epoch_test_f1: fit.epoch_test_f1.clone(),
    }
}

fn expect_regime(cfg: &RegimeConfig, want: Regime) -> Result<()> {
    cfg.validate()?;
    if cfg.regime != want {
        return Err(Error::InvalidConfig(format!(
            "expected a {want} config, got {}",
            cfg.regime
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct MultiOutcome {
    pub params: ModelParams,
    pub adapters: Option<AdapterSet>,
    pub fit: FitOutcome,
    pub record: StepRecord,
}

/// One model on the pooled training data of every language, early-stopped on
/// pooled validation F1. With LoRA settings the base stays frozen and one
/// adapter set is trained instead.
pub fn train_multi(datasets: &[TaskDataset], model: &ModelConfig, cfg: &RegimeConfig) -> Result<MultiOutcome> {
    expect_regime(cfg, Regime::Multi)?;
    let all: Vec<&TaskDataset> = datasets.iter().collect();
    check_datasets(&all, model)?;
    let key = all.iter().map(|d| d.lang_id()).collect::<Vec<_>>().join("+");
    let train: Vec<LabeledSequence> = all.iter().flat_map(|d| d.train.iter().cloned()).collect();
    let valid: Vec<LabeledSequence> = all.iter().flat_map(|d| d.valid.iter().cloned()).collect();
    let mut params = init_base(model, cfg)?;
    let mut adapters = match &cfg.lora {
        Some(lora) => {
            params.freeze_all();
            Some(new_adapters(&params, lora, cfg.seed, &key)?)
        }
        None => None,
    };
    let mut opt = OptimizerState::adam(cfg.learning_rate);
    let fit = fit(
        &mut params,
        adapters.as_mut(),
        &train,
        &valid,
        cfg,
        &task_rng(cfg.seed, &key),
        &mut opt,
        &all,
    )?;
    let scores = evaluate_all(&params, adapters.as_ref(), &all)?;
    let record = record(cfg, 0, 0, "all", scores, &fit);
    Ok(MultiOutcome {
        params,
        adapters,
        fit,
        record,
    })
}

#[derive(Clone, Debug)]
pub struct MonoRun {
    pub models: BTreeMap<String, ModelParams>,
    /// One row per language in dataset order; each model is scored on every
    /// language.
    pub log: RunLog,
}

/// Runs `job` for every index on up to `workers` threads and returns the
/// results in index order.
fn parallel_map<T: Send>(n: usize, workers: usize, job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = job(i);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every index ran"))
        .collect()
}

/// Independent model for one language, from the run seed's base init.
pub fn train_mono(dataset: &TaskDataset, model: &ModelConfig, cfg: &RegimeConfig) -> Result<(ModelParams, FitOutcome)> {
    expect_regime(cfg, Regime::Mono)?;
    check_datasets(&[dataset], model)?;
    let mut params = init_base(model, cfg)?;
    let mut opt = OptimizerState::adam(cfg.learning_rate);
    let fit = fit(
        &mut params,
        None,
        &dataset.train,
        &dataset.valid,
        cfg,
        &task_rng(cfg.seed, dataset.lang_id()),
        &mut opt,
        &[dataset],
    )?;
    Ok((params, fit))
}

/// MONO over every language, each model evaluated on all languages.
pub fn run_mono(datasets: &[TaskDataset], model: &ModelConfig, cfg: &RegimeConfig, workers: usize) -> Result<MonoRun> {
    let all: Vec<&TaskDataset> = datasets.iter().collect();
    check_datasets(&all, model)?;
    let results = parallel_map(datasets.len(), workers, |i| {
        let (params, fit) = train_mono(&datasets[i], model, cfg)?;
        let scores = evaluate_all(&params, None, &all)?;
        Ok((params, fit, scores))
    })?;
    let mut models = BTreeMap::new();
    let mut log = RunLog::default();
    for (i, (params, fit, scores)) in results.into_iter().enumerate() {
        let lang = datasets[i].lang_id();
        log.push(record(cfg, 0, i, lang, scores, &fit));
        models.insert(lang.to_string(), params);
    }
    Ok(MonoRun { models, log })
}

#[derive(Clone, Debug)]
pub struct SequentialOutcome {
    pub log: RunLog,
    pub params: ModelParams,
    pub adapters: Option<AdapterSet>,
    pub base_fingerprint_before: String,
    pub base_fingerprint_after: String,
}

fn sequential(
    datasets: &[TaskDataset],
    order: &LanguageOrder,
    model: &ModelConfig,
    cfg: &RegimeConfig,
) -> Result<SequentialOutcome> {
    let arranged = order.arrange(datasets)?;
    check_datasets(&arranged, model)?;
    let mut params = init_base(model, cfg)?;
    let mut adapters = match &cfg.lora {
        Some(lora) => {
            params.freeze_all();
            Some(new_adapters(&params, lora, cfg.seed, arranged[0].lang_id())?)
        }
        None => None,
    };
    let before = params.fingerprint();
    let mut opt = OptimizerState::adam(cfg.learning_rate);
    let mut log = RunLog::default();
    for (step, ds) in arranged.iter().enumerate() {
        let lang = ds.lang_id();
        if step > 0 && cfg.reset_optimizer_per_task {
            opt = OptimizerState::adam(cfg.learning_rate);
        }
        if step > 0 && cfg.reinit_head_per_task {
            reinit_head(&mut params, adapters.as_mut(), cfg.seed, lang)?;
        }
        let fit = fit(
            &mut params,
            adapters.as_mut(),
            &ds.train,
            &ds.valid,
            cfg,
            &task_rng(cfg.seed, lang),
            &mut opt,
            &arranged,
        )?;
        let scores = evaluate_all(&params, adapters.as_ref(), &arranged)?;
        log.push(record(cfg, order.order_id, step, lang, scores, &fit));
    }
    let after = params.fingerprint();
    if adapters.is_some() && before != after {
        return Err(Error::InvalidConfig(
            "frozen base changed during adapter training".into(),
        ));
    }
    Ok(SequentialOutcome {
        log,
        params,
        adapters,
        base_fingerprint_before: before,
        base_fingerprint_after: after,
    })
}

/// All base parameters fine-tuned on one language after another.
pub fn train_vanilla(
    datasets: &[TaskDataset],
    order: &LanguageOrder,
    model: &ModelConfig,
    cfg: &RegimeConfig,
) -> Result<SequentialOutcome> {
    expect_regime(cfg, Regime::Vanilla)?;
    sequential(datasets, order, model, cfg)
}

/// One adapter set updated on one language after another over a frozen base.
pub fn train_shared_lora(
    datasets: &[TaskDataset],
    order: &LanguageOrder,
    model: &ModelConfig,
    cfg: &RegimeConfig,
) -> Result<SequentialOutcome> {
    expect_regime(cfg, Regime::SharedLora)?;
    sequential(datasets, order, model, cfg)
}

#[derive(Clone, Debug)]
pub struct NonSharedOutcome {
    pub base: ModelParams,
    pub sets: BTreeMap<String, AdapterSet>,
    /// One row per language in dataset order: that language's adapter scored
    /// on every language (off-diagonal entries are zero-shot).
    pub log: RunLog,
    pub base_fingerprint_before: String,
    pub base_fingerprint_after: String,
}

/// A separate adapter set per language over a shared frozen base. Languages
/// are independent, so `workers` threads may train them concurrently.
pub fn train_nonshared_lora(
    datasets: &[TaskDataset],
    model: &ModelConfig,
    cfg: &RegimeConfig,
    workers: usize,
) -> Result<NonSharedOutcome> {
    expect_regime(cfg, Regime::NonSharedLora)?;
    let all: Vec<&TaskDataset> = datasets.iter().collect();
    check_datasets(&all, model)?;
    let lora = cfg.lora.as_ref().expect("validated");
    let mut base = init_base(model, cfg)?;
    base.freeze_all();
    let before = base.fingerprint();
    let results = parallel_map(datasets.len(), workers, |i| {
        let ds = &datasets[i];
        let mut params = base.clone();
        let mut set = new_adapters(&params, lora, cfg.seed, ds.lang_id())?;
        let mut opt = OptimizerState::adam(cfg.learning_rate);
        let fit = fit(
            &mut params,
            Some(&mut set),
            &ds.train,
            &ds.valid,
            cfg,
            &task_rng(cfg.seed, ds.lang_id()),
            &mut opt,
            &all,
        )?;
        let scores = evaluate_all(&params, Some(&set), &all)?;
        Ok((set, fit, scores))
    })?;
    let after = base.fingerprint();
    let mut sets = BTreeMap::new();
    let mut log = RunLog::default();
    for (i, (set, fit, scores)) in results.into_iter().enumerate() {
        let lang = datasets[i].lang_id();
        log.push(record(cfg, 0, i, lang, scores, &fit));
        sets.insert(lang.to_string(), set);
    }
    Ok(NonSharedOutcome {
        base,
        sets,
        log,
        base_fingerprint_before: before,
        base_fingerprint_after: after,
    })
}
