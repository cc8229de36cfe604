//! Analytic gradients against central finite differences.

use std::collections::BTreeMap;

use polyforget_core::lora::AdapterSet;
use polyforget_core::model::{forward_on_tape, Batch, LabeledSequence, Mode, ModelConfig, ModelParams};
use polyforget_core::numeric::{ParamAccess, Rng, Tape, Tensor, Var};

const EPS: f64 = 1e-5;
/// Below this magnitude gradients are compared absolutely rather than
/// relatively; finite differences cannot resolve smaller values.
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Checks every entry of every named input. `build` records a scalar loss on
/// the tape given the inputs as trainable parameters.
fn check(inputs: &BTreeMap<String, Tensor>, build: impl Fn(&mut Tape, &BTreeMap<String, Var>) -> Var) -> f64 {
    let eval = |vals: &BTreeMap<String, Tensor>| {
        let mut tape = Tape::new();
        let vars = vals.iter().map(|(n, t)| (n.clone(), tape.param(n, t, true))).collect();
        let loss = build(&mut tape, &vars);
        (tape.value(loss).unwrap().data()[0], tape.backward(loss).unwrap())
    };
    let (_, grads) = eval(inputs);
    let mut worst: f64 = 0.0;
    for (name, t) in inputs {
        let g = grads.get(name).unwrap_or_else(|| panic!("no gradient for {name}"));
        for i in 0..t.len() {
            let mut plus = inputs.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += EPS;
            let mut minus = inputs.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= EPS;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * EPS);
            worst = worst.max(rel_err(g.data()[i], numeric));
        }
    }
    worst
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal(0.0, 1.0))
}

/// Contracts `v` against fixed random weights so every output entry matters.
fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let shape = tape.value(v).unwrap().shape().to_vec();
    let w = random(&mut Rng::new(seed), &shape);
    let wv = tape.constant(w);
    let p = tape.mul(v, wv).unwrap();
    tape.sum(p).unwrap()
}

fn inputs(rng: &mut Rng, specs: &[(&str, &[usize])]) -> BTreeMap<String, Tensor> {
    specs.iter().map(|(n, s)| (n.to_string(), random(rng, s))).collect()
}

#[test]
fn matmul_gradients() {
    let mut rng = Rng::new(1);
    let x = inputs(&mut rng, &[("a", &[3, 4]), ("b", &[4, 2])]);
    let e = check(&x, |t, v| {
        let m = t.matmul(v["a"], v["b"]).unwrap();
        weighted_sum(t, m, 9)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn matmul_bt_gradients() {
    let mut rng = Rng::new(2);
    let x = inputs(&mut rng, &[("a", &[3, 4]), ("b", &[5, 4])]);
    let e = check(&x, |t, v| {
        let m = t.matmul_bt(v["a"], v["b"]).unwrap();
        weighted_sum(t, m, 9)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn elementwise_gradients() {
    let mut rng = Rng::new(3);
    let x = inputs(&mut rng, &[("a", &[3, 4]), ("b", &[3, 4]), ("bias", &[4])]);
    let e = check(&x, |t, v| {
        let s = t.add(v["a"], v["b"]).unwrap();
        let p = t.mul(s, v["a"]).unwrap();
        let c = t.scale(p, -0.7).unwrap();
        let r = t.add_row(c, v["bias"]).unwrap();
        weighted_sum(t, r, 9)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn gelu_gradients() {
    let mut rng = Rng::new(4);
    let x = inputs(&mut rng, &[("a", &[4, 5])]);
    let e = check(&x, |t, v| {
        let g = t.gelu(v["a"]).unwrap();
        weighted_sum(t, g, 9)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn dropout_gradients() {
    let mut rng = Rng::new(5);
    let x = inputs(&mut rng, &[("a", &[4, 5])]);
    let mask = polyforget_core::numeric::dropout_mask(&mut Rng::new(6), 20, 0.3);
    let e = check(&x, |t, v| {
        let d = t.dropout(v["a"], mask.clone()).unwrap();
        weighted_sum(t, d, 9)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn gather_gradients() {
    let mut rng = Rng::new(7);
    let x = inputs(&mut rng, &[("table", &[6, 3])]);
    // Repeated ids accumulate.
    let ids = [4, 0, 4, 2, 5];
    let e = check(&x, |t, v| {
        let g = t.gather(v["table"], &ids).unwrap();
        weighted_sum(t, g, 9)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn attention_gradients_with_padding() {
    let mut rng = Rng::new(8);
    // Two sequences of lengths 3 and 2, padded to 3.
    let x = inputs(&mut rng, &[("q", &[6, 4]), ("k", &[6, 4]), ("v", &[6, 4])]);
    let e = check(&x, |t, v| {
        let a = t.attention(v["q"], v["k"], v["v"], &[3, 2], 3).unwrap();
        weighted_sum(t, a, 9)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn softmax_xent_gradients() {
    let mut rng = Rng::new(9);
    let x = inputs(&mut rng, &[("z", &[5, 4])]);
    let targets = [Some(1), None, Some(3), Some(0), None];
    let e = check(&x, |t, v| t.softmax_xent(v["z"], &targets).unwrap());
    assert!(e < TOL, "{e}");
}

fn tiny_model() -> (ModelParams, Vec<LabeledSequence>) {
    let cfg = ModelConfig {
        vocab_size: 10,
        hidden_dim: 8,
        max_seq_len: 5,
        num_labels: 5,
        dropout_rate: 0.1,
    };
    let params = ModelParams::init(&cfg, &mut Rng::new(21)).unwrap();
    let seqs = vec![
        LabeledSequence::new(vec![3, 7, 2, 9], vec![0, 1, 2, 0]).unwrap(),
        LabeledSequence::new(vec![5, 1], vec![3, 4]).unwrap(),
    ];
    (params, seqs)
}

/// Full model loss, with dropout masks replayed from a fixed stream so the
/// function is deterministic.
fn model_loss(
    params: &ModelParams,
    adapters: Option<&AdapterSet>,
    seqs: &[LabeledSequence],
) -> (f64, polyforget_core::numeric::Gradients) {
    let refs: Vec<&LabeledSequence> = seqs.iter().collect();
    let batch = Batch::new(&refs, params.config()).unwrap();
    let mut tape = Tape::new();
    let mut rng = Rng::new(77);
    let logits = forward_on_tape(&mut tape, params, adapters, &batch, Mode::Train(&mut rng)).unwrap();
    let loss = tape.softmax_xent(logits, &batch.targets).unwrap();
    (tape.value(loss).unwrap().data()[0], tape.backward(loss).unwrap())
}

#[test]
fn full_model_gradients() {
    let (params, seqs) = tiny_model();
    let (_, grads) = model_loss(&params, None, &seqs);
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.tensors().map(|(n, _)| n.clone()).collect();
    assert_eq!(grads.len(), names.len());
    for name in names {
        let n = params.get(&name).unwrap().len();
        for i in 0..n {
            let mut plus = params.clone();
            plus.param_mut(&name).unwrap().data_mut()[i] += EPS;
            let mut minus = params.clone();
            minus.param_mut(&name).unwrap().data_mut()[i] -= EPS;
            let numeric = (model_loss(&plus, None, &seqs).0 - model_loss(&minus, None, &seqs).0) / (2.0 * EPS);
            worst = worst.max(rel_err(grads.get(&name).unwrap().data()[i], numeric));
        }
    }
    assert!(worst < TOL, "{worst}");
}

#[test]
fn full_model_adapter_gradients() {
    let (mut params, seqs) = tiny_model();
    params.freeze_all();
    let mut set = AdapterSet::init(&mut Rng::new(5), &params, &["W_Q", "W_V"], 2, 4.0, 0.1, true).unwrap();
    // Non-zero B so gradients reach A.
    for target in ["W_Q", "W_V"] {
        let b = set.param_mut(&format!("lora.{target}.B")).unwrap();
        let mut r = Rng::new(3);
        b.data_mut().iter_mut().for_each(|v| *v = r.normal(0.0, 0.5));
    }
    let (_, grads) = model_loss(&params, Some(&set), &seqs);
    let names: Vec<String> = set.param_shapes().into_iter().map(|(n, _)| n).collect();
    assert_eq!(grads.len(), names.len(), "frozen base must not receive gradients");
    let mut worst: f64 = 0.0;
    for name in names {
        let n = grads.get(&name).unwrap().len();
        for i in 0..n {
            let mut plus = set.clone();
            plus.param_mut(&name).unwrap().data_mut()[i] += EPS;
            let mut minus = set.clone();
            minus.param_mut(&name).unwrap().data_mut()[i] -= EPS;
            let numeric =
                (model_loss(&params, Some(&plus), &seqs).0 - model_loss(&params, Some(&minus), &seqs).0) / (2.0 * EPS);
            worst = worst.max(rel_err(grads.get(&name).unwrap().data()[i], numeric));
        }
    }
    assert!(worst < TOL, "{worst}");
}
