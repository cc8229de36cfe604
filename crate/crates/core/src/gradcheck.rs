//! Central finite-difference checks of tape gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lora::AdapterSet;
use crate::model::{forward_on_tape, Batch, LabeledSequence, Mode, ModelParams};
use crate::numeric::{Gradients, ParamAccess, Rng, Tape, Tensor, Var};

pub const EPS: f64 = 1e-5;

/// Magnitudes below this are compared absolutely; differences of order
/// `EPS²` cannot resolve them.
pub const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst relative error over every entry of every input. `build` records a
/// scalar loss given the inputs as trainable parameters.
pub fn check_tape(
    inputs: &BTreeMap<String, Tensor>,
    build: impl Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
) -> Result<f64> {
    let eval = |vals: &BTreeMap<String, Tensor>| -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let vars = vals.iter().map(|(n, t)| (n.clone(), tape.param(n, t, true))).collect();
        let loss = build(&mut tape, &vars)?;
        Ok((tape.value(loss)?.data()[0], tape.backward(loss)?))
    };
    let (_, grads) = eval(inputs)?;
    let mut worst: f64 = 0.0;
    for (name, t) in inputs {
        let g = grads.get(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
        for i in 0..t.len() {
            let mut plus = inputs.clone();
            plus.get_mut(name).expect("present").data_mut()[i] += EPS;
            let mut minus = inputs.clone();
            minus.get_mut(name).expect("present").data_mut()[i] -= EPS;
            let numeric = (eval(&plus)?.0 - eval(&minus)?.0) / (2.0 * EPS);
            worst = worst.max(relative_error(g.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Training-mode loss with dropout masks replayed from `seed`.
fn model_loss(
    params: &ModelParams,
    adapters: Option<&AdapterSet>,
    seqs: &[LabeledSequence],
    seed: u64,
) -> Result<(f64, Gradients)> {
    let refs: Vec<&LabeledSequence> = seqs.iter().collect();
    let batch = Batch::new(&refs, params.config())?;
    let mut tape = Tape::new();
    let mut rng = Rng::new(seed);
    let logits = forward_on_tape(&mut tape, params, adapters, &batch, Mode::Train(&mut rng))?;
    let loss = tape.softmax_xent(logits, &batch.targets)?;
    Ok((tape.value(loss)?.data()[0], tape.backward(loss)?))
}

/// Worst relative error over all trainable scalars of the full model loss:
/// adapter parameters when `adapters` is given, base parameters otherwise.
pub fn check_model(
    params: &ModelParams,
    adapters: Option<&AdapterSet>,
    seqs: &[LabeledSequence],
    seed: u64,
) -> Result<f64> {
    let (_, grads) = model_loss(params, adapters, seqs, seed)?;
    let mut worst: f64 = 0.0;
    for (name, g) in grads.iter() {
        for i in 0..g.len() {
            let (lp, lm) = match adapters {
                Some(set) => {
                    let (mut plus, mut minus) = (set.clone(), set.clone());
                    nudge(&mut plus, name, i, EPS)?;
                    nudge(&mut minus, name, i, -EPS)?;
                    (
                        model_loss(params, Some(&plus), seqs, seed)?.0,
                        model_loss(params, Some(&minus), seqs, seed)?.0,
                    )
                }
                None => {
                    let (mut plus, mut minus) = (params.clone(), params.clone());
                    nudge(&mut plus, name, i, EPS)?;
                    nudge(&mut minus, name, i, -EPS)?;
                    (
                        model_loss(&plus, None, seqs, seed)?.0,
                        model_loss(&minus, None, seqs, seed)?.0,
                    )
                }
            };
            worst = worst.max(relative_error(g.data()[i], (lp - lm) / (2.0 * EPS)));
        }
    }
    Ok(worst)
}

fn nudge(p: &mut impl ParamAccess, name: &str, i: usize, by: f64) -> Result<()> {
    let t = p.param_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
    t.data_mut()[i] += by;
    Ok(())
}
