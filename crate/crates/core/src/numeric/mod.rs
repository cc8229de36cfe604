//! Numeric foundation: tensors, the gradient tape, Adam, deterministic RNG and
//! tensor files.

pub mod io;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use optim::{OptimizerState, ParamAccess};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1/(1-rate)`. A zero rate gives an all-ones mask without consuming `rng`.
pub fn dropout_mask(rng: &mut Rng, len: usize, rate: f64) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect()
}

/// Glorot/Xavier uniform range `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.uniform(-limit, limit))
}
