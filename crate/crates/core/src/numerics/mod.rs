//! Dense tensors, named parameter sets, a small ReLU MLP with an explicit
//! backward pass, seeded randomness, and a finite-difference gradient check.

mod gradcheck;
pub mod loss;
mod mlp;
mod optim;
mod params;
mod rng;
mod tensor;

pub use gradcheck::{check_network, finite_difference_check, GradCheckReport};
pub use loss::{forward_backward, Batch, LossKind, Targets};
pub use mlp::{Mlp, MlpTape};
pub use optim::{Adam, Sgd};
pub use params::ParamSet;
pub use rng::{fnv1a64, gaussian, seeded_rng, stage_seed, uniform_indices, Rng};
pub use tensor::Tensor;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
