//! Deterministic f64 math: tensors, a closed-op gradient graph, and a
//! central-difference gradient checker.
//!
//! Reductions walk indices in ascending order and nothing here spawns
//! threads, so the same inputs give bit-identical outputs on every run.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport, ParamTensors};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;

/// The one PRNG used across the crate: ChaCha8, seeded explicitly, identical
/// stream on every platform.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Tensor with entries drawn uniformly from (-bound, bound), row-major draw order.
pub fn uniform_tensor(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Tensor {
    let dist = Uniform::new(-bound, bound);
    let mut t = Tensor::zeros(rows, cols);
    for v in t.data_mut().iter_mut() {
        *v = dist.sample(rng);
    }
    t
}

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch { op: &'static str, lhs: String, rhs: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("{op} needs at least one operand")]
    EmptyOperands { op: &'static str },
    #[error("invalid argument: {what}")]
    InvalidArgument { what: String },
}
