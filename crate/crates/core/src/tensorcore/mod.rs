//! Reverse-mode differentiable matrix engine and the layers built on it.

pub mod checkpoint;
mod graph;
pub mod layers;
pub mod math;
pub mod optim;
mod params;

#[cfg(test)]
pub(crate) mod testutil;

pub use graph::{AttentionMask, Axis, Diagnostics, Graph, Shape, Tensor};
pub use params::{GradBuffer, Param, ParamId, ParamStore};

/// Deterministic generator used for parameter initialization.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
