//! Trainable machinery: dense networks, Adam, and checkpoint files.

mod adam;
pub mod checkpoint;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{Activation, BatchCache, Layer, Mlp, MlpSpec};

/// A collection of flat parameter tensors the optimizer can update.
///
/// `tensors`, `tensors_mut` and `tensor_names` must enumerate tensors in the
/// same order with the same lengths.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    fn tensor_names(&self) -> Vec<String>;

    /// Called once after every successful optimizer update.
    fn on_update(&mut self) {}

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}
