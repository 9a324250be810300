//! The trainable model: a shared ReLU trunk, a bias-free utility head for
//! pairwise ranking, a two-layer regression head for absolute scoring, their
//! losses and exact gradients, AdamW and early stopping.

mod adamw;
mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod model;
mod stopper;

pub use adamw::{AdamWConfig, AdamWState};
pub use checkpoint::{Checkpoint, CheckpointKind, ParamArray, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_absolute, grad_check_pairwise};
pub use layers::{RegressionHead, TrunkWeights, UtilityHead};
pub use loss::{l1_loss, mean_l1_loss, pairwise_loss, sigmoid};
pub use model::{
    delta, grad_absolute, grad_pairwise, AbsExample, AbsoluteModel, AbsoluteParams,
    FrozenEmbeddings, PairwiseModel,
};
pub use stopper::{EarlyStopper, StopDecision};

/// One named parameter tensor, flattened.
#[derive(Debug, Clone, Copy)]
pub struct ParamBlock<'a> {
    pub name: &'static str,
    pub values: &'a [f64],
    /// Whether decoupled weight decay applies (false for biases).
    pub decay: bool,
}

/// A fixed, ordered list of parameter tensors.
///
/// Gradients are represented by a value of the same type, so the block order
/// and lengths of a model and its gradient always agree.
pub trait ParamSet {
    fn blocks(&self) -> Vec<ParamBlock<'_>>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.values.iter().all(|v| v.is_finite()))
    }

    fn l2_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.values.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
