//! A small neural-network engine: a fixed set of layers with hand-written
//! backward passes, MSE loss, and Adam. Everything runs in `f64`.
//!
//! Batches are processed layer by layer so batch normalisation sees the whole
//! batch. Per-example work inside convolutions fans out over rayon; weight
//! gradients are summed in example order, so results do not depend on the
//! number of threads.

mod gemm;
mod gradcheck;
mod io;
mod layer;
mod network;
mod optim;
mod tensor;

pub use gradcheck::{gradient_check, gradient_report, relative_error, GradientReport, GRADIENT_FLOOR};
pub use layer::{LayerSpec, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use network::{Mode, Network};
pub use optim::{adam_step, mse_loss, AdamState};
pub use tensor::Tensor;
