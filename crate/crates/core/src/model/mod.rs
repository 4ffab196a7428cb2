//! The two-branch network family and its training loss.

mod check;
pub mod checkpoint;
mod config;
mod loss;
mod network;

pub use check::check_model_gradients;
pub use config::{EcaSite, ModelConfig, Task, Variant};
pub use loss::{loss_multitask, loss_multitask_grad, LossGrad, Targets};
pub use network::{LayerEntry, LayerKind, Mode, Model, ModelOutput, Trace};
