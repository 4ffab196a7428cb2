//! Camera-based heart-rate and respiratory-rate estimation with temporal-shift
//! dual-attention convolutional networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense tensors, differentiable primitives, gradient checking
//!   and the `.dten` container.
//! * [`blocks`]: temporal shift, spatial attention masks, efficient channel attention.
//! * [`model`]: the 2D-CAN / TS-CAN / TS-DAN network family and the multitask loss.
//! * [`synth`]: labelled clips rendered from a dichromatic skin reflection model.
//! * [`pipeline`]: motion/appearance preprocessing, Butterworth filtering and
//!   windowed spectral rate estimation.
//! * [`metrics`]: MAE, harmonic-template SNR and availability.
//! * [`train`]: deterministic optimisation loop, checkpoints and
//!   cross-condition protocols.

pub mod blocks;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
