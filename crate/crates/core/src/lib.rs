//! LCDnet: a lightweight crowd-density network with everything needed to
//! train and evaluate it on CPU.
//!
//! * [`groundtruth`] turns point annotations into density maps.
//! * [`model`] holds the network, its gradients, checkpoints and cost model.
//! * [`trainer`] fits the network with Adam over curriculum-ordered batches.
//! * [`metrics`] scores predicted maps (MAE, GAME, SSIM, PSNR).
//! * [`cli`] exposes all of it as the `lcdnet` command.

pub mod cli;
pub mod curriculum;
pub mod dataio;
pub mod error;
pub mod fsutil;
pub mod groundtruth;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
