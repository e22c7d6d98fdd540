//! Small dense-tensor engine: convolution, pooling, elementwise ops, their
//! hand-written backward passes, Adam and a finite-difference checker.
//!
//! Everything here is single-threaded and deterministic.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod ops;
pub mod pool;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, ParamSet};
pub use conv::{conv2d_backward, conv2d_backward_params, conv2d_forward, ConvGrads, ConvSpec, Padding};
pub use gradcheck::{check_gradients, relative_error, GradCheckOptions, GradCheckReport};
pub use ops::{concat_channels, relu, relu_backward, relu_inplace, split_channels};
pub use pool::{maxpool2x2, maxpool2x2_backward, sumpool2x2, PoolIndices};
pub use tensor::{Scalar, Tensor};
