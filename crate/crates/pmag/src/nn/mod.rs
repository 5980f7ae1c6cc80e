//! Low-level neural network machinery: dense tensors, time-major
//! activation volumes, the 3D convolution engine and pointwise layers.
//!
//! Everything is f64 and bit-deterministic: parallel loops write disjoint
//! output regions and all reductions run in a fixed order, so results do
//! not depend on thread scheduling.

mod conv;
mod init;
mod ops;
mod tensor;

pub use conv::{
    conv1d_backward, conv1d_forward, conv3d_forward, conv3d_input_grad, conv3d_param_grads,
};
pub use init::Initializer;
pub use ops::{
    avgpool2_backward, avgpool2_forward, gap_backward, gap_forward, relu_backward, relu_forward,
    relu_instnorm_backward, relu_instnorm_forward, temporal_delta_backward,
    temporal_delta_forward, upsample2_backward, upsample2_forward, NormStats, INSTANCE_NORM_EPS,
};
pub use tensor::{Tensor, Volume};
