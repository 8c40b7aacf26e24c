//! Dense row-major `f32` arrays and the handful of kernels the model needs.
//!
//! Every reduction accumulates in ascending index order so that serial runs
//! are bitwise reproducible. The optional parallel path only splits work over
//! independent output rows, so it produces the same bits as the serial path.

mod array;
pub(crate) mod ops;
mod rng;

pub use array::Array;
pub use ops::{
    add_channel_bias, channel_mix, conv_spatial, conv_spatial_with, conv_temporal, layer_norm,
    linear, matmul, matmul_with, silu, softmax, Exec,
};
pub use rng::{rng_normal, rng_permutation, stream, Rng};
