//! Layer primitives with explicit backward passes.

pub mod activation;
pub mod conv;
pub(crate) mod gemm;
pub mod norm;

pub use activation::{sigmoid, Activation, LEAKY_SLOPE};
pub use conv::{conv_out_len, conv_transpose_out_len, xavier_bound, Conv2d, ConvTranspose2d};
pub use norm::{BatchNorm2d, NormCache, NormStats, BN_EPSILON, BN_MOMENTUM};
