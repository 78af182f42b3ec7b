//! Dense grids, pooling, small dense networks and the Adam optimizer.

pub mod adam;
pub mod dense;
mod grid;
pub mod linalg;
pub mod loss;
mod pool;

pub use adam::{adam_step, AdamState};
pub use dense::{
    net_forward, net_gradient, softmax_in_place, Activation, DenseLayer, DenseNetParams, ForwardTrace,
    LayerGradient, NetGradients,
};
pub use grid::Grid2D;
pub use loss::{softmax_cross_entropy, LossGrad};
pub use pool::{pool2d, PoolMode};
