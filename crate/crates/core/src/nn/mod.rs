//! Minimal neural-network engine: the five layer kinds of the encoder and
//! classifier stacks, softmax cross-entropy, Adam, and a binary model format.

pub mod adam;
pub mod io;
pub mod layers;
pub mod loss;
pub mod network;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{
    batchnorm_apply, conv1d_apply, linear_apply, maxpool_apply, relu_apply, BatchNorm1d, Conv1d,
    Layer, Linear, Mode, ParamConvention,
};
pub use loss::{softmax, softmax_cross_entropy};
pub use network::{backprop_network, count_parameters, Gradients, Network, Tape};
