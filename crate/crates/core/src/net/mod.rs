//! Dense single-sample CNN substrate: 3x3/1x1 convolutions, 2x2 max pooling,
//! leaky ReLU, exact backward pass, momentum SGD and binary checkpoints.

mod checkpoint;
mod layers;
mod network;
mod sgd;
mod tensor;

pub use checkpoint::{checkpoint_bytes, read_checkpoint, write_checkpoint, MAGIC, VERSION};
pub use layers::LEAKY_SLOPE;
pub use network::{
    Activation, ConvParams, ForwardCache, Grads, Layer, NetSpec, Network, Params,
};
pub use sgd::{sgd_step, SgdConfig};
pub use tensor::{Real, Tensor};
