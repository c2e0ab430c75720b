//! The convolutional network, its schemes, and the quantized passes.

pub mod checkpoint;
pub mod kernels;
mod scheme;
mod state;
mod topology;

pub use scheme::{FormatSpec, ParameterClass, SchemeConfig, SCHEME_NAMES};
pub use state::{
    loss, predictions, scheme_formats, softmax_xent_grad, ForwardCache, Gradients, KernelMode, LayerParams,
    NetworkState, Pass,
};
pub use topology::{numel, LayerGeometry, LayerSpec, Shape3, Topology};
