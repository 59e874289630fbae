//! Small neural-network engine: tensors, the dueling decision-value network,
//! hand-written reverse pass, and Adam.

mod adam;
mod network;
mod params;
mod real;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use network::{frames_to_input, ConvGeometry, ConvSpec, ForwardCache, ForwardOutput, Network, NetworkSpec, BETA_MIN};
pub use params::{GradientSet, ParamSet};
pub use real::Real;
pub use tensor::Tensor;
