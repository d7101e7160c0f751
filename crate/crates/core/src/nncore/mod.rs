//! Dense tensors, layer stacks with reverse-mode gradients, Adam, gradient
//! checking and the binary parameter format.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use layers::{backward_mlp, backward_params, forward_mlp, infer, init_stack, LayerSpec, Tape};
pub use loss::{softmax, softmax_cross_entropy};
pub use params::{Param, ParamSet};
pub use tensor::{dot, matmul, DType, Scalar, Tensor};
