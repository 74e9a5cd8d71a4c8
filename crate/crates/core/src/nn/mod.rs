//! Dense tensors, a reverse-mode tape, and first-order optimizers.

mod linear;
mod optim;
mod tape;
mod tensor;

pub use linear::{BoundLinear, Linear};
pub use optim::{OptimizerKind, OptimizerState};
pub use tape::{Gradients, PoolMode, Tape, Var};
pub use tensor::{
    affine_transform, cross_entropy, elementwise_activation, sigmoid, softmax, Activation, Tensor, LOG_EPSILON,
};
