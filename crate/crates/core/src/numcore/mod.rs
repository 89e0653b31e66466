//! Dense tensors, the reverse-mode rules the model needs, gradient
//! checking and the Adam optimizer.

mod gradcheck;
pub mod ops;
mod optim;
mod tensor;

pub use gradcheck::grad_check;
pub use ops::{log_softmax, softmax};
pub use optim::{glorot_uniform, AdamConfig, ParamSet};
pub use tensor::Tensor;
