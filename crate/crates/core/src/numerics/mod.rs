//! Tensors, randomness, dense kernels and optimizers.

mod gemm;
mod optim;
mod rng;
mod tensor;

pub use gemm::{gemm, Transpose};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState, ParamMut};
pub use rng::Rng;
pub use tensor::{sigmoid, ElementwiseOp, Operand, Tensor};
