//! Minimal reverse-mode automatic differentiation over dense `f64`
//! matrices, with an Adam optimizer.

mod optim;
mod param;
mod sparse;
mod tape;
mod tensor;

pub use optim::Adam;
pub use param::{Group, Param, ParamId, ParamStore};
pub use sparse::Csr;
pub use tape::{Axis, Binary, Gradients, Reduce, Tape, Unary, Var};
pub use tensor::Tensor;
