//! Dense tensors, a reverse-mode tape, a finite-difference oracle and the
//! Adam update used by the trainer.

pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, numerical_grad};
pub use optim::Adam;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
