//! Minimal CPU neural-network toolkit.
//!
//! Layers are stateless with respect to a forward pass: `forward` returns the
//! output together with a [`Tape`] holding whatever the backward pass needs,
//! so the same network can be evaluated several times (real batch, fake
//! batch, counterfactual batch) before any gradient is taken.

mod gemm;
mod layers;
mod loss;
mod optim;
mod tensor;

pub use gemm::matmul;
pub use layers::{Conv2d, Layer, Linear, Sequential, Tape};
pub use loss::{log_softmax_rows, softmax_cross_entropy, softmax_rows};
pub use optim::{Adam, AdamConfig, Grads};
pub use tensor::Tensor;
