//! Tensors, reverse-mode autodiff, optimizers and seeded randomness.

pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use optim::{clip_global_norm, global_norm, OptimizerKind, OptimizerState, ParamMap};
pub use rng::{derive_seed, SeededRng};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{
    elementwise, frobenius_norm, log_softmax_rows, matmul, matmul_nt, matmul_tn, softmax_cross_entropy,
    Elementwise,
    Tensor,
};
