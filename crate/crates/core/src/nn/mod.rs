//! Dense-network numerical core: matrices, forward ops, losses, L2
//! regularisation, Adam and seeded initialisation.
//!
//! Gradients are computed by hand-written reverse passes over the fixed
//! network topologies in [`crate::attention`] and [`crate::learner`]; this
//! module supplies the building blocks they share.

pub mod init;
pub mod matrix;
pub mod ops;
pub mod param;

pub use init::{derive_seed, rng_from_seed, truncated_normal, truncated_normal_init, SeededRng};
pub use matrix::{matmul, matmul_nt, matmul_tn, Matrix};
pub use ops::{
    cross_entropy_loss, cross_entropy_with_grad, dense_forward, mse_loss, mse_with_grad,
    relu_forward, tanh_forward, two_logit_softmax,
};
pub use param::{adam_step, l2_penalty, l2_penalty_backward, AdamConfig, ParamKind, ParamTensor, Parameters};
