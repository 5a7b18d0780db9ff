//! Dense tensors, reverse-mode differentiation and gradient checking.

pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Branches, Gradients, Graph, Var, MASK_LOGIT_CLIP};
pub use tensor::{cosine, focal_loss, l1_mean, matmul, sigmoid, softmax, FocalParams, Tensor};
