//! Dense `f64` tensors, a reverse-mode tape and SGD.

mod graph;
mod optim;
mod tensor;

pub use graph::{
    log_softmax_row, ContrastTerm, Gradients, Graph, Var, LOG_CLAMP_PROB, NORM_EPSILON,
};
pub use optim::{cosine_lr, sgd_momentum_step, Parameter};
pub use tensor::{dot, norm, Tensor};
