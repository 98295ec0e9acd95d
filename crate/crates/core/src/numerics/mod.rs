//! Dense tensors, reverse-mode differentiation, stable log-domain helpers and
//! the deterministic generator.

pub mod gradcheck;
mod graph;
mod math;
mod rng;
mod tensor;

pub use graph::{GradBuffer, Graph, ParamId, ParamStore, Var};
pub use math::{argmax, log_add, log_softmax, logsumexp, sinusoidal_embedding, softmax};
pub(crate) use math::{log_softmax_in_place, sigmoid, vec_mat};
pub use rng::{mix, Rng};
pub use tensor::Tensor;
