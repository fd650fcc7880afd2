//! Minimal differentiable kernel: dense `f64` matrices, a reverse-mode tape,
//! transformer layers, straight-through Gumbel-Softmax and finite-difference
//! gradient checking.

mod gradcheck;
mod graph;
mod gumbel;
mod layers;
mod params;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_STEP, RELATIVE_FLOOR};
pub use graph::{gaussian_value, Gradients, Graph, ParamGrads, Var};
pub use gumbel::{gumbel_softmax, sample_gumbel, GumbelDraw, SelectionMode};
pub use layers::{
    attention_forward, multi_head_attention, positional_encoding, AttentionBlock, LayerNormParams,
    Linear, LAYER_NORM_EPS,
};
pub use params::{Adam, ParamEntry, ParamId, ParamStore};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KernelError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    NonFinite(String),
}
