//! Minimal differentiable building blocks: a tape-based autodiff graph,
//! a named parameter store, common layers and the Adam optimizer.

mod adam;
mod graph;
mod layers;
mod params;

pub use adam::{clip_grad_norm, Adam, AdamState};
pub use graph::{masked_softmax, sigmoid, Grads, Graph, Var};
pub use layers::{BiLstm, LayerNorm, Linear, Lstm, Session};
pub use params::{ParamBuilder, ParamId, Params};
