//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value in a [`Graph`] is a 2-D matrix. Batched quantities are laid out
//! with one column per example, so a batch of `B` hidden states of width `H`
//! is an `H x B` matrix. Parameters live in a [`ParamStore`] outside the graph;
//! a graph borrows the store immutably while it is built and returns
//! [`Gradients`] keyed by [`ParamId`] from [`Graph::backward`].

mod graph;
mod params;

pub use graph::{sigmoid, softmax_columns, ConvGeometry, Graph, NodeId};
pub use params::{Gradients, Param, ParamId, ParamStore, ParamView};

pub type Matrix = ndarray::Array2<f64>;
