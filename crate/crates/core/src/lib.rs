//! Joint relation extraction and knowledge-graph link prediction over
//! shared embedding tables.

pub mod batch;
pub mod config;
pub mod corpus;
pub mod digest;
pub mod embeddings;
pub mod error;
pub mod kglp_model;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod re_model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
