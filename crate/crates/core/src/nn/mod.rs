//! Minimal differentiable building blocks with explicit forward caches and
//! hand-written backward passes.

mod adam;
mod embedding;
mod linear;
mod lstm;
pub mod ops;
mod param;
mod store;

pub use adam::{Adam, AdamConfig};
pub use embedding::{Embedding, EmbeddingTape, Vocabulary};
pub use linear::Linear;
pub use lstm::{BiLstm, BiLstmTape, Lstm, LstmTape};
pub use param::{join as param_join, Module, Param};
pub use store::TensorStore;
