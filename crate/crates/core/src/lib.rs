//! Aspect sentiment, opinion and triplet extraction.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom fix the precision.

pub mod ate;
pub mod atsa;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tagging;
pub mod towe_sla;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type AteModelF32 = model::AteModel<f32>;
pub type AteModelF64 = model::AteModel<f64>;
pub type StageTwoModelF32 = model::StageTwoModel<f32>;
pub type StageTwoModelF64 = model::StageTwoModel<f64>;
pub type TensorStoreF32 = nn::TensorStore<f32>;
pub type TensorStoreF64 = nn::TensorStore<f64>;
