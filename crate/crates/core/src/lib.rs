//! Structural-feature analysis of knowledge graphs against link-prediction
//! quality: connected-subgraph sampling, structural features, from-scratch
//! embedding models, correlation and Sobol sensitivity analysis, and LIME
//! attribution of triple scores to embedding blocks.

pub mod error;
pub mod explain;
pub mod features;
pub mod graph;
pub mod kge;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
