//! Hierarchical character-level neural machine translation.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod generator;
pub mod model;
pub mod numerics;
pub mod search;
pub mod training;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use model::{Model, ModelKind, Vocabs};
