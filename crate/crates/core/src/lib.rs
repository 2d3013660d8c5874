//! Prototype-based discovery of known and novel categories from embeddings.

pub mod alignment;
pub mod assignment;
pub mod clustering;
pub mod config;
pub mod data_io;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod learning;
pub mod pipeline;
pub mod rng;
pub mod vector;

pub use error::{Error, Result};
