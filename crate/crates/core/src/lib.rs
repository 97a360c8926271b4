//! Lightweight biomedical entity linking.
//!
//! Pipeline: text normalization and abbreviation expansion, embedding-based
//! candidate generation against a knowledge base, and a small alignment +
//! CNN ranking network trained with a margin loss.

mod error;

pub mod abbrev;
pub mod candidates;
pub mod corpus;
pub mod diagnostics;
pub mod embeddings;
pub mod kb;
pub mod linker;
pub mod model;
pub mod preprocess;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
