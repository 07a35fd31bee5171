//! Structured textual document identifiers for generative retrieval.
//!
//! The pipeline turns a corpus into hierarchical k-means codebook paths,
//! replaces every numeric label with the top keywords of its cluster, and
//! retrieves documents by beam search constrained to a trie over the
//! resulting identifiers.
//!
//! ```text
//! ingest -> embed -> cluster -> extract -> forge -> (smooth) -> trie -> train -> decode -> eval
//! ```

pub mod cli;
pub mod cluster;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod forge;
pub mod priors;
pub mod smooth;
pub mod text;
pub mod trie;

pub use error::{Error, Result};
