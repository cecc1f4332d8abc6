//! Joint knowledge-graph and bipartite-graph embeddings for
//! interaction-aware medicine recommendation.

pub mod bipartite;
pub mod eval;
pub mod graph;
pub mod kg;
pub mod recommend;
pub mod space;
pub mod synth;
pub mod train;
pub mod config;
pub mod pipeline;

pub use pipeline::Error;
