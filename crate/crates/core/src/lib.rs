//! Joint aspect extraction and aspect-level sentiment tagging over a
//! dynamic heterogeneous graph.
//!
//! Words and the three polarity labels (POS/NEG/NEU) are nodes of one graph.
//! Word nodes are wired by syntactic and positional edges; word-to-polarity
//! edges are inserted while the model iterates over its own confident
//! sentiment predictions. A gated graph network with one aggregation channel
//! per edge type encodes the graph, a linear-chain CRF tags aspect spans and
//! two sentiment heads score polarities.
//!
//! Everything numeric runs on a small double-precision reverse-mode tape in
//! [`numcore`], so every gradient can be checked against finite differences.

// Positive-threshold checks are written `!(x > 0.0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod decode;
pub mod dhg;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
