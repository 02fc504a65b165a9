//! Knowledge-base driven prompt generation.
//!
//! Tasks are embedded and clustered, each cluster is mapped to a small set of
//! prompting techniques, and new task descriptions are matched to a cluster to
//! synthesize a placeholder-bearing prompt template. The evaluation harness
//! scores templates on benchmark task directories and the temperature module
//! sweeps sampling temperatures with a one-way ANOVA on the results.

pub mod catalog;
pub mod clustering;
pub mod config;
pub mod evalharness;
pub mod kbforge;
pub mod promptgen;
pub mod prompts;
pub mod provider;
pub mod reply;
pub mod specfun;
pub mod storage;
pub mod tempopt;
pub mod vectors;
