//! Gold-label-free evaluation and optimization of LLM instruction prompts.
//!
//! The library scores candidate prompts on a QA dataset without consulting
//! gold answers. Each prompt gets a per-question self-consistency score
//! (majority-vote agreement across sampled completions), and scores are then
//! refined across prompts: prompts that produce the same answer to a question
//! are pulled toward a shared confidence value by minimizing a convex
//! quadratic loss. The refined scores drive an optimizer loop in which an LLM
//! proposes new candidate prompts from a meta-prompt of past (prompt, score)
//! pairs.
//!
//! Modules:
//! - [`answers`]: answer extraction, canonicalization, majority voting
//! - [`dataset`]: JSONL question sets and seeded subsetting
//! - [`solver`]: the mutual-consistency refinement (closed form + gradient descent)
//! - [`backend`]: LLM transports (HTTP with cache and retries, deterministic replay)
//! - [`optimizer`]: prompt evaluation, meta-prompt construction, the optimization loop
//! - [`harness`]: gold-label analysis (accuracy, rank correlation, dataset cleaning)
//! - [`report`]: run-directory reports
//! - [`config`]: TOML run configuration

pub mod answers;
pub mod backend;
pub mod config;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod optimizer;
pub mod report;
pub mod solver;

pub use error::{Error, Result};
