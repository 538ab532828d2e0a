//! Adaptive, iterative retrieval-augmented QA pipeline.
//!
//! The crate is organized bottom-up: [`domain`] holds the shared types,
//! [`ingest`] and [`retrieval`] build the searchable index, [`gateway`]
//! talks to a chat-completion backend (live or scripted), [`agents`]
//! renders prompts and parses agent outputs, and [`econ`] carries the
//! cost and latency models.

pub mod agents;
pub mod config;
pub mod domain;
pub mod econ;
pub mod error;
pub mod evalharness;
pub mod gateway;
pub mod ingest;
pub mod orchestrator;
pub mod retrieval;

pub use error::{Error, Result};
