//! Revealed-preference workbench for two-asset portfolio-choice experiments.
//!
//! The crate scores choice datasets for consistency with utility and
//! expected-utility maximization, simulates and recovers
//! disappointment-averse preferences, and drives chat-model choice
//! experiments through a pluggable backend.

pub mod analysis;
pub mod da_model;
pub mod data;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod eu_deviation;
pub mod rationality;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
