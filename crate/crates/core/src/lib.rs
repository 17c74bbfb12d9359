//! Adversarial-text detection laboratory.
//!
//! Trains small text classifiers, builds reference-model ensembles by
//! decomposing the victim's embedding layer, detects adversarial inputs via
//! prediction inconsistency, attacks the victims with word/char/multi-level
//! black-box attacks, and evaluates detection quality.

pub mod error;
pub mod numerics;
pub mod textcore;

pub mod models;

pub mod ensemble;

pub mod checkpoint;

pub mod theory;

pub mod attacks;

pub mod corpus;

pub mod harness;

pub use error::{Error, Result};
