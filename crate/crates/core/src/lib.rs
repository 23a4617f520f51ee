//! Desk-scale laboratory for diversity-driven robust reinforcement learning.
//!
//! The crate trains a set of latent-conditioned maximum-entropy policies with
//! a return-gated diversity bonus (SMERL), evaluates them under a few-shot
//! robustness protocol against structured environment perturbations, and
//! machine-verifies the underlying robustness-set theory by brute force on
//! small finite MDPs.
//!
//! Everything is tabular and exactly reproducible: environments are immutable
//! descriptions, all randomness flows from a single master seed through
//! hierarchical stream derivation, and checkpoints round-trip bit-exactly.

pub mod checkpoint;
pub mod discriminator;
pub mod env;
pub mod error;
pub mod eval;
pub mod gridworld;
pub mod learner;
pub mod mdp;
pub mod mi;
pub mod perturb;
pub mod pointmass;
pub mod policy;
pub mod report;
pub mod rng;
pub mod theory;

pub use error::CoreError;

/// Convenience result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
