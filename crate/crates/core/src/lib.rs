//! Contrastive alignment between live-coding program embeddings and the
//! embeddings of the audio those programs produce.
//!
//! The crate covers the whole pipeline: templated corpus generation
//! ([`templater`]), OSC submission to a Sonic Pi server ([`soniclink`]),
//! paired-embedding datasets ([`dataset`]), the projection heads ([`nncore`]),
//! the InfoNCE objective ([`contrastive`]), alignment metrics ([`metrics`]) and
//! the training/sweep driver ([`trainer`]).

pub mod contrastive;
pub mod dataset;
pub mod metrics;
pub mod nncore;
pub mod rng;
pub mod soniclink;
pub mod templater;
pub mod trainer;

pub use nncore::RealMatrix;
