//! Band-partitioned class co-occurrence priors for UI layout detection.
//!
//! A corpus of annotated layouts is cut into horizontal bands; per band,
//! class pairs that appear together are counted and normalized into a
//! symmetric graph ([`prior`]). The graphs condition proposal features
//! ([`conditioning`]) or re-score detections directly ([`rescore`]), and
//! [`eval`] measures the result with COCO-style AP/AR.
//!
//! [`synth`] samples corpora from planted graphs for controlled experiments.
//! All randomness uses ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64`, so outputs do not depend on the host platform.

pub mod cli;
pub mod conditioning;
pub mod error;
pub mod eval;
pub mod files;
pub mod ingest;
pub mod layout;
pub mod matrix;
pub mod prior;
pub mod render;
pub mod rescore;
pub mod synth;

pub use error::{Error, Result};
pub use ingest::Corpus;
pub use layout::{BBox, ClassVocabulary, Component, LayoutDocument, ProposalBatch};
pub use matrix::Matrix;
pub use prior::{build_prior, BandConfig, CoOccurrenceGraphSet};
