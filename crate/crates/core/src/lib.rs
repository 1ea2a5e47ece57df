//! Synthesis and evaluation of single-attribute image/text candidate sets.
//!
//! A test case holds K images and K captions that differ in exactly one
//! attribute (size, position, existence or count). This crate builds such
//! cases procedurally or through an external generative backend, stores and
//! validates them, scores matching models symmetrically from the image and
//! text sides, and provides a hard-negative-aware contrastive loss with
//! analytic gradients.

pub mod backend;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod hardneg;
pub mod scene;
pub mod seed;
pub mod semantics;
pub mod synthesis;
pub mod vocab;

pub use error::{Error, Result};
