//! Similarity-preserving embedding built on fused graph distances.
//!
//! The pipeline models the structure of a dataset as one or more weighted
//! neighbourhood graphs ([`structure`]), turns geodesic distances on those
//! graphs into t-distribution similarities ([`similarity`]) and fits a
//! low-dimensional embedding whose own similarities match them under one of
//! several pairwise losses ([`losses`], [`embed`]). [`eval`] scores the
//! result and [`io`] covers file formats and the command-line front end.

pub mod embed;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod similarity;
pub mod special;
pub mod structure;

pub use error::{Error, Result};
