//! Frame synthesis engine built around neighbor correspondence matching.
//!
//! The crate provides a small differentiable tensor core ([`tensor`]), the
//! multi-scale correspondence matcher ([`ncm`]), the heterogeneous
//! coarse-to-fine flow estimator and synthesis pipeline ([`flow`]),
//! toy-scale progressive training on synthetic motion data ([`train`]),
//! and the supporting I/O and metrics used by the CLI.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
