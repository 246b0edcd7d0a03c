//! Freeway speed-field reconstruction from sparse probe-vehicle trajectories.
//!
//! The pipeline: simulate single-lane traffic ([`microsim`]), turn complete
//! trajectory sets into dense "true" speed fields ([`groundtruth`]), encode a
//! random probe subset as a three-channel image ([`probes`]), and train an
//! encoder–decoder CNN ([`nn`], [`training`]) whose kernels may be restricted
//! to the space-time directions traffic waves can travel ([`masks`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod eval;
pub mod grid;
pub mod groundtruth;
pub mod masks;
pub mod microsim;
pub mod nn;
pub mod probes;
pub mod training;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/ground-truth.md")]
    mod ground_truth {}
    #[doc = include_str!("../../../book/src/probes.md")]
    mod probes {}
    #[doc = include_str!("../../../book/src/masks.md")]
    mod masks {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
