//! Sketching and recovery of matrices that are simultaneously sparse and
//! low-rank.
//!
//! A matrix `X = Σ λ_i v_i v_iᵀ` (or `Σ σ_i u_i v_iᵀ`) whose factor vectors
//! are `k`-sparse is compressed with a sparse 0/1 parity-check matrix combined
//! column-wise with a small bin-detection matrix. Recovery runs in two
//! stages:
//!
//! * [`stage_a`] peels individual nonzero matrix entries out of singleton
//!   bins of the sketch.
//! * [`stage_b`] peels the factor-vector entries out of the recovered
//!   pairwise products (disjoint supports), or [`densedecomp`] decomposes the
//!   small recovered submatrix (overlapping supports).
//!
//! Neither the sketch size nor the recovery cost depends on the ambient
//! dimension: parity-check columns are generated on demand from a seed and
//! nothing of length `n` is ever allocated on the noiseless path.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, timing and the
//! command line live in the companion `sketchlr` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dense;
pub mod densedecomp;
mod error;
pub mod instance;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sizing;
pub mod sketcher;
pub mod stage_a;
pub mod stage_b;

pub use error::{Error, Result};
pub use model::{EntryMap, GroundTruth, Shape, SparseVector};
