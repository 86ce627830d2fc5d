//! File formats, the experiment harness and the command-line front end for
//! [`sketchlr_core`].

pub mod harness;
pub mod io;

pub use sketchlr_core as core;
