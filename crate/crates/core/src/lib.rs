//! Information-bottleneck classifiers with blind unlearning: the server
//! removes a client's data using only masked, compressed representations of
//! it, never the raw inputs.
//!
//! The pipeline runs `data` → `vib` (training) → `protocol` (client request
//! under a `masking` privacy account) → `unlearn` (server side, with a `mine`
//! critic) → `evalkit`. `cli` wires it to files for the `blind-unlearn` binary.

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod data;
pub mod vib;
pub mod masking;
pub mod mine;
pub mod protocol;
pub mod unlearn;
pub mod evalkit;
pub mod cli;
