//! Multi-view course embeddings learned from a typed heterogeneous network.

pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod hin;
pub mod io;
pub mod metapath;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod par;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
