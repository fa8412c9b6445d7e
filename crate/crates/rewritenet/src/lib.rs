//! Differentiable parallel string rewriting with learnable rules.
//!
//! Layers carry a bank of (pattern, replacement) rules; a forward pass
//! fuzzily matches patterns against embedded substrings, resolves
//! conflicts with a Gumbel-Sinkhorn assignment, and rewrites matched
//! segments, changing sequence length where pattern and replacement
//! lengths differ. A discrete rewriting engine and finite-state
//! transducer toolkit provide exact oracles for the learned machinery.

pub mod assign;
pub mod checkpoint;
pub mod discrete;
pub mod error;
pub mod flops;
pub mod layer;
pub mod fstsim;
pub mod optim;
pub mod rnd;
pub mod runconfig;
pub mod sweep;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use tensor::Tensor;
