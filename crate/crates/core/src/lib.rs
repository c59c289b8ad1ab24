//! Instruction-conditioned coordination for language-guided multi-agent control.
//!
//! A centralized coordinator turns instruction waypoints and the global state
//! into per-agent Gaussian latents; recurrent local agents act on their own
//! observations plus that latent, and a monotonic mixer combines their
//! utilities for value-decomposition training.

pub mod env;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod instruction;
pub mod llm;
pub mod model;
pub mod nn;
pub mod policy;
pub mod train;

pub use geometry::Vec2;
