//! Trainable function approximators and the machinery they run on.
//!
//! Everything is `f64`. Gradients come from [`tape::Tape`], a small reverse-mode
//! recorder; every network's backward pass is checked against central finite
//! differences in the tests.

pub mod adam;
pub mod agent;
pub mod coordinator;
pub mod gaussian;
pub mod layers;
pub mod matrix;
pub mod mixer;
pub mod params;
pub mod posterior;
pub mod tape;

use thiserror::Error;

pub use adam::Adam;
pub use agent::AgentQNet;
pub use coordinator::{CoordinatorNet, CoordinatorVars, LatentInstruction};
pub use gaussian::{DiagGaussian, GaussianError, GaussianVars, VARIANCE_FLOOR};
pub use layers::{GruCell, Linear, Mlp};
pub use matrix::{argmax, Matrix};
pub use mixer::MonotonicMixer;
pub use params::{Gradients, ParamId, ParamStore};
pub use posterior::PosteriorNet;
pub use tape::{Adjoints, Tape, Var};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{what}: expected length {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

impl NnError {
    pub(crate) fn check(what: &'static str, expected: usize, actual: usize) -> Result<(), NnError> {
        if expected == actual {
            Ok(())
        } else {
            Err(NnError::Shape {
                what,
                expected,
                actual,
            })
        }
    }
}
