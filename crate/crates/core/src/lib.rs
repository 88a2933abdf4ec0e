//! Orthogonal-subscale stabilized finite elements for convection-diffusion-reaction
//! problems, with goal-oriented a posteriori error estimation.

pub mod assembly;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod expr;
pub mod fe;
pub mod harness;
pub mod mesh;
pub mod problem;
pub mod solver;
pub mod sparse;
pub mod vtk;

pub use error::{Error, Result};
