//! Phase-difference dynamics of an asymmetrically coupled chain of phase oscillators.

pub mod basin;
pub mod continuation;
pub mod equilibria;
pub mod error;
pub mod model;
pub mod numerics;
pub mod orbits;
pub mod simulate;

pub use error::{Error, Result};
