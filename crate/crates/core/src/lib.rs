pub mod band1d;
pub mod cli;
pub mod error;
pub mod fiber;
pub mod inputs;
pub mod isoenergetic;
pub mod lattice;
pub mod multiscale;
pub mod perturb;
pub mod potential;
pub mod profile;
pub mod resonance;
pub mod verify;
pub mod wavefunction;

pub use error::{Error, Result};
