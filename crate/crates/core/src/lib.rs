//! Convex margin losses and their f-divergences, random Fourier feature
//! discriminators, and a generative trainer that solves the Fenchel-dual
//! max-max problem in place of the usual adversarial max-min.

pub mod audit;
pub mod checkpoint;
pub mod cli;
pub mod densities;
pub mod divergences;
pub mod duality;
pub mod error;
pub mod generator;
pub mod losses;
pub mod optim;
pub mod rff;
pub mod trainer;

pub use error::{Error, Result};
