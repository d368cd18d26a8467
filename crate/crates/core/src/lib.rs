pub mod dense;
pub mod error;
pub mod grid;
pub mod norms;
pub mod perturbation;
pub mod region;
pub mod resolvent;
pub mod symbol;
pub mod weyl;

pub use error::{Error, Result};
