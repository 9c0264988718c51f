pub mod baselines;
pub mod cli;
pub mod config;
pub mod data;
pub mod discretization;
pub mod evaluation;
pub mod error;
pub mod io;
pub mod layers;
pub mod losses;
pub mod model;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
