pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod rng;
pub mod trainer;
pub mod transport;
pub mod vae;

pub use error::{Error, ErrorClass, Result};
