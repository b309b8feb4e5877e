pub mod acquisition;
pub mod bnn;
pub mod error;
pub mod gaussian;
pub mod gp;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod models;
pub mod posterior;
pub mod rng;
pub mod synth;
pub mod tal;

pub use error::{Error, Result};
