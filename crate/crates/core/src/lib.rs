//! Graph neural ODE forecasting for dynamic graphs with time-varying,
//! basis-decomposed node interactions.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod dynamics;
pub mod encoder;
pub mod error;
pub mod model;
pub mod numeric;
pub mod objective;
pub mod seed;
pub mod train;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
