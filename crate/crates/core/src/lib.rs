pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod methods;
pub mod model;
pub mod numerics;
pub mod sculptor;

pub use error::{Error, Result};
