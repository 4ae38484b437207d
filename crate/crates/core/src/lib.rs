pub mod autodiff;
pub mod cli;
pub mod data;
pub mod election;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod rules;
pub mod train;

pub use error::{Error, Result};
