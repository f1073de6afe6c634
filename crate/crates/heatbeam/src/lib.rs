pub mod audit;
pub mod control;
pub mod error;
pub mod grid;
pub mod modal;
pub mod operators;
pub mod par;
pub mod report;
pub mod simulator;
pub mod weights;

pub use error::{Error, Result};
