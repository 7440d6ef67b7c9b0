pub mod balance;
pub mod error;
pub mod harness;
pub mod jet;
pub mod loss;
pub mod net;
pub mod optim;
pub mod problems;
pub mod sampling;

pub use error::{Error, Result};
