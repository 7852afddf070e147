//! Long-term citation count prediction from early citation history with
//! stacked LSTMs and attention pooling, trained from scratch.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model_io;
pub mod network;
pub mod numkit;
pub mod training;

pub use error::{Error, Result};
