pub mod adversary;
pub mod builder;
pub mod compress;
pub mod dag;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metric;
pub mod offline;

pub use error::{Error, Result};
