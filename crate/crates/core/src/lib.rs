pub mod adaptation;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod segmenter;
pub mod stability;

pub use error::{Error, Result};
