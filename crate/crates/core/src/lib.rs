pub mod attack;
mod binio;
pub mod candidates;
pub mod error;
pub mod features;
pub mod geom;
pub mod ingest;
pub mod layout;
pub mod nn;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};

/// Single-precision network used for training and inference.
pub type Network = nn::Network<f32>;
/// Double-precision network used for gradient checking.
pub type Network64 = nn::Network<f64>;
