pub mod bitstream;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod frame;
pub mod metrics;
pub mod pipeline;
pub mod quant;

pub use error::{Error, Result};
