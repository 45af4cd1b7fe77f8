//! Live music generation engine: chunked autoregressive streaming over
//! residual-vector-quantized audio tokens, steered by weighted style prompts,
//! descriptor controls and injected live audio.

pub mod audio;
pub mod codec;
pub mod controls;
pub mod dsp;
pub mod error;
pub mod hash;
pub mod inject;
pub mod model;
pub mod registry;
pub mod rvq;
pub mod sampling;
pub mod stream;
pub mod style;
pub mod tokens;

pub use error::{Error, Result};
