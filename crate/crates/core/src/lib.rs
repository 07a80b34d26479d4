//! Word-level gradient attribution for brain alignment and next-word
//! prediction on desk-scale language models.

pub mod attribution;
pub mod autodiff;
pub mod encoder;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod pipeline;
pub mod stimulus;
pub mod synth;

pub use error::{Error, Result};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
