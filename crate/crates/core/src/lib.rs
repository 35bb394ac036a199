//! Saliency-guided, quantization-aware training of a small CNN, plus the
//! tools to measure what quantization does to accuracy, compute cost and
//! saliency-map fidelity.

pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod quant;
pub mod rng;
pub mod saliency;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};
