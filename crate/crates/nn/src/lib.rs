//! Dense tensors and Transformer building blocks with hand-written backward
//! passes, an Adam optimizer and a finite-difference gradient checker.
//!
//! All layers are generic over [`Scalar`]: `f32` for training and inference,
//! `f64` for gradient checks.

pub mod adam;
pub mod attention;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod transformer;

pub use adam::{Adam, AdamConfig};
pub use attention::MultiHeadAttention;
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{gelu, gelu_backward, log_softmax, softmax, Embedding, LayerNorm, Linear};
pub use params::{named_tensors, parameter_count, zeros_like, Parameters};
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;
pub use transformer::{TransformerLayer, TransformerStack};
