//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Graph`] is a tape: forward calls append nodes and store their values,
//! a single [`Graph::backward`] traverses the tape in reverse and returns a
//! [`GradientMap`] for every registered trainable parameter. The tape is
//! consumed by backward; a second call is a stale-graph error.
//!
//! The op set is the minimum needed by the audited models and the MINT
//! auditor: matmul, add, relu, sigmoid, softmax, embedding_lookup, mean_pool,
//! layer_norm, scaled_dot_attention, binary/categorical cross-entropy.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use graph::{GradientMap, Graph, NodeId};
pub use params::{ParamEntry, ParameterSet};
pub use tensor::Tensor;
#[doc(hidden)]
pub use tensor::{matmul_into_dispatch, matmul_into_seq};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward called on a consumed graph")]
    StaleGraph,
    #[error("loss node has {len} elements, expected a scalar")]
    NonScalarLoss { len: usize },
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: String },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("invalid tensor: shape {shape:?} does not match {len} values")]
    InvalidTensor { shape: Vec<usize>, len: usize },
    #[error("parameter file: {0}")]
    ParamFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Glorot-uniform initialization: values in `[-s, s]` with
/// `s = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: rand::Rng>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| s * (2.0 * rng.gen::<f64>() - 1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree by construction")
}
