//! Reverse-mode differentiation for the layer chain the estimator network
//! needs, plus the Adam optimizer. All arithmetic is `f64`.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod tensor;

pub use adam::AdamState;
pub use layers::{Layer, LayerSpec, Mode, Sequential};
pub use tensor::{Tensor, TensorError};
