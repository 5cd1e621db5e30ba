//! Minimal dense tensor engine: row-major matrices, a define-by-run
//! reverse-mode tape, Adam, and a checksummed checkpoint container.

mod adam;
pub mod checkpoint;
mod element;
mod error;
pub mod gradcheck;
mod graph;
mod param;
mod sparse;
mod tensor;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use element::Element;
pub use error::{Result, TensorError};
pub use graph::{sigmoid, Gradients, Graph, Reduction, Var, PROB_EPS};
pub use param::{Param, ParamId, ParamStore};
pub use sparse::SparseMatrix;
pub use tensor::Tensor;
