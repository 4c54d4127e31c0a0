//! Influence-function attributors, Linear Datamodeling Score evaluation and
//! retraining-free selection of the regularization strength λ.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attrib;
pub mod error;
pub mod eval;
pub mod model;
pub mod select;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Checkpoint, Dataset, ModelKind, ModelSpec};
pub use tensor::{DenseMatrix, SeededRng, SymEig};
