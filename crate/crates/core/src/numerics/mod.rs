//! Dense matrices, a reverse-mode tape over a fixed primitive set, and a
//! finite-difference oracle for checking it.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::finite_difference_gradient;
pub use params::{GradientMap, ParamId, ParamStore};
pub use tape::{forward_backward, sigmoid, Segments, SparseMatrix, Tape, Var};
pub use tensor::Tensor;
