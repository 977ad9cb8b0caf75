//! Dense numerical kernels shared by every other module.
//!
//! All kernels are pure functions over immutable inputs and are safe to call
//! from multiple threads. Storage is 32-bit; reductions (matmul, softmax,
//! layernorm, eigensolver) accumulate in 64-bit because attention chains of
//! 12-24 layers amplify rounding.

mod eigen;
mod kernels;
mod matrix;
mod resize;

pub use eigen::{sym_eigen_smallest, sym_eigen_smallest_f64, EigenPair};
pub use kernels::{gelu_tanh, layernorm, layernorm_rows, quick_gelu, softmax_rows, Activation};
pub use matrix::DenseMatrix;
pub use resize::{bilinear_resize, bilinear_resize_plane, ImageTensor};
