//! Dense tensor container and the kernels the pipeline is built from.
//!
//! Every function here is pure: inputs are borrowed immutably and a fresh
//! tensor is returned. The `*_backward` companions are the adjoints used by
//! [`crate::autodiff`].

mod conv;
mod fft;
mod linalg;
mod patches;
mod resize;
mod softmax;
mod tensor;

pub use conv::{avg_pool, avg_pool_backward, conv2d, conv2d_backward, filter2d_valid, filter2d_valid_backward};
pub use fft::{fft2, fft2_backward, fft2_complex};
pub use linalg::{cholesky_solve, linear, linear_backward, matmul, matmul_bt};
pub(crate) use linalg::gemm;
pub use patches::{coverage, fold, fold_backward, fold_sum, unfold, GridMeta};
pub use resize::{resize, resize_backward, ResizeMode};
pub(crate) use softmax::softmax_in_place;
pub use softmax::{softmax_rows, softmax_rows_backward};
pub use tensor::{ComplexTensor, Tensor};
