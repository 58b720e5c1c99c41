//! Dense and sparse kernels, nonlinearities, the classification loss, and Adam.
//!
//! Storage is `f32`; every reduction (dot products, row accumulations, loss
//! sums) runs in `f64`.

mod adam;
mod csr;
mod dense;
mod ops;

pub use adam::{adam_step, AdamConfig, AdamState, ParamGrad};
pub use csr::{spgemm, spmm, CsrMatrix};
pub use dense::{gemm, DenseMatrix};
pub use ops::{relu, relu_backward, softmax_cross_entropy, softmax_rows};
