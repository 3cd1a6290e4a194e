// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
mod kernels;
pub mod linalg;
pub mod field;
pub mod pde;
pub mod container;
pub mod deeponet;
pub mod rkhs;
pub mod transfer;
pub mod bench;
