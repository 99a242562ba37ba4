//! Convolutional sparse coding and the CRNet super-resolution models.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] holds the dense `b×c×h×w` array type, zero-padded
//!   convolution and its adjoint, bicubic resampling, pixel shuffle and
//!   colour conversion.
//! * [`autodiff`] is a small reverse-mode engine over those primitives.
//! * [`csc`] is a standalone convolutional sparse coding solver (ISTA written
//!   as convolutions) together with a dense-matrix reference.
//! * [`models`] builds the pre-upsampling (CRNet-A) and post-upsampling
//!   (CRNet-B) networks whose core is an unrolled, weight-shared CISTA block.
//! * [`training`] and [`eval`] cover data preparation, optimisation,
//!   metrics, self-ensemble inference and checkpoints.

// `!(x > 0.0)` is how positivity checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod csc;
pub mod error;
pub mod eval;
pub mod image_io;
pub mod kv;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Dihedral, FilterBank, Shape, Tensor4};
