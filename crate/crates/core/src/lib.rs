//! Reference-guided super-resolution for paired MRI contrasts.
//!
//! A low-resolution T2-like image is upsampled and enriched with texture
//! borrowed from a high-resolution PD-like reference. The pipeline runs a
//! small convolutional pyramid over both images, aligns reference patches to
//! the query grid at several scales, fuses the aligned features across scales
//! and decodes a residual on top of the bicubic upsample.

pub mod alignment;
pub mod autodiff;
pub mod data_io;
pub mod error;
pub mod extractor;
pub mod fusion;
pub mod gradsuite;
pub mod losses;
pub mod model;
pub mod pyramid;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::{ComplexTensor, GridMeta, ResizeMode, Tensor};
pub use pyramid::{Pyramid, Scale};
