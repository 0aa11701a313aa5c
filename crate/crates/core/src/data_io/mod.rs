//! Image and tensor persistence, normalization, LR construction, synthetic
//! paired phantoms and acquisition noise.

mod noise;
mod pgm;
mod synth;
mod tensor_io;

pub use noise::{apply_noise, motion_kernel, NoiseSpec};
pub use pgm::{decode_image, encode_image, load_image, save_image};
pub use synth::{synth_pair, Correspondence, SynthPair, SynthPairSpec};
pub use tensor_io::{
    decode_checkpoint, decode_tensor, encode_checkpoint, encode_tensor, load_checkpoint, load_tensor, save_checkpoint,
    save_tensor, CHECKPOINT_MAGIC, FORMAT_VERSION, TENSOR_MAGIC,
};

use crate::error::{dim_err, Result};
use crate::numerics::{resize, ResizeMode, Tensor};

/// How many inputs fell outside [0, 1] and were clamped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NormalizeInfo {
    pub clamped: usize,
}

/// Maps raw [0, 1] intensities to [−1, 1].
pub fn normalize(raw: &Tensor) -> (Tensor, NormalizeInfo) {
    let clamped = raw.data().iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    (raw.map(|v| 2.0 * v.clamp(0.0, 1.0) - 1.0), NormalizeInfo { clamped })
}

pub fn denormalize(img: &Tensor) -> Tensor {
    img.map(|v| (v + 1.0) / 2.0)
}

/// Bicubic downsampling by an integer factor.
pub fn make_lr(hr: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, h, w) = hr.dims3()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(dim_err!("image {}x{} is not divisible by {}", h, w, factor));
    }
    resize(hr, h / factor, w / factor, ResizeMode::Bicubic)
}

/// Bicubic upsampling by an integer factor, clamped to the [−1, 1] image
/// range; the reference baseline for super-resolved outputs.
pub fn bicubic_upsample(lr: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, h, w) = lr.dims3()?;
    if factor == 0 {
        return Err(dim_err!("upsampling factor must be >= 1"));
    }
    Ok(resize(lr, h * factor, w * factor, ResizeMode::Bicubic)?.map(|v| v.clamp(-1.0, 1.0)))
}
