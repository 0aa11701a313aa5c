//! Acquisition artefacts: directional motion blur and band-limited
//! radio-frequency stripes.

use std::f64::consts::PI;

use crate::error::{contract_err, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSpec {
    None,
    /// Line blur of `length` pixels along `angle_deg` (0 = horizontal).
    Motion { length: usize, angle_deg: f64 },
    /// `amplitude·sin(2π·frequency·x/W)` added to rows `[row_start, row_start + rows)`.
    Rf { frequency: usize, amplitude: f64, row_start: usize, rows: usize },
}

/// Normalized line kernel of odd side length, sampled densely along the
/// direction and splatted bilinearly.
pub fn motion_kernel(length: usize, angle_deg: f64) -> Tensor {
    if length <= 1 {
        return Tensor::ones(&[1, 1]);
    }
    let radius = length.div_ceil(2);
    let side = 2 * radius + 1;
    let (dy, dx) = (angle_deg.to_radians().sin(), angle_deg.to_radians().cos());
    let mut k = Tensor::zeros(&[side, side]);
    let samples = 8 * length;
    let half = (length - 1) as f64 / 2.0;
    for s in 0..samples {
        let t = -half + 2.0 * half * s as f64 / (samples - 1) as f64;
        let (y, x) = (radius as f64 + t * dy, radius as f64 + t * dx);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        for (oy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (ox, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (yy, xx) = (y0 as usize + oy, x0 as usize + ox);
                if yy < side && xx < side {
                    let v = k.get(&[yy, xx]) + wy * wx;
                    k.set(&[yy, xx], v);
                }
            }
        }
    }
    let total = k.sum();
    k.map(|v| v / total)
}

/// Circular convolution of every channel with a centred kernel.
fn convolve_circular(img: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    let (kh, kw) = kernel.dims2()?;
    let (ry, rx) = (kh / 2, kw / 2);
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kv = kernel.get(&[ky, kx]);
                        if kv != 0.0 {
                            let sy = (y + h * kh - ky + ry) % h;
                            let sx = (x + w * kw - kx + rx) % w;
                            acc += kv * img.get(&[ch, sy, sx]);
                        }
                    }
                }
                out.set(&[ch, y, x], acc);
            }
        }
    }
    Ok(out)
}

pub fn apply_noise(img: &Tensor, spec: &NoiseSpec) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    match *spec {
        NoiseSpec::None => Ok(img.clone()),
        NoiseSpec::Motion { length, angle_deg } => {
            if !angle_deg.is_finite() {
                return Err(contract_err!("motion angle must be finite"));
            }
            if length <= 1 {
                return Ok(img.clone());
            }
            convolve_circular(img, &motion_kernel(length, angle_deg))
        }
        NoiseSpec::Rf { frequency, amplitude, row_start, rows } => {
            if !amplitude.is_finite() {
                return Err(contract_err!("interference amplitude must be finite"));
            }
            if amplitude == 0.0 || rows == 0 {
                return Ok(img.clone());
            }
            if frequency == 0 || 2 * frequency >= w {
                return Err(contract_err!("interference frequency {} must lie in 1..{}", frequency, w.div_ceil(2)));
            }
            if row_start >= h {
                return Err(contract_err!("interference band starts at row {} of {}", row_start, h));
            }
            let mut out = img.clone();
            let wave: Vec<f64> = (0..w).map(|x| amplitude * (2.0 * PI * (frequency * x) as f64 / w as f64).sin()).collect();
            for ch in 0..c {
                for y in row_start..(row_start + rows).min(h) {
                    for (x, s) in wave.iter().enumerate() {
                        let v = out.get(&[ch, y, x]) + s;
                        out.set(&[ch, y, x], v);
                    }
                }
            }
            Ok(out)
        }
    }
}
