use super::Tensor;
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMode {
    Nearest,
    Bilinear,
    Bicubic,
}

const CUBIC_A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Per-output-sample `(source index, weight)` taps along one axis, using the
/// half-pixel (align-corners-false) coordinate convention.
fn axis_taps(len_in: usize, len_out: usize, mode: ResizeMode) -> Vec<Vec<(usize, f64)>> {
    let scale = len_in as f64 / len_out as f64;
    let last = len_in as isize - 1;
    let clampi = |i: isize| i.clamp(0, last) as usize;
    (0..len_out)
        .map(|o| match mode {
            ResizeMode::Nearest => vec![(((o * len_in) / len_out).min(len_in - 1), 1.0)],
            ResizeMode::Bilinear => {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = src.floor() as isize;
                let t = src - i0 as f64;
                vec![(clampi(i0), 1.0 - t), (clampi(i0 + 1), t)]
            }
            ResizeMode::Bicubic => {
                let src = (o as f64 + 0.5) * scale - 0.5;
                let i0 = src.floor() as isize;
                let t = src - i0 as f64;
                vec![
                    (clampi(i0 - 1), cubic(t + 1.0)),
                    (clampi(i0), cubic(t)),
                    (clampi(i0 + 1), cubic(1.0 - t)),
                    (clampi(i0 + 2), cubic(2.0 - t)),
                ]
            }
        })
        .collect()
}

/// Resamples every channel of `x[C,H,W]` to `out_h × out_w`.
pub fn resize(x: &Tensor, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(dim_err!("resize target must be at least 1x1"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let tx = axis_taps(w, out_w, mode);
    let ty = axis_taps(h, out_h, mode);
    let src = x.data();
    let mut tmp = vec![0.0; c * h * out_w];
    for row in 0..c * h {
        let s = &src[row * w..(row + 1) * w];
        for (ox, taps) in tx.iter().enumerate() {
            tmp[row * out_w + ox] = taps.iter().map(|&(i, wt)| s[i] * wt).sum();
        }
    }
    let mut out = vec![0.0; c * out_h * out_w];
    for ci in 0..c {
        for (oy, taps) in ty.iter().enumerate() {
            let dst = &mut out[(ci * out_h + oy) * out_w..(ci * out_h + oy + 1) * out_w];
            for &(iy, wt) in taps {
                let s = &tmp[(ci * h + iy) * out_w..(ci * h + iy + 1) * out_w];
                dst.iter_mut().zip(s).for_each(|(d, v)| *d += wt * v);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Adjoint of [`resize`]: maps a `[C,out_h,out_w]` gradient back to `[C,h,w]`.
pub fn resize_backward(grad_out: &Tensor, h: usize, w: usize, mode: ResizeMode) -> Result<Tensor> {
    let (c, out_h, out_w) = grad_out.dims3()?;
    if (h, w) == (out_h, out_w) {
        return Ok(grad_out.clone());
    }
    let tx = axis_taps(w, out_w, mode);
    let ty = axis_taps(h, out_h, mode);
    let g = grad_out.data();
    let mut tmp = vec![0.0; c * h * out_w];
    for ci in 0..c {
        for (oy, taps) in ty.iter().enumerate() {
            let s = &g[(ci * out_h + oy) * out_w..(ci * out_h + oy + 1) * out_w];
            for &(iy, wt) in taps {
                let d = &mut tmp[(ci * h + iy) * out_w..(ci * h + iy + 1) * out_w];
                d.iter_mut().zip(s).for_each(|(d, v)| *d += wt * v);
            }
        }
    }
    let mut dx = vec![0.0; c * h * w];
    for row in 0..c * h {
        let s = &tmp[row * out_w..(row + 1) * out_w];
        let d = &mut dx[row * w..(row + 1) * w];
        for (ox, taps) in tx.iter().enumerate() {
            for &(i, wt) in taps {
                d[i] += wt * s[ox];
            }
        }
    }
    Tensor::new(&[c, h, w], dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(&[2, 8, 6], 0.3);
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear, ResizeMode::Bicubic] {
            for (h, w) in [(16, 12), (2, 3), (5, 7)] {
                let y = resize(&x, h, w, mode).unwrap();
                assert!(y.data().iter().all(|v| (v - 0.3).abs() < 1e-12), "{mode:?} {h}x{w}");
            }
        }
    }

    #[test]
    fn nearest_2x_replicates_blocks() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = resize(&x, 4, 4, ResizeMode::Nearest).unwrap();
        #[rustfmt::skip]
        let want = [1.0, 1.0, 2.0, 2.0,
                    1.0, 1.0, 2.0, 2.0,
                    3.0, 3.0, 4.0, 4.0,
                    3.0, 3.0, 4.0, 4.0];
        assert_eq!(y.data(), &want);
    }

    #[test]
    fn bilinear_reproduces_ramp() {
        // Closed form: output column o samples the ramp at clamp((o+0.5)/2-0.5, 0, w-1).
        let w = 7;
        let x = Tensor::from_fn(&[1, 3, w], |i| 0.25 * (i % w) as f64 - 0.4);
        let y = resize(&x, 6, 2 * w, ResizeMode::Bilinear).unwrap();
        for r in 0..6 {
            for o in 0..2 * w {
                let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (w - 1) as f64);
                assert!((y.get(&[0, r, o]) - (0.25 * src - 0.4)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bicubic_downsample_samples_ramp_exactly() {
        let x = Tensor::from_fn(&[1, 16, 16], |i| 0.1 * (i % 16) as f64 + 0.05 * (i / 16) as f64);
        let y = resize(&x, 4, 4, ResizeMode::Bicubic).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let (sy, sx) = (4.0 * r as f64 + 1.5, 4.0 * c as f64 + 1.5);
                assert!((y.get(&[0, r, c]) - (0.1 * sx + 0.05 * sy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear, ResizeMode::Bicubic] {
            for (h, w, oh, ow) in [(4, 5, 8, 10), (8, 8, 2, 3), (6, 4, 9, 3)] {
                let x = Tensor::rand_uniform(&[2, h, w], -1.0, 1.0, &mut rng);
                let y = resize(&x, oh, ow, mode).unwrap();
                let g = Tensor::rand_uniform(y.shape(), -1.0, 1.0, &mut rng);
                let dx = resize_backward(&g, h, w, mode).unwrap();
                let lhs = y.mul(&g).unwrap().sum();
                assert!((lhs - dx.mul(&x).unwrap().sum()).abs() < 1e-12);
            }
        }
    }
}
