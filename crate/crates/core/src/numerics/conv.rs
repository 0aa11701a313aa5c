use super::linalg::gemm;
use super::Tensor;
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn conv_geom(x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<(usize, ConvGeom)> {
    let (cin, h, w) = x.dims3()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin {
        return Err(dim_err!("conv2d input has {} channels, weight expects {}", cin, wcin));
    }
    if kh == 0 || kw == 0 || stride == 0 {
        return Err(dim_err!("conv2d needs kernel >= 1 and stride >= 1"));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(dim_err!("conv2d kernel {}x{} larger than padded input {}x{}", kh, kw, h + 2 * pad, w + 2 * pad));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    Ok((cout, ConvGeom { cin, h, w, kh, kw, stride, pad, oh, ow }))
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.oh * g.ow;
    let mut cols = vec![0.0; g.cin * g.kh * g.kw * p];
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.oh * g.ow;
    let mut x = vec![0.0; g.cin * g.h * g.w];
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] += cols[row + oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Zero-padded 2-D cross-correlation of `x[Cin,H,W]` with `weight[Cout,Cin,kh,kw]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (cout, g) = conv_geom(x, weight, stride, pad)?;
    if bias.shape() != [cout] {
        return Err(dim_err!("conv2d bias shape {:?}, expected [{}]", bias.shape(), cout));
    }
    let q = g.cin * g.kh * g.kw;
    let p = g.oh * g.ow;
    let cols = im2col(x.data(), &g);
    let mut out = vec![0.0; cout * p];
    for (co, row) in out.chunks_mut(p).enumerate() {
        row.fill(bias.data()[co]);
    }
    gemm(cout, q, p, weight.data(), false, &cols, false, &mut out, true);
    Tensor::new(&[cout, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`] with respect to `(x, weight, bias)`.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (cout, g) = conv_geom(x, weight, stride, pad)?;
    if grad_out.shape() != [cout, g.oh, g.ow] {
        return Err(dim_err!("conv2d grad shape {:?} does not match output", grad_out.shape()));
    }
    let q = g.cin * g.kh * g.kw;
    let p = g.oh * g.ow;
    let cols = im2col(x.data(), &g);
    let mut dw = vec![0.0; cout * q];
    gemm(cout, p, q, grad_out.data(), false, &cols, true, &mut dw, false);
    let mut dcols = vec![0.0; q * p];
    gemm(q, cout, p, weight.data(), true, grad_out.data(), false, &mut dcols, false);
    let dx = col2im(&dcols, &g);
    let db: Vec<f64> = grad_out.data().chunks(p).map(|r| r.iter().sum()).collect();
    Ok((
        Tensor::new(x.shape(), dx)?,
        Tensor::new(weight.shape(), dw)?,
        Tensor::new(&[cout], db)?,
    ))
}

/// Non-overlapping `k×k` mean pooling; `H` and `W` must be multiples of `k`.
pub fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(dim_err!("avg_pool factor {} does not divide {}x{}", k, h, w));
    }
    if k == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (h / k, w / k);
    let norm = 1.0 / (k * k) as f64;
    let src = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ci * oh + y / k) * ow + xx / k] += src[(ci * h + y) * w + xx] * norm;
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

pub fn avg_pool_backward(grad_out: &Tensor, k: usize) -> Result<Tensor> {
    let (c, oh, ow) = grad_out.dims3()?;
    let (h, w) = (oh * k, ow * k);
    let norm = 1.0 / (k * k) as f64;
    let g = grad_out.data();
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ci, rest) = (i / (h * w), i % (h * w));
        let (y, xx) = (rest / w, rest % w);
        g[(ci * oh + y / k) * ow + xx / k] * norm
    }))
}

/// Valid (unpadded) correlation of every channel of `x[C,H,W]` with the same
/// 2-D `kernel[kh,kw]`.
pub fn filter2d_valid(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let (kh, kw) = kernel.dims2()?;
    if kh > h || kw > w {
        return Err(dim_err!("filter {}x{} larger than image {}x{}", kh, kw, h, w));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let (src, k) = (x.data(), kernel.data());
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for ky in 0..kh {
                    let base = (ci * h + oy + ky) * w + ox;
                    let krow = &k[ky * kw..(ky + 1) * kw];
                    s += krow.iter().zip(&src[base..base + kw]).map(|(a, b)| a * b).sum::<f64>();
                }
                out[(ci * oh + oy) * ow + ox] = s;
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

/// Adjoint of [`filter2d_valid`]: maps an output-shaped gradient back to `[C,h,w]`.
pub fn filter2d_valid_backward(grad_out: &Tensor, kernel: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, oh, ow) = grad_out.dims3()?;
    let (kh, kw) = kernel.dims2()?;
    if oh + kh - 1 != h || ow + kw - 1 != w {
        return Err(dim_err!("filter adjoint target {}x{} inconsistent with grad {}x{}", h, w, oh, ow));
    }
    let (g, k) = (grad_out.data(), kernel.data());
    let mut dx = vec![0.0; c * h * w];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[(ci * oh + oy) * ow + ox];
                if gv == 0.0 {
                    continue;
                }
                for ky in 0..kh {
                    let base = (ci * h + oy + ky) * w + ox;
                    for kx in 0..kw {
                        dx[base + kx] += gv * k[ky * kw + kx];
                    }
                }
            }
        }
    }
    Tensor::new(&[c, h, w], dx)
}
