//! Training objective (pixel L1, structural similarity, frequency
//! reconstruction) and the evaluation metrics.
//!
//! Images live in `[-1, 1]`. Each loss has a graph builder used for training
//! and a plain function that evaluates the same graph on constants.

use crate::autodiff::{Graph, Var};
use crate::error::{dim_err, Result};
use crate::numerics::Tensor;

/// Side of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Dynamic range of `[-1, 1]` data.
pub const SSIM_RANGE: f64 = 2.0;
pub const SSIM_C1: f64 = (0.01 * SSIM_RANGE) * (0.01 * SSIM_RANGE);
pub const SSIM_C2: f64 = (0.03 * SSIM_RANGE) * (0.03 * SSIM_RANGE);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the SSIM term.
    pub lambda1: f64,
    /// Weight of the frequency term.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 0.1, lambda2: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l1: f64,
    pub ssim_loss: f64,
    pub fr: f64,
    pub total: f64,
}

fn check_pair(sr: &Tensor, hr: &Tensor) -> Result<()> {
    if !sr.same_shape(hr) {
        return Err(dim_err!("prediction {:?} and target {:?} differ in shape", sr.shape(), hr.shape()));
    }
    hr.dims3().map(|_| ())
}

/// Normalized 2-D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Tensor {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    Tensor::from_fn(&[size, size], |i| g[i / size] * g[i % size] / (s * s))
}

pub fn l1_graph(g: &mut Graph, sr: Var, hr: Var) -> Result<Var> {
    let d = g.sub(sr, hr)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

/// Mean local SSIM over all valid 11×11 Gaussian windows.
pub fn ssim_graph(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let (_, h, w) = g.value(x).dims3()?;
    if !g.value(x).same_shape(g.value(y)) {
        return Err(dim_err!("ssim inputs differ in shape"));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(dim_err!("ssim needs at least {0}x{0} images, got {1}x{2}", SSIM_WINDOW, h, w));
    }
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let mu_x = g.filter2d(x, &win)?;
    let mu_y = g.filter2d(y, &win)?;
    let e_xx = g.filter2d(xx, &win)?;
    let e_yy = g.filter2d(yy, &win)?;
    let e_xy = g.filter2d(xy, &win)?;
    let mx2 = g.mul(mu_x, mu_x)?;
    let my2 = g.mul(mu_y, mu_y)?;
    let mxy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(e_xx, mx2)?;
    let var_y = g.sub(e_yy, my2)?;
    let cov = g.sub(e_xy, mxy)?;

    let a = g.scale(mxy, 2.0);
    let a = g.add_scalar(a, SSIM_C1);
    let b = g.scale(cov, 2.0);
    let b = g.add_scalar(b, SSIM_C2);
    let num = g.mul(a, b)?;
    let c = g.add(mx2, my2)?;
    let c = g.add_scalar(c, SSIM_C1);
    let d = g.add(var_x, var_y)?;
    let d = g.add_scalar(d, SSIM_C2);
    let den = g.mul(c, d)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

pub fn ssim_loss_graph(g: &mut Graph, sr: Var, hr: Var) -> Result<Var> {
    let s = ssim_graph(g, sr, hr)?;
    let neg = g.scale(s, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Sum of `|ΔRe| + |ΔIm|` over the unnormalized spectra, divided by the bin
/// count `C·H·W` and again by `H·W`.
pub fn fr_graph(g: &mut Graph, sr: Var, hr: Var) -> Result<Var> {
    let (c, h, w) = g.value(sr).dims3()?;
    let d = g.sub(sr, hr)?;
    let re = g.fft_re(d)?;
    let im = g.fft_im(d)?;
    let are = g.abs(re);
    let aim = g.abs(im);
    let both = g.add(are, aim)?;
    let s = g.sum(both);
    Ok(g.scale(s, 1.0 / ((c * h * w) as f64 * (h * w) as f64)))
}

/// Builds `l1 + λ1·ssim_loss + λ2·fr` and returns `(total, [l1, ssim_loss, fr])`.
pub fn total_graph(g: &mut Graph, sr: Var, hr: Var, weights: &LossWeights) -> Result<(Var, [Var; 3])> {
    let l1 = l1_graph(g, sr, hr)?;
    let ss = ssim_loss_graph(g, sr, hr)?;
    let fr = fr_graph(g, sr, hr)?;
    let a = g.scale(ss, weights.lambda1);
    let b = g.scale(fr, weights.lambda2);
    let t = g.add(l1, a)?;
    let total = g.add(t, b)?;
    Ok((total, [l1, ss, fr]))
}

fn eval_pair(sr: &Tensor, hr: &Tensor, f: impl Fn(&mut Graph, Var, Var) -> Result<Var>) -> Result<f64> {
    check_pair(sr, hr)?;
    let mut g = Graph::new();
    let a = g.constant(sr.clone());
    let b = g.constant(hr.clone());
    let out = f(&mut g, a, b)?;
    Ok(g.value(out).data()[0])
}

/// Mean absolute difference.
pub fn l1_loss(sr: &Tensor, hr: &Tensor) -> Result<f64> {
    eval_pair(sr, hr, l1_graph)
}

pub fn ssim_index(x: &Tensor, y: &Tensor) -> Result<f64> {
    eval_pair(x, y, ssim_graph)
}

pub fn ssim_loss(sr: &Tensor, hr: &Tensor) -> Result<f64> {
    eval_pair(sr, hr, ssim_loss_graph)
}

pub fn fr_loss(sr: &Tensor, hr: &Tensor) -> Result<f64> {
    eval_pair(sr, hr, fr_graph)
}

pub fn total_loss(sr: &Tensor, hr: &Tensor, weights: &LossWeights) -> Result<LossReport> {
    check_pair(sr, hr)?;
    let mut g = Graph::new();
    let a = g.constant(sr.clone());
    let b = g.constant(hr.clone());
    let (total, [l1, ss, fr]) = total_graph(&mut g, a, b, weights)?;
    let v = |x: Var| g.value(x).data()[0];
    Ok(LossReport { l1: v(l1), ssim_loss: v(ss), fr: v(fr), total: v(total) })
}

/// PSNR in dB with an explicit peak; `+inf` for identical inputs.
pub fn psnr_with_peak(sr: &Tensor, hr: &Tensor, peak: f64) -> Result<f64> {
    if !sr.same_shape(hr) {
        return Err(dim_err!("psnr inputs differ in shape"));
    }
    let mse = sr.data().iter().zip(hr.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / sr.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR of `[-1, 1]` images after remapping to `[0, 1]`, peak 1.
pub fn psnr(sr: &Tensor, hr: &Tensor) -> Result<f64> {
    let remap = |t: &Tensor| t.map(|v| (v + 1.0) / 2.0);
    psnr_with_peak(&remap(sr), &remap(hr), 1.0)
}

/// `|sr - hr|` per pixel together with its max-normalized copy for export.
pub fn residual_map(sr: &Tensor, hr: &Tensor) -> Result<(Tensor, Tensor)> {
    let raw = sr.zip_map(hr, |a, b| (a - b).abs())?;
    let peak = raw.data().iter().copied().fold(0.0, f64::max);
    let normalized = if peak > 0.0 { raw.scale(1.0 / peak) } else { raw.clone() };
    Ok((raw, normalized))
}
