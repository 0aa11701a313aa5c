//! Procedural paired phantoms: one shared "anatomy" (elliptical body,
//! internal blobs, oriented stripes) rendered at two foreground scales with
//! different contrast curves, on independently cluttered backgrounds.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::noise::{apply_noise, NoiseSpec};
use crate::error::{contract_err, Result};
use crate::numerics::Tensor;

/// Body semi-axes (vertical, horizontal) as fractions of the image size at scale 1.
const BODY_AXES: (f64, f64) = (0.3, 0.24);
const BLOBS: usize = 4;
const CLUTTER_BLOBS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPairSpec {
    pub seed: u64,
    /// Height and width of both renderings.
    pub size: usize,
    /// Foreground scale of the target-contrast image.
    pub t2_scale: f64,
    /// Foreground scale of the reference-contrast image.
    pub pd_scale: f64,
    /// Stripe cycles across the body's vertical axis.
    pub texture_freq: f64,
    /// Background clutter amplitude in raw [0, 1] intensity.
    pub clutter: f64,
    /// Degradation applied to the target-contrast image.
    pub noise: NoiseSpec,
}

impl Default for SynthPairSpec {
    fn default() -> Self {
        Self { seed: 0, size: 64, t2_scale: 1.0, pd_scale: 1.0, texture_freq: 5.0, clutter: 0.15, noise: NoiseSpec::None }
    }
}

impl SynthPairSpec {
    /// Reference foreground twice as large as the target's.
    pub fn scale_mismatch(seed: u64) -> Self {
        Self { seed, t2_scale: 0.8, pd_scale: 1.6, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % 4 != 0 {
            return Err(contract_err!("size {} must be a positive multiple of 4", self.size));
        }
        if !(self.t2_scale > 0.0 && self.pd_scale > 0.0 && self.t2_scale.is_finite() && self.pd_scale.is_finite()) {
            return Err(contract_err!("foreground scales must be positive"));
        }
        if !(self.texture_freq >= 0.0 && self.clutter >= 0.0) {
            return Err(contract_err!("texture frequency and clutter must be non-negative"));
        }
        Ok(())
    }
}

/// Where each target pixel's anatomy appears in the reference.
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondence {
    /// Reference-over-target foreground scale.
    pub ratio: f64,
    /// Per target pixel (row-major), the matching reference position in pixel
    /// coordinates; `None` for background or positions outside the image.
    pub positions: Vec<Option<(f64, f64)>>,
}

impl Correspondence {
    pub fn foreground_count(&self) -> usize {
        self.positions.iter().filter(|p| p.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPair {
    pub t2: Tensor,
    pub pd: Tensor,
    pub correspondence: Correspondence,
}

struct Blob {
    y: f64,
    x: f64,
    sigma: f64,
    amp: f64,
}

struct Anatomy {
    stripe_dir: (f64, f64),
    stripe_phase: f64,
    freq: f64,
    blobs: Vec<Blob>,
}

impl Anatomy {
    fn sample(rng: &mut impl Rng, freq: f64) -> Self {
        let theta = rng.gen_range(0.0..PI);
        let blobs = (0..BLOBS)
            .map(|_| {
                let r = 0.6 * rng.gen::<f64>().sqrt();
                let a = rng.gen_range(0.0..2.0 * PI);
                Blob {
                    y: r * a.sin(),
                    x: r * a.cos(),
                    sigma: rng.gen_range(0.08..0.2),
                    amp: rng.gen_range(0.25..0.45) * if rng.gen::<bool>() { 1.0 } else { -1.0 },
                }
            })
            .collect();
        Self { stripe_dir: (theta.sin(), theta.cos()), stripe_phase: rng.gen_range(0.0..2.0 * PI), freq, blobs }
    }

    /// Tissue value in [0, 1] at unit-body coordinates, and body membership.
    fn tissue(&self, uy: f64, ux: f64) -> (f64, bool) {
        let r2 = uy * uy + ux * ux;
        if r2 > 1.0 {
            return (0.0, false);
        }
        let proj = uy * self.stripe_dir.0 + ux * self.stripe_dir.1;
        let mut t = 0.5 + 0.2 * (PI * self.freq * proj + self.stripe_phase).sin();
        for b in &self.blobs {
            let d2 = (uy - b.y).powi(2) + (ux - b.x).powi(2);
            t += b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
        }
        (t.clamp(0.0, 1.0), true)
    }
}

fn t2_curve(t: f64) -> f64 {
    0.1 + 0.85 * t.powf(0.8)
}

fn pd_curve(t: f64) -> f64 {
    0.15 + 0.8 * (1.0 - (-2.5 * t).exp()) / (1.0 - (-2.5f64).exp())
}

/// Renders the anatomy at `scale` with 2×2 supersampling, plus background
/// clutter drawn from `rng`. Returns raw intensities in [0, 1].
fn render(anatomy: &Anatomy, size: usize, scale: f64, curve: fn(f64) -> f64, clutter: f64, rng: &mut impl Rng) -> Tensor {
    let c = size as f64 / 2.0;
    let (ay, ax) = (BODY_AXES.0 * size as f64 * scale, BODY_AXES.1 * size as f64 * scale);
    let blobs: Vec<Blob> = (0..CLUTTER_BLOBS)
        .map(|_| Blob {
            y: rng.gen_range(0.0..size as f64),
            x: rng.gen_range(0.0..size as f64),
            sigma: rng.gen_range(1.5..4.0),
            amp: clutter * rng.gen_range(0.5..1.0),
        })
        .collect();
    let mut img = Tensor::zeros(&[1, size, size]);
    for y in 0..size {
        for x in 0..size {
            let (mut v, mut inside) = (0.0, 0.0);
            for sy in [0.25, 0.75] {
                for sx in [0.25, 0.75] {
                    let (py, px) = (y as f64 + sy, x as f64 + sx);
                    let (t, fg) = anatomy.tissue((py - c) / ay, (px - c) / ax);
                    if fg {
                        v += 0.25 * curve(t);
                        inside += 0.25;
                    }
                }
            }
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let bg: f64 = blobs
                .iter()
                .map(|b| b.amp * (-((py - b.y).powi(2) + (px - b.x).powi(2)) / (2.0 * b.sigma * b.sigma)).exp())
                .sum();
            img.set(&[0, y, x], (v + (1.0 - inside) * bg.max(0.0)).clamp(0.0, 1.0));
        }
    }
    img
}

/// Deterministic pair for a spec: both renderings normalized to [−1, 1],
/// the target-contrast one degraded by `spec.noise`.
pub fn synth_pair(spec: &SynthPairSpec) -> Result<SynthPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let anatomy = Anatomy::sample(&mut rng, spec.texture_freq);
    let mut t2_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut pd_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let n = spec.size;
    let t2 = render(&anatomy, n, spec.t2_scale, t2_curve, spec.clutter, &mut t2_rng);
    let pd = render(&anatomy, n, spec.pd_scale, pd_curve, spec.clutter, &mut pd_rng);
    let (t2, _) = super::normalize(&t2);
    let (pd, _) = super::normalize(&pd);
    let t2 = apply_noise(&t2, &spec.noise)?;

    let ratio = spec.pd_scale / spec.t2_scale;
    let c = n as f64 / 2.0;
    let (ay, ax) = (BODY_AXES.0 * n as f64 * spec.t2_scale, BODY_AXES.1 * n as f64 * spec.t2_scale);
    let hi = (n - 1) as f64;
    let mut positions = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            // pixel centres sit at index + 0.5
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let fg = ((py - c) / ay).powi(2) + ((px - c) / ax).powi(2) <= 1.0;
            let (qy, qx) = (c + ratio * (py - c) - 0.5, c + ratio * (px - c) - 0.5);
            let inside = (0.0..=hi).contains(&qy) && (0.0..=hi).contains(&qx);
            positions.push((fg && inside).then_some((qy, qx)));
        }
    }
    Ok(SynthPair { t2, pd, correspondence: Correspondence { ratio, positions } })
}
