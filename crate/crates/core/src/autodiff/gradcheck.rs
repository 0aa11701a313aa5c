use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, Var};
use crate::error::{dim_err, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Per-coordinate relative-error tolerance.
    pub tol: f64,
    /// Coordinates sampled per check (all of them when the tensor is smaller).
    pub samples: usize,
    /// Fraction of sampled coordinates that must pass.
    pub pass_fraction: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { h: 1e-5, tol: 1e-4, samples: 50, pass_fraction: 0.99 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub passed: usize,
    pub pass: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` at `point` on a
/// random sample of coordinates.
pub fn gradcheck(
    f: impl Fn(&Tensor) -> Result<f64>,
    analytic: &Tensor,
    point: &Tensor,
    cfg: &GradCheckConfig,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    if !analytic.same_shape(point) {
        return Err(dim_err!("analytic gradient {:?} vs point {:?}", analytic.shape(), point.shape()));
    }
    let n = point.len();
    let coords: Vec<usize> = if n <= cfg.samples { (0..n).collect() } else { sample(rng, n, cfg.samples).into_vec() };
    let mut probe = point.clone();
    let mut max_rel_err: f64 = 0.0;
    let mut passed = 0;
    for &i in &coords {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + cfg.h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = x0 - cfg.h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = x0;
        let numeric = (fp - fm) / (2.0 * cfg.h);
        let err = relative_error(analytic.data()[i], numeric);
        max_rel_err = max_rel_err.max(err);
        if err < cfg.tol {
            passed += 1;
        }
    }
    let checked = coords.len();
    let pass = passed as f64 >= cfg.pass_fraction * checked as f64;
    Ok(GradCheckReport { max_rel_err, checked, passed, pass })
}

/// Gradcheck of a graph-built scalar function of one input, with the analytic
/// gradient taken from [`Graph::backward`].
pub fn gradcheck_graph(
    build: impl Fn(&mut Graph, Var) -> Result<Var>,
    point: &Tensor,
    cfg: &GradCheckConfig,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    let eval = |x: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let out = build(&mut g, v)?;
        Ok(g.value(out).data()[0])
    };
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let out = build(&mut g, x)?;
    let analytic = g.backward(out)?.wrt(x);
    gradcheck(eval, &analytic, point, cfg, rng)
}
