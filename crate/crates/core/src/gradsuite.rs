//! Central-difference checks of every differentiable graph op and every loss
//! term. Tensor-valued ops are reduced to a scalar by `sum(out ⊙ R)` with a
//! fixed random `R`, so every output coordinate contributes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck_graph, GradCheckConfig, GradCheckReport, Graph, Var};
use crate::error::Result;
use crate::losses::{fr_graph, l1_graph, ssim_loss_graph, total_graph, LossWeights};
use crate::numerics::{ResizeMode, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteCase {
    pub name: String,
    pub report: GradCheckReport,
}

type Build = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

struct Case {
    name: &'static str,
    point: Tensor,
    build: Build,
}

/// `sum(y ⊙ R)` with `R` drawn from `salt`; identical on every call.
fn project(g: &mut Graph, y: Var, salt: u64) -> Result<Var> {
    let r = Tensor::rand_uniform(g.value(y).shape(), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(salt));
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

/// Uniform magnitudes in `[lo, hi]` with random signs, keeping kinks of
/// `|x|`, `relu` and `clamp` farther than one step away.
fn signed_band(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng)
}

fn case(name: &'static str, point: Tensor, build: impl Fn(&mut Graph, Var) -> Result<Var> + 'static) -> Case {
    Case { name, point, build: Box::new(build) }
}

/// Unary op `f(x)` checked through the projection.
fn unary(name: &'static str, point: Tensor, salt: u64, f: impl Fn(&mut Graph, Var) -> Result<Var> + 'static) -> Case {
    case(name, point, move |g, x| {
        let y = f(g, x)?;
        project(g, y, salt)
    })
}

fn cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let mut out = Vec::new();
    let mut salt = 1000u64;
    let mut next = || {
        salt += 1;
        salt
    };

    // Elementwise binary ops, checked in each argument.
    let a = uniform(&[2, 4, 5], rng);
    let b = uniform(&[2, 4, 5], rng);
    let pos = Tensor::rand_uniform(&[2, 4, 5], 0.5, 2.0, rng);
    for (name, left) in [("add", true), ("add.rhs", false)] {
        let other = b.clone();
        let s = next();
        out.push(unary(name, a.clone(), s, move |g, x| {
            let o = g.constant(other.clone());
            if left {
                g.add(x, o)
            } else {
                g.add(o, x)
            }
        }));
    }
    for (name, left) in [("sub", true), ("sub.rhs", false)] {
        let other = b.clone();
        let s = next();
        out.push(unary(name, a.clone(), s, move |g, x| {
            let o = g.constant(other.clone());
            if left {
                g.sub(x, o)
            } else {
                g.sub(o, x)
            }
        }));
    }
    for (name, left) in [("mul", true), ("mul.rhs", false)] {
        let other = b.clone();
        let s = next();
        out.push(unary(name, a.clone(), s, move |g, x| {
            let o = g.constant(other.clone());
            if left {
                g.mul(x, o)
            } else {
                g.mul(o, x)
            }
        }));
    }
    {
        let den = pos.clone();
        out.push(unary("div", a.clone(), next(), move |g, x| {
            let o = g.constant(den.clone());
            g.div(x, o)
        }));
        let num = a.clone();
        out.push(unary("div.rhs", pos.clone(), next(), move |g, x| {
            let o = g.constant(num.clone());
            g.div(o, x)
        }));
    }
    out.push(unary("scale", a.clone(), next(), |g, x| Ok(g.scale(x, -1.7))));
    out.push(unary("add_scalar", a.clone(), next(), |g, x| Ok(g.add_scalar(x, 0.3))));
    out.push(unary("relu", signed_band(&[2, 4, 5], 0.05, 1.0, rng), next(), |g, x| Ok(g.relu(x))));
    out.push(unary("abs", signed_band(&[2, 4, 5], 0.05, 1.0, rng), next(), |g, x| Ok(g.abs(x))));
    {
        // Magnitudes straddle the clamp bound 0.5 but stay clear of it.
        let mut p = signed_band(&[2, 4, 5], 0.05, 0.9, rng);
        p.data_mut().iter_mut().for_each(|v| {
            if (v.abs() - 0.5).abs() < 0.05 {
                *v *= 1.3;
            }
        });
        out.push(unary("clamp", p, next(), |g, x| Ok(g.clamp(x, -0.5, 0.5))));
    }
    out.push(unary("sum", a.clone(), next(), |g, x| Ok(g.sum(x))));
    out.push(unary("mean", a.clone(), next(), |g, x| Ok(g.mean(x))));

    // Convolution, in each of its three arguments and with stride 2.
    let cx = uniform(&[2, 6, 6], rng);
    let cw = uniform(&[3, 2, 3, 3], rng);
    let cb = uniform(&[3], rng);
    for stride in [1usize, 2] {
        let (w, b) = (cw.clone(), cb.clone());
        let name = if stride == 1 { "conv2d.x" } else { "conv2d.x.stride2" };
        out.push(unary(name, cx.clone(), next(), move |g, x| {
            let w = g.constant(w.clone());
            let b = g.constant(b.clone());
            g.conv2d(x, w, b, stride, 1)
        }));
    }
    {
        let (x0, b) = (cx.clone(), cb.clone());
        out.push(unary("conv2d.w", cw.clone(), next(), move |g, w| {
            let x = g.constant(x0.clone());
            let b = g.constant(b.clone());
            g.conv2d(x, w, b, 1, 1)
        }));
        let (x0, w) = (cx.clone(), cw.clone());
        out.push(unary("conv2d.b", cb.clone(), next(), move |g, b| {
            let x = g.constant(x0.clone());
            let w = g.constant(w.clone());
            g.conv2d(x, w, b, 1, 1)
        }));
    }

    // Linear map over rows.
    let lx = uniform(&[7, 5], rng);
    let lw = uniform(&[4, 5], rng);
    let lb = uniform(&[4], rng);
    {
        let (w, b) = (lw.clone(), lb.clone());
        out.push(unary("linear.x", lx.clone(), next(), move |g, x| {
            let w = g.constant(w.clone());
            let b = g.constant(b.clone());
            g.linear(x, w, b)
        }));
        let (x0, b) = (lx.clone(), lb.clone());
        out.push(unary("linear.w", lw.clone(), next(), move |g, w| {
            let x = g.constant(x0.clone());
            let b = g.constant(b.clone());
            g.linear(x, w, b)
        }));
        let (x0, w) = (lx.clone(), lw.clone());
        out.push(unary("linear.b", lb.clone(), next(), move |g, b| {
            let x = g.constant(x0.clone());
            let w = g.constant(w.clone());
            g.linear(x, w, b)
        }));
    }

    out.push(unary("softmax_rows", Tensor::rand_uniform(&[6, 9], -3.0, 3.0, rng), next(), |g, x| g.softmax_rows(x)));
    out.push(unary("unfold", uniform(&[2, 5, 6], rng), next(), |g, x| Ok(g.unfold(x, 3, 1, 1)?.0)));
    {
        // Fold of a stride-2 patch grid over a 2×6×6 map: 3×3 cells of width 18.
        let grid = crate::numerics::unfold(&Tensor::zeros(&[2, 6, 6]), 3, 2, 1)?.1;
        out.push(unary("fold", uniform(&[grid.len(), 18], rng), next(), move |g, x| g.fold(x, grid)));
    }
    for (name, mode, h, w) in [
        ("resize.nearest", ResizeMode::Nearest, 8, 12),
        ("resize.bilinear", ResizeMode::Bilinear, 12, 8),
        ("resize.bicubic", ResizeMode::Bicubic, 16, 16),
        ("resize.bicubic.down", ResizeMode::Bicubic, 2, 3),
    ] {
        out.push(unary(name, uniform(&[2, 4, 6], rng), next(), move |g, x| g.resize(x, h, w, mode)));
    }
    out.push(unary("avg_pool", uniform(&[2, 8, 6], rng), next(), |g, x| g.avg_pool(x, 2)));
    {
        let k = uniform(&[3, 3], rng);
        out.push(unary("filter2d", uniform(&[2, 7, 6], rng), next(), move |g, x| g.filter2d(x, &k)));
    }
    out.push(unary("fft_re", uniform(&[2, 6, 5], rng), next(), |g, x| g.fft_re(x)));
    out.push(unary("fft_im", uniform(&[2, 6, 5], rng), next(), |g, x| g.fft_im(x)));
    {
        let other = uniform(&[1, 4, 5], rng);
        out.push(unary("concat_channels", uniform(&[2, 4, 5], rng), next(), move |g, x| {
            let o = g.constant(other.clone());
            g.concat_channels(&[o, x, o])
        }));
    }
    out.push(unary("slice_channels", uniform(&[4, 3, 5], rng), next(), |g, x| g.slice_channels(x, 1, 2)));
    out.push(unary("gather_rows", uniform(&[5, 4], rng), next(), |g, x| g.gather_rows(x, &[4, 0, 0, 2, 4, 4, 1])));
    {
        let map = uniform(&[1, 4, 5], rng);
        out.push(unary("mul_channel_map.x", uniform(&[3, 4, 5], rng), next(), move |g, x| {
            let m = g.constant(map.clone());
            g.mul_channel_map(x, m)
        }));
        let x0 = uniform(&[3, 4, 5], rng);
        out.push(unary("mul_channel_map.map", uniform(&[1, 4, 5], rng), next(), move |g, m| {
            let x = g.constant(x0.clone());
            g.mul_channel_map(x, m)
        }));
    }
    out.push(unary("reshape", uniform(&[2, 3, 4], rng), next(), |g, x| g.reshape(x, &[6, 4])));

    // Loss terms, differentiated in the prediction.
    let hr = Tensor::rand_uniform(&[1, 16, 16], 0.0, 1.0, rng);
    let sr = hr.add(&signed_band(&[1, 16, 16], 0.02, 0.2, rng))?;
    let weights = LossWeights::default();
    type Loss = fn(&mut Graph, Var, Var) -> Result<Var>;
    let terms: [(&'static str, Loss); 3] = [("loss.l1", l1_graph), ("loss.ssim", ssim_loss_graph), ("loss.fr", fr_graph)];
    for (name, f) in terms {
        let target = hr.clone();
        out.push(case(name, sr.clone(), move |g, x| {
            let t = g.constant(target.clone());
            f(g, x, t)
        }));
    }
    {
        let target = hr.clone();
        out.push(case("loss.total", sr, move |g, x| {
            let t = g.constant(target.clone());
            Ok(total_graph(g, x, t, &weights)?.0)
        }));
    }
    Ok(out)
}

/// Names of the checks run by [`run_gradient_suite`], in order.
pub fn gradient_suite_names() -> Result<Vec<&'static str>> {
    Ok(cases(&mut ChaCha8Rng::seed_from_u64(0))?.into_iter().map(|c| c.name).collect())
}

/// Runs every gradient check with points drawn from `seed`.
pub fn run_gradient_suite(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<SuiteCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = cases(&mut rng)?;
    let mut out = Vec::with_capacity(all.len());
    for c in all {
        let report = gradcheck_graph(&c.build, &c.point, cfg, &mut rng)?;
        out.push(SuiteCase { name: c.name.to_string(), report });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes() {
        let cases = run_gradient_suite(7, &GradCheckConfig::default()).unwrap();
        assert!(cases.len() >= 40);
        for c in &cases {
            assert!(c.report.pass, "{}: {:?}", c.name, c.report);
        }
    }

    #[test]
    fn names_are_unique() {
        let names = gradient_suite_names().unwrap();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn broken_op_is_caught() {
        // Treating a detached branch as part of the function hides its gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = uniform(&[3, 4], &mut rng);
        let report = gradcheck_graph(
            |g, x| {
                let d = g.detach(x);
                let y = g.mul(x, d)?;
                project(g, y, 1)
            },
            &p,
            &GradCheckConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(!report.pass);
    }
}
