//! Cross-scale fusion of aligned features, confidence modulation and the
//! reconstruction head.

use rand::Rng;

use crate::alignment::{fold_weights, AlignedPyramid, SoftWeightVector};
use crate::autodiff::{Graph, Var};
use crate::error::{dim_err, Result};
use crate::extractor::{he_uniform, ExtractorConfig};
use crate::numerics::{ResizeMode, Tensor};
use crate::pyramid::{Pyramid, Scale};

/// A convolution's weight and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl ConvParams {
    pub fn he_uniform(cout: usize, cin: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self { w: he_uniform(&[cout, cin, k, k], rng), b: Tensor::zeros(&[cout]) }
    }

    pub fn zeros(cout: usize, cin: usize, k: usize) -> Self {
        Self { w: Tensor::zeros(&[cout, cin, k, k]), b: Tensor::zeros(&[cout]) }
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> ConvVars {
        let put = |g: &mut Graph, t: &Tensor| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) };
        ConvVars { w: put(g, &self.w), b: put(g, &self.b) }
    }

    fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub w: Var,
    pub b: Var,
}

impl ConvVars {
    fn apply(&self, g: &mut Graph, x: Var, pad: usize) -> Result<Var> {
        g.conv2d(x, self.w, self.b, 1, pad)
    }
}

/// Channels of the concatenated (M-A, S-A) features at each scale.
pub fn fused_channels(cfg: &ExtractorConfig, s: Scale) -> usize {
    2 * cfg.channels(s)
}

fn total_fused_channels(cfg: &ExtractorConfig) -> usize {
    Scale::ALL.iter().map(|&s| fused_channels(cfg, s)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    /// Per output scale: 1×1 convolution over all three scales, concatenated
    /// in the order 4×, 2×, 1×.
    pub fc: Pyramid<ConvParams>,
    /// Per output scale: two residual 3×3 blocks.
    pub res: Pyramid<[ConvParams; 2]>,
}

impl FusionParams {
    pub fn new(cfg: &ExtractorConfig, rng: &mut impl Rng) -> Self {
        let cin = total_fused_channels(cfg);
        let mut fc = Vec::new();
        let mut res = Vec::new();
        for s in Scale::ALL {
            let c = fused_channels(cfg, s);
            fc.push(ConvParams::he_uniform(c, cin, 1, rng));
            res.push([ConvParams::he_uniform(c, c, 3, rng), ConvParams::he_uniform(c, c, 3, rng)]);
        }
        let mut fc = fc.into_iter();
        let mut res = res.into_iter();
        // Scale::ALL runs 1×, 2×, 4×
        let (f1, f2, f4) = (fc.next().unwrap(), fc.next().unwrap(), fc.next().unwrap());
        let (r1, r2, r4) = (res.next().unwrap(), res.next().unwrap(), res.next().unwrap());
        Self { fc: Pyramid { x4: f4, x2: f2, x1: f1 }, res: Pyramid { x4: r4, x2: r2, x1: r1 } }
    }

    pub fn zeros(cfg: &ExtractorConfig) -> Self {
        let cin = total_fused_channels(cfg);
        Self {
            fc: Pyramid::from_fn(|s| ConvParams::zeros(fused_channels(cfg, s), cin, 1)),
            res: Pyramid::from_fn(|s| {
                let c = fused_channels(cfg, s);
                [ConvParams::zeros(c, c, 3), ConvParams::zeros(c, c, 3)]
            }),
        }
    }

    /// 1×1 weights that copy the matching scale's own block, zero residual
    /// blocks: the fusion becomes the identity.
    pub fn identity(cfg: &ExtractorConfig) -> Self {
        let mut p = Self::zeros(cfg);
        let mut offset = 0;
        let offsets = [Scale::X4, Scale::X2, Scale::X1].map(|s| {
            let o = offset;
            offset += fused_channels(cfg, s);
            (s, o)
        });
        for (s, o) in offsets {
            let c = fused_channels(cfg, s);
            let cin = total_fused_channels(cfg);
            let w = p.fc.get_mut(s).w.data_mut();
            for i in 0..c {
                w[i * cin + o + i] = 1.0;
            }
        }
        p
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for s in [Scale::X4, Scale::X2, Scale::X1] {
            self.fc.get(s).push_named(&format!("fusion.{}.fc", s.label()), &mut out);
            for (i, r) in self.res.get(s).iter().enumerate() {
                r.push_named(&format!("fusion.{}.res{}", s.label(), i), &mut out);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let Self { fc, res } = self;
        let Pyramid { x4: f4, x2: f2, x1: f1 } = fc;
        let Pyramid { x4: r4, x2: r2, x1: r1 } = res;
        let mut out = Vec::new();
        for (f, r) in [(f4, r4), (f2, r2), (f1, r1)] {
            out.push(&mut f.w);
            out.push(&mut f.b);
            for c in r.iter_mut() {
                out.push(&mut c.w);
                out.push(&mut c.b);
            }
        }
        out
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> FusionVars {
        FusionVars {
            fc: Pyramid::from_fn(|s| self.fc.get(s).bind(g, trainable)),
            res: Pyramid::from_fn(|s| [0, 1].map(|i| self.res.get(s)[i].bind(g, trainable))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionVars {
    pub fc: Pyramid<ConvVars>,
    pub res: Pyramid<[ConvVars; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    /// Three hidden 3×3 layers (relu) followed by the output layer.
    pub layers: [ConvParams; 4],
}

impl DecoderParams {
    /// Input channels: fused features of all scales plus the 4× query features.
    pub fn input_channels(cfg: &ExtractorConfig) -> usize {
        total_fused_channels(cfg) + cfg.c4
    }

    /// He-uniform hidden layers and a zero output layer, so an untrained
    /// decoder returns its residual input.
    pub fn new(cfg: &ExtractorConfig, width: usize, rng: &mut impl Rng) -> Self {
        let cin = Self::input_channels(cfg);
        Self {
            layers: [
                ConvParams::he_uniform(width, cin, 3, rng),
                ConvParams::he_uniform(width, width, 3, rng),
                ConvParams::he_uniform(width, width, 3, rng),
                ConvParams::zeros(cfg.image_channels, width, 3),
            ],
        }
    }

    pub fn zeros(cfg: &ExtractorConfig, width: usize) -> Self {
        let cin = Self::input_channels(cfg);
        Self {
            layers: [
                ConvParams::zeros(width, cin, 3),
                ConvParams::zeros(width, width, 3),
                ConvParams::zeros(width, width, 3),
                ConvParams::zeros(cfg.image_channels, width, 3),
            ],
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.push_named(&format!("decoder.conv{i}"), &mut out);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> DecoderVars {
        DecoderVars { layers: [0, 1, 2, 3].map(|i| self.layers[i].bind(g, trainable)) }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderVars {
    pub layers: [ConvVars; 4],
}

fn spatial(g: &Graph, v: Var) -> Result<(usize, usize)> {
    let (_, h, w) = g.value(v).dims3()?;
    Ok((h, w))
}

/// Per-scale channel concatenation, M-A channels first.
pub fn concat_aligned_graph(g: &mut Graph, fma: &Pyramid<Var>, fsa: &Pyramid<Var>) -> Result<Pyramid<Var>> {
    Pyramid::try_from_fn(|s| {
        let (a, b) = (*fma.get(s), *fsa.get(s));
        if spatial(g, a)? != spatial(g, b)? {
            return Err(dim_err!("{} aligned features differ in size", s.label()));
        }
        g.concat_channels(&[a, b])
    })
}

/// Every output scale sees all three input scales (bilinear-resized to its
/// size) through a 1×1 convolution, then two residual 3×3 blocks.
pub fn fc_conv_fuse_graph(g: &mut Graph, fin: &Pyramid<Var>, p: &FusionVars) -> Result<Pyramid<Var>> {
    Pyramid::try_from_fn(|s| {
        let (h, w) = spatial(g, *fin.get(s))?;
        let mut parts = Vec::with_capacity(3);
        for m in [Scale::X4, Scale::X2, Scale::X1] {
            let x = *fin.get(m);
            parts.push(if spatial(g, x)? == (h, w) { x } else { g.resize(x, h, w, ResizeMode::Bilinear)? });
        }
        let cat = g.concat_channels(&parts)?;
        let mut x = p.fc.get(s).apply(g, cat, 0)?;
        for block in p.res.get(s) {
            let y = block.apply(g, x, 1)?;
            let y = g.relu(y);
            x = g.add(x, y)?;
        }
        Ok(x)
    })
}

/// Per-pixel confidence maps: S-A weights of each scale plus the shared
/// M-A weight, both spatialized to the scale's dims.
pub fn combine_soft(ssa: &Pyramid<SoftWeightVector>, sma: &SoftWeightVector) -> Result<Pyramid<Tensor>> {
    Pyramid::try_from_fn(|s| {
        let st = s.stride_from_hr();
        let (h, w) = (sma.grid.height / st, sma.grid.width / st);
        fold_weights(ssa.get(s), h, w)?.add(&fold_weights(sma, h, w)?)
    })
}

pub fn modulate_graph(g: &mut Graph, fout: &Pyramid<Var>, s: &Pyramid<Var>) -> Result<Pyramid<Var>> {
    Pyramid::try_from_fn(|sc| g.mul_channel_map(*fout.get(sc), *s.get(sc)))
}

/// Reconstruction: coarse features bilinearly upsampled to the 4× grid,
/// concatenated with the 4× features and `q4`, a conv stack to image
/// channels, plus `lr_up`, clamped to [−1, 1].
pub fn decode_graph(g: &mut Graph, f: &Pyramid<Var>, q4: Var, lr_up: Var, p: &DecoderVars) -> Result<Var> {
    let (h, w) = spatial(g, lr_up)?;
    if spatial(g, f.x4)? != (h, w) || spatial(g, q4)? != (h, w) {
        return Err(dim_err!("4x features must match the {}x{} image", h, w));
    }
    let up2 = g.resize(f.x2, h, w, ResizeMode::Bilinear)?;
    let up1 = g.resize(f.x1, h, w, ResizeMode::Bilinear)?;
    let mut x = g.concat_channels(&[f.x4, up2, up1, q4])?;
    for layer in &p.layers[..3] {
        let y = layer.apply(g, x, 1)?;
        x = g.relu(y);
    }
    let out = p.layers[3].apply(g, x, 1)?;
    let sum = g.add(out, lr_up)?;
    Ok(g.clamp(sum, -1.0, 1.0))
}

fn constants(g: &mut Graph, p: &Pyramid<Tensor>) -> Pyramid<Var> {
    p.map(|_, t| g.constant(t.clone()))
}

fn values(g: &Graph, p: &Pyramid<Var>) -> Pyramid<Tensor> {
    p.map(|_, &v| g.value(v).clone())
}

pub fn concat_aligned(fma: &AlignedPyramid, fsa: &AlignedPyramid) -> Result<Pyramid<Tensor>> {
    let mut g = Graph::new();
    let (a, b) = (constants(&mut g, fma), constants(&mut g, fsa));
    let out = concat_aligned_graph(&mut g, &a, &b)?;
    Ok(values(&g, &out))
}

pub fn fc_conv_fuse(fin: &Pyramid<Tensor>, params: &FusionParams) -> Result<Pyramid<Tensor>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = constants(&mut g, fin);
    let out = fc_conv_fuse_graph(&mut g, &x, &p)?;
    Ok(values(&g, &out))
}

pub fn modulate(fout: &Pyramid<Tensor>, s: &Pyramid<Tensor>) -> Result<Pyramid<Tensor>> {
    let mut g = Graph::new();
    let (f, w) = (constants(&mut g, fout), constants(&mut g, s));
    let out = modulate_graph(&mut g, &f, &w)?;
    Ok(values(&g, &out))
}

pub fn decode(f: &Pyramid<Tensor>, q4: &Tensor, lr_up: &Tensor, params: &DecoderParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let fv = constants(&mut g, f);
    let q = g.constant(q4.clone());
    let l = g.constant(lr_up.clone());
    let out = decode_graph(&mut g, &fv, q, l, &p)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck_graph, GradCheckConfig};
    use crate::numerics::{conv2d, resize};
    use crate::alignment::GridMeta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const CFG: ExtractorConfig = ExtractorConfig { image_channels: 1, c4: 2, c2: 3, c1: 4 };

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_pyramid(chans: impl Fn(Scale) -> usize, hw: usize, seed: u64) -> Pyramid<Tensor> {
        let mut r = rng(seed);
        Pyramid::from_fn(|s| {
            let n = hw * s.factor() / 4;
            Tensor::rand_uniform(&[chans(s), n, n], -1.0, 1.0, &mut r)
        })
    }

    fn fin(seed: u64) -> Pyramid<Tensor> {
        rand_pyramid(|s| fused_channels(&CFG, s), 8, seed)
    }

    #[test]
    fn concat_shapes_and_slices() {
        let a = rand_pyramid(|s| s.factor(), 8, 1);
        let b = rand_pyramid(|s| s.factor() + 1, 8, 2);
        let out = concat_aligned(&a, &b).unwrap();
        for s in Scale::ALL {
            let (ca, cb) = (s.factor(), s.factor() + 1);
            assert_eq!(out.get(s).shape()[0], ca + cb);
            assert_eq!(&out.get(s).slice_channels(0, ca).unwrap(), a.get(s));
            assert_eq!(&out.get(s).slice_channels(ca, cb).unwrap(), b.get(s));
        }
        let zeros = b.map(|_, t| Tensor::zeros(t.shape()));
        let out = concat_aligned(&a, &zeros).unwrap();
        assert!(out.x2.slice_channels(2, 3).unwrap().data().iter().all(|&v| v == 0.0));
        let bad = Pyramid { x4: Tensor::zeros(&[1, 4, 4]), ..a.clone() };
        assert!(concat_aligned(&bad, &b).is_err());
    }

    #[test]
    fn identity_fusion_passes_through() {
        let x = fin(3);
        assert_eq!(fc_conv_fuse(&x, &FusionParams::identity(&CFG)).unwrap(), x);
    }

    #[test]
    fn zero_fusion_is_zero() {
        let out = fc_conv_fuse(&fin(4), &FusionParams::zeros(&CFG)).unwrap();
        for s in Scale::ALL {
            assert!(out.get(s).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn fusion_mixes_scales() {
        let p = FusionParams::new(&CFG, &mut rng(5));
        let x = fin(6);
        let mut y = x.clone();
        y.x1.data_mut()[3] += 0.5;
        let (a, b) = (fc_conv_fuse(&x, &p).unwrap(), fc_conv_fuse(&y, &p).unwrap());
        assert!(a.x2.max_abs_diff(&b.x2) > 0.0);
        for s in Scale::ALL {
            assert_eq!(a.get(s).shape(), x.get(s).shape());
        }
    }

    #[test]
    fn fusion_matches_manual_composition() {
        let p = FusionParams::new(&CFG, &mut rng(7));
        let x = fin(8);
        let out = fc_conv_fuse(&x, &p).unwrap();
        let s = Scale::X2;
        let parts: Vec<Tensor> =
            [Scale::X4, Scale::X2, Scale::X1].iter().map(|&m| resize(x.get(m), 4, 4, ResizeMode::Bilinear).unwrap()).collect();
        let cat = Tensor::concat_channels(&parts.iter().collect::<Vec<_>>()).unwrap();
        let mut y = conv2d(&cat, &p.fc.get(s).w, &p.fc.get(s).b, 1, 0).unwrap();
        for r in p.res.get(s) {
            y = y.add(&conv2d(&y, &r.w, &r.b, 1, 1).unwrap().relu()).unwrap();
        }
        assert!(out.x2.max_abs_diff(&y) < 1e-12);
    }

    fn weights(v: f64, grid: GridMeta) -> SoftWeightVector {
        SoftWeightVector::new(Tensor::full(&[grid.len()], v), grid).unwrap()
    }

    #[test]
    fn combine_soft_examples() {
        let g = GridMeta::new(1, 8, 8, 3, 1, 1).unwrap();
        let ssa = Pyramid::from_fn(|_| weights(0.5, g));
        let s = combine_soft(&ssa, &weights(0.5, g)).unwrap();
        assert_eq!(s.x1, Tensor::full(&[1, 2, 2], 1.0));
        assert_eq!(s.x4, Tensor::full(&[1, 8, 8], 1.0));

        let mut r = rng(9);
        let ssa = Pyramid::from_fn(|_| SoftWeightVector::new(Tensor::rand_uniform(&[64], 0.01, 1.0, &mut r), g).unwrap());
        let sma = SoftWeightVector::new(Tensor::rand_uniform(&[64], 0.01, 1.0, &mut r), g).unwrap();
        let s = combine_soft(&ssa, &weights(0.0, g)).unwrap();
        let s2 = combine_soft(&ssa, &sma).unwrap();
        for sc in Scale::ALL {
            let n = 8 / sc.stride_from_hr();
            assert_eq!(s.get(sc), &fold_weights(ssa.get(sc), n, n).unwrap());
            let want = fold_weights(ssa.get(sc), n, n).unwrap().add(&fold_weights(&sma, n, n).unwrap()).unwrap();
            assert_eq!(s2.get(sc), &want);
            assert!(s2.get(sc).data().iter().all(|&v| v > 0.0 && v <= 2.0));
        }
    }

    #[test]
    fn modulate_examples() {
        let f = fin(10);
        let ones = f.map(|_, t| Tensor::ones(&[1, t.shape()[1], t.shape()[2]]));
        assert_eq!(modulate(&f, &ones).unwrap(), f);
        let half = ones.map(|_, t| t.scale(0.5));
        let out = modulate(&f, &half).unwrap();
        for s in Scale::ALL {
            assert_eq!(out.get(s), &f.get(s).scale(0.5));
        }
        let mut r = rng(11);
        let w = ones.map(|_, t| Tensor::rand_uniform(t.shape(), 0.0, 2.0, &mut r));
        let out = modulate(&f, &w).unwrap();
        for s in Scale::ALL {
            let (c, h, ww) = f.get(s).dims3().unwrap();
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..ww {
                        assert_eq!(out.get(s).get(&[ci, y, x]), f.get(s).get(&[ci, y, x]) * w.get(s).get(&[0, y, x]));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_decoder_returns_clamped_residual() {
        let f = fin(12);
        let mut r = rng(13);
        let q4 = Tensor::rand_uniform(&[CFG.c4, 8, 8], -1.0, 1.0, &mut r);
        let lr_up = Tensor::rand_uniform(&[1, 8, 8], -1.5, 1.5, &mut r);
        let out = decode(&f, &q4, &lr_up, &DecoderParams::zeros(&CFG, 4)).unwrap();
        assert_eq!(out, lr_up.map(|v| v.clamp(-1.0, 1.0)));
        // fresh decoders start at the residual too
        let out = decode(&f, &q4, &lr_up, &DecoderParams::new(&CFG, 4, &mut r)).unwrap();
        assert_eq!(out, lr_up.map(|v| v.clamp(-1.0, 1.0)));
    }

    #[test]
    fn decoder_gradients_check_out() {
        let f = fin(14);
        let mut r = rng(15);
        let q4 = Tensor::rand_uniform(&[CFG.c4, 8, 8], -1.0, 1.0, &mut r);
        let lr_up = Tensor::rand_uniform(&[1, 8, 8], -0.5, 0.5, &mut r);
        let mut p = DecoderParams::new(&CFG, 4, &mut r);
        p.layers[3] = ConvParams::he_uniform(1, 4, 3, &mut r);
        let probe = Tensor::rand_uniform(&[1, 8, 8], -1.0, 1.0, &mut r);
        // gradient with respect to the 2× features
        let report = gradcheck_graph(
            |g, x| {
                let pv = p.bind(g, false);
                let fv = Pyramid { x4: g.constant(f.x4.clone()), x2: x, x1: g.constant(f.x1.clone()) };
                let q = g.constant(q4.clone());
                let l = g.constant(lr_up.clone());
                let out = decode_graph(g, &fv, q, l, &pv)?;
                let rr = g.constant(probe.clone());
                let prod = g.mul(out, rr)?;
                Ok(g.sum(prod))
            },
            &f.x2,
            &GradCheckConfig::default(),
            &mut r,
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn decode_shape_follows_residual() {
        let f = fin(16);
        let q4 = Tensor::zeros(&[CFG.c4, 8, 8]);
        let out = decode(&f, &q4, &Tensor::zeros(&[1, 8, 8]), &DecoderParams::new(&CFG, 4, &mut rng(17))).unwrap();
        assert_eq!(out.shape(), &[1, 8, 8]);
        assert!(decode(&f, &q4, &Tensor::zeros(&[1, 4, 4]), &DecoderParams::zeros(&CFG, 4)).is_err());
    }
}
