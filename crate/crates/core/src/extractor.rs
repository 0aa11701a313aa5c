//! Shallow texture extractor: three conv-relu-conv-relu stages separated by
//! 2× average pooling, emitting features at HR, HR/2 and HR/4 resolution.
//! The same weights serve the upsampled LR image, the degraded reference and
//! the reference.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{dim_err, Result};
use crate::numerics::{conv2d, resize, ResizeMode, Tensor};
use crate::pyramid::{Pyramid, Scale};

pub type FeaturePyramid = Pyramid<Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExtractorConfig {
    pub image_channels: usize,
    pub c4: usize,
    pub c2: usize,
    pub c1: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self { image_channels: 1, c4: 16, c2: 32, c1: 64 }
    }
}

impl ExtractorConfig {
    pub fn channels(&self, s: Scale) -> usize {
        match s {
            Scale::X4 => self.c4,
            Scale::X2 => self.c2,
            Scale::X1 => self.c1,
        }
    }
}

/// Two 3×3 convolutions of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl StageParams {
    fn he_uniform(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: he_uniform(&[cout, cin, 3, 3], rng),
            b1: Tensor::zeros(&[cout]),
            w2: he_uniform(&[cout, cout, 3, 3], rng),
            b2: Tensor::zeros(&[cout]),
        }
    }

    fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            w1: Tensor::zeros(&[cout, cin, 3, 3]),
            b1: Tensor::zeros(&[cout]),
            w2: Tensor::zeros(&[cout, cout, 3, 3]),
            b2: Tensor::zeros(&[cout]),
        }
    }
}

/// He-uniform initialization for a `[Cout, Cin, kh, kw]` (or `[Dout, Din]`) weight.
pub fn he_uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorParams {
    pub config: ExtractorConfig,
    /// Stages producing the 4×, 2× and 1× features.
    pub stages: [StageParams; 3],
}

impl ExtractorParams {
    pub fn new(config: ExtractorConfig, rng: &mut impl Rng) -> Self {
        let ExtractorConfig { image_channels, c4, c2, c1 } = config;
        let s0 = StageParams::he_uniform(image_channels, c4, rng);
        let s1 = StageParams::he_uniform(c4, c2, rng);
        let s2 = StageParams::he_uniform(c2, c1, rng);
        Self { config, stages: [s0, s1, s2] }
    }

    pub fn zeros(config: ExtractorConfig) -> Self {
        let ExtractorConfig { image_channels, c4, c2, c1 } = config;
        Self {
            config,
            stages: [
                StageParams::zeros(image_channels, c4),
                StageParams::zeros(c4, c2),
                StageParams::zeros(c2, c1),
            ],
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("extractor.stage{i}.w1"), &s.w1));
            out.push((format!("extractor.stage{i}.b1"), &s.b1));
            out.push((format!("extractor.stage{i}.w2"), &s.w2));
            out.push((format!("extractor.stage{i}.b2"), &s.b2));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.stages
            .iter_mut()
            .flat_map(|s| [&mut s.w1, &mut s.b1, &mut s.w2, &mut s.b2])
            .collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ExtractorVars {
        let mut put = |t: &Tensor| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) };
        let stages = [0, 1, 2].map(|i| {
            let s = &self.stages[i];
            [put(&s.w1), put(&s.b1), put(&s.w2), put(&s.b2)]
        });
        ExtractorVars { stages }
    }
}

/// Graph handles of [`ExtractorParams`], in `[w1, b1, w2, b2]` order per stage.
#[derive(Clone, Copy, Debug)]
pub struct ExtractorVars {
    pub stages: [[Var; 4]; 3],
}

impl ExtractorVars {
    pub fn all(&self) -> Vec<Var> {
        self.stages.iter().flatten().copied().collect()
    }
}

/// One conv-relu-conv-relu stage.
pub fn stage_graph(g: &mut Graph, x: Var, stage: &[Var; 4]) -> Result<Var> {
    let [w1, b1, w2, b2] = *stage;
    let y = g.conv2d(x, w1, b1, 1, 1)?;
    let y = g.relu(y);
    let y = g.conv2d(y, w2, b2, 1, 1)?;
    Ok(g.relu(y))
}

/// Plain evaluation of a single stage.
pub fn stage_forward(x: &Tensor, stage: &StageParams) -> Result<Tensor> {
    let y = conv2d(x, &stage.w1, &stage.b1, 1, 1)?.relu();
    Ok(conv2d(&y, &stage.w2, &stage.b2, 1, 1)?.relu())
}

pub fn extract_pyramid_graph(g: &mut Graph, img: Var, p: &ExtractorVars) -> Result<Pyramid<Var>> {
    let (_, h, w) = g.value(img).dims3()?;
    if h % 4 != 0 || w % 4 != 0 {
        return Err(dim_err!("image {}x{} is not divisible by 4", h, w));
    }
    let f4 = stage_graph(g, img, &p.stages[0])?;
    let pooled = g.avg_pool(f4, 2)?;
    let f2 = stage_graph(g, pooled, &p.stages[1])?;
    let pooled = g.avg_pool(f2, 2)?;
    let f1 = stage_graph(g, pooled, &p.stages[2])?;
    Ok(Pyramid { x4: f4, x2: f2, x1: f1 })
}

pub fn extract_pyramid(img: &Tensor, params: &ExtractorParams) -> Result<FeaturePyramid> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(img.clone());
    let vars = extract_pyramid_graph(&mut g, x, &p)?;
    Ok(vars.map(|_, &v| g.value(v).clone()))
}

/// Bicubic down- then up-sampling by `factor`, removing the detail a
/// low-resolution acquisition would lack.
pub fn degrade(img: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, h, w) = img.dims3()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(dim_err!("image {}x{} is not divisible by {}", h, w, factor));
    }
    let down = resize(img, h / factor, w / factor, ResizeMode::Bicubic)?;
    resize(&down, h, w, ResizeMode::Bicubic)
}

/// The three images the extractor sees.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineInputs {
    /// Bicubic 4× upsample of the LR target contrast (queries).
    pub lr_up: Tensor,
    /// Degraded reference (keys).
    pub reference_degraded: Tensor,
    /// Full-resolution reference (values).
    pub reference: Tensor,
}

pub fn build_inputs(t2_lr: &Tensor, pd: &Tensor) -> Result<PipelineInputs> {
    let (c, h, w) = t2_lr.dims3()?;
    let (pc, ph, pw) = pd.dims3()?;
    if pc != c || ph != 4 * h || pw != 4 * w {
        return Err(dim_err!(
            "reference {:?} must be 4x the LR input {:?}",
            pd.shape(),
            t2_lr.shape()
        ));
    }
    Ok(PipelineInputs {
        lr_up: resize(t2_lr, ph, pw, ResizeMode::Bicubic)?,
        reference_degraded: degrade(pd, 4)?,
        reference: pd.clone(),
    })
}
