//! The assembled network: extractor, alignment, fusion and decoder, with a
//! single-pair trainer.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{
    assemble_ma_graph, assemble_sa_graph, plan_alignment, AlignConfig, AlignParams, AlignmentPlan, SoftWeightVector,
};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, Var};
use crate::error::{contract_err, dim_err, Result};
use crate::extractor::{
    build_inputs, extract_pyramid, extract_pyramid_graph, ExtractorConfig, ExtractorParams, ExtractorVars, PipelineInputs,
};
use crate::fusion::{
    combine_soft, concat_aligned_graph, decode_graph, fc_conv_fuse_graph, modulate_graph, DecoderParams, DecoderVars,
    FusionParams, FusionVars,
};
use crate::losses::{total_graph, LossReport, LossWeights};
use crate::numerics::Tensor;
use crate::pyramid::{Pyramid, Scale};

/// Branch switches for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Toggles {
    pub use_sa: bool,
    pub use_ma: bool,
    pub use_chpf: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self { use_sa: true, use_ma: true, use_chpf: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub extractor: ExtractorConfig,
    pub align: AlignConfig,
    pub decoder_width: usize,
    pub toggles: Toggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorConfig::default(),
            align: AlignConfig::default(),
            decoder_width: 32,
            toggles: Toggles::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub extractor: ExtractorParams,
    pub fusion: FusionParams,
    pub decoder: DecoderParams,
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub extractor: ExtractorVars,
    pub fusion: FusionVars,
    pub decoder: DecoderVars,
}

impl ModelVars {
    /// Handles in the order of [`Model::tensors_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = self.extractor.all();
        for s in [Scale::X4, Scale::X2, Scale::X1] {
            let fc = self.fusion.fc.get(s);
            out.extend([fc.w, fc.b]);
            for r in self.fusion.res.get(s) {
                out.extend([r.w, r.b]);
            }
        }
        for l in &self.decoder.layers {
            out.extend([l.w, l.b]);
        }
        out
    }
}

impl Model {
    /// Seeded initialization. Parameters are stored at 32-bit precision so
    /// checkpoints reproduce them exactly.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extractor = ExtractorParams::new(config.extractor, &mut rng);
        let fusion = FusionParams::new(&config.extractor, &mut rng);
        let decoder = DecoderParams::new(&config.extractor, config.decoder_width, &mut rng);
        let mut m = Self { config, extractor, fusion, decoder };
        m.round_to_f32();
        m
    }

    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            extractor: ExtractorParams::zeros(config.extractor),
            fusion: FusionParams::zeros(&config.extractor),
            decoder: DecoderParams::zeros(&config.extractor, config.decoder_width),
            config,
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.extractor.named_tensors();
        out.extend(self.fusion.named_tensors());
        out.extend(self.decoder.named_tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.extractor.tensors_mut();
        out.extend(self.fusion.tensors_mut());
        out.extend(self.decoder.tensors_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn round_to_f32(&mut self) {
        self.tensors_mut().into_iter().for_each(Tensor::round_to_f32);
    }

    /// Rebuilds a model from named tensors; every parameter must be present
    /// exactly once with its expected shape.
    pub fn from_named(config: ModelConfig, records: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Self::zeros(config);
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, t) in records {
            if by_name.insert(name.clone(), t).is_some() {
                return Err(contract_err!("duplicate parameter '{}'", name));
            }
        }
        for (name, slot) in names.iter().zip(model.tensors_mut()) {
            let t = by_name.remove(name).ok_or_else(|| contract_err!("missing parameter '{}'", name))?;
            if t.shape() != slot.shape() {
                return Err(dim_err!("parameter '{}' has shape {:?}, expected {:?}", name, t.shape(), slot.shape()));
            }
            *slot = t;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(contract_err!("unknown parameter '{}'", extra));
        }
        Ok(model)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        ModelVars {
            extractor: self.extractor.bind(g, trainable),
            fusion: self.fusion.bind(g, trainable),
            decoder: self.decoder.bind(g, trainable),
        }
    }

    /// Matches for the current extractor weights.
    pub fn plan(&self, inputs: &PipelineInputs) -> Result<AlignmentPlan> {
        let q = extract_pyramid(&inputs.lr_up, &self.extractor)?;
        let k = extract_pyramid(&inputs.reference_degraded, &self.extractor)?;
        let params = AlignParams::calibrate(&self.extractor, &inputs.reference_degraded, &k, &self.config.align)?;
        plan_alignment(&q, &k, &params, &self.config.align)
    }
}

/// Graph handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub sr: Var,
    pub f_sa: Pyramid<Var>,
    pub f_ma: Pyramid<Var>,
    pub f_in: Pyramid<Var>,
    /// Confidence maps used for modulation (all zero for disabled branches).
    pub soft: Pyramid<Tensor>,
}

fn zero_like(g: &mut Graph, p: &Pyramid<Var>) -> Pyramid<Var> {
    p.map(|_, &v| {
        let shape = g.value(v).shape().to_vec();
        g.constant(Tensor::zeros(&shape))
    })
}

fn zero_weights(s: &SoftWeightVector) -> SoftWeightVector {
    SoftWeightVector { w: Tensor::zeros(s.w.shape()), grid: s.grid }
}

/// Builds the differentiable forward pass for fixed matches.
pub fn forward_graph(
    g: &mut Graph,
    model: &Model,
    vars: &ModelVars,
    inputs: &PipelineInputs,
    plan: &AlignmentPlan,
    toggles: Toggles,
) -> Result<ForwardVars> {
    let cfg = &model.config.align;
    let lr_up = g.constant(inputs.lr_up.clone());
    let reference = g.constant(inputs.reference.clone());
    let q = extract_pyramid_graph(g, lr_up, &vars.extractor)?;
    let v = extract_pyramid_graph(g, reference, &vars.extractor)?;

    let f_sa = if toggles.use_sa { assemble_sa_graph(g, &v, &plan.sa, cfg)? } else { zero_like(g, &v) };
    let f_ma = if toggles.use_ma { assemble_ma_graph(g, &v, &plan.ma, cfg)? } else { zero_like(g, &v) };
    let f_in = concat_aligned_graph(g, &f_ma, &f_sa)?;

    let ssa = if toggles.use_sa { plan.sa.weights.clone() } else { plan.sa.weights.map(|_, s| zero_weights(s)) };
    let sma = if toggles.use_ma { plan.ma.weight.clone() } else { zero_weights(&plan.ma.weight) };
    let soft = combine_soft(&ssa, &sma)?;

    let features = if toggles.use_chpf {
        let fused = fc_conv_fuse_graph(g, &f_in, &vars.fusion)?;
        let s = soft.map(|_, t| g.constant(t.clone()));
        modulate_graph(g, &fused, &s)?
    } else {
        f_in.clone()
    };
    let sr = decode_graph(g, &features, q.x4, lr_up, &vars.decoder)?;
    Ok(ForwardVars { sr, f_sa, f_ma, f_in, soft })
}

/// Intermediate results of [`forward_full`].
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub inputs: PipelineInputs,
    pub plan: AlignmentPlan,
    pub f_sa: Pyramid<Tensor>,
    pub f_ma: Pyramid<Tensor>,
    pub f_in: Pyramid<Tensor>,
    pub soft: Pyramid<Tensor>,
}

/// Inference from the LR image and its reference, using the model's toggles.
pub fn forward_full(model: &Model, t2_lr: &Tensor, pd: &Tensor) -> Result<(Tensor, Diagnostics)> {
    let inputs = build_inputs(t2_lr, pd)?;
    let plan = model.plan(&inputs)?;
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let out = forward_graph(&mut g, model, &vars, &inputs, &plan, model.config.toggles)?;
    let values = |p: &Pyramid<Var>| p.map(|_, &v| g.value(v).clone());
    let diag = Diagnostics {
        f_sa: values(&out.f_sa),
        f_ma: values(&out.f_ma),
        f_in: values(&out.f_in),
        soft: out.soft,
        inputs,
        plan,
    };
    Ok((g.value(out.sr).clone(), diag))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub loss: LossWeights,
    /// Matches are recomputed every this many steps (1 = every step).
    pub realign_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), loss: LossWeights::default(), realign_every: 10 }
    }
}

/// Fits a model to a single (LR, reference, HR) triple.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    inputs: PipelineInputs,
    hr: Tensor,
    state: AdamState,
    plan: Option<AlignmentPlan>,
    steps_done: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, t2_lr: &Tensor, pd: &Tensor, hr: &Tensor) -> Result<Self> {
        if config.realign_every == 0 {
            return Err(contract_err!("realign_every must be >= 1"));
        }
        let inputs = build_inputs(t2_lr, pd)?;
        if hr.shape() != inputs.lr_up.shape() {
            return Err(dim_err!("HR {:?} vs upsampled LR {:?}", hr.shape(), inputs.lr_up.shape()));
        }
        let state = AdamState::new(config.adam);
        Ok(Self { model, config, inputs, hr: hr.clone(), state, plan: None, steps_done: 0 })
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// One optimizer step. The returned losses are those of the parameters
    /// before the update.
    pub fn step(&mut self) -> Result<LossReport> {
        if self.plan.is_none() || self.steps_done % self.config.realign_every == 0 {
            self.plan = Some(self.model.plan(&self.inputs)?);
        }
        let plan = self.plan.as_ref().expect("plan computed above");
        let mut g = Graph::new();
        let vars = self.model.bind(&mut g, true);
        let out = forward_graph(&mut g, &self.model, &vars, &self.inputs, plan, self.model.config.toggles)?;
        let hr = g.constant(self.hr.clone());
        let (total, [l1, ss, fr]) = total_graph(&mut g, out.sr, hr, &self.config.loss)?;
        let report = LossReport {
            l1: g.value(l1).data()[0],
            ssim_loss: g.value(ss).data()[0],
            fr: g.value(fr).data()[0],
            total: g.value(total).data()[0],
        };
        let grads = g.backward(total)?;
        let grads: Vec<Tensor> = vars.all().into_iter().map(|v| grads.wrt(v)).collect();
        drop(g);
        let mut params = self.model.tensors_mut();
        adam_step(&mut params, &grads, &mut self.state)?;
        params.into_iter().for_each(Tensor::round_to_f32);
        self.steps_done += 1;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::degrade;
    use crate::numerics::{resize, ResizeMode};
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            extractor: ExtractorConfig { image_channels: 1, c4: 4, c2: 6, c1: 8 },
            decoder_width: 8,
            ..ModelConfig::default()
        }
    }

    fn pair(seed: u64) -> (Tensor, Tensor) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let coarse = Tensor::rand_uniform(&[1, 8, 8], -0.8, 0.8, &mut r);
        let hr = resize(&coarse, 32, 32, ResizeMode::Bilinear).unwrap();
        let pd = hr.map(|v| (0.9 * v + 0.05).tanh());
        (hr, pd)
    }

    #[test]
    fn names_and_slots_line_up() {
        let mut m = Model::new(tiny(), 1);
        let shapes: Vec<Vec<usize>> = m.named_tensors().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let names: Vec<String> = m.named_tensors().into_iter().map(|(n, _)| n).collect();
        let slots: Vec<Vec<usize>> = m.tensors_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, slots);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        let mut g = Graph::new();
        let vars = m.bind(&mut g, true);
        let var_shapes: Vec<Vec<usize>> = vars.all().iter().map(|&v| g.value(v).shape().to_vec()).collect();
        assert_eq!(var_shapes, shapes);
    }

    #[test]
    fn named_round_trip_and_validation() {
        let m = Model::new(tiny(), 2);
        let records: Vec<(String, Tensor)> = m.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        assert_eq!(Model::from_named(tiny(), records.clone()).unwrap(), m);
        let mut missing = records.clone();
        missing.pop();
        assert!(Model::from_named(tiny(), missing).is_err());
        let mut extra = records.clone();
        extra.push(("bogus".into(), Tensor::zeros(&[1])));
        assert!(Model::from_named(tiny(), extra).is_err());
        let mut dup = records.clone();
        dup.push(records[0].clone());
        assert!(Model::from_named(tiny(), dup).is_err());
        let mut bad = records;
        bad[0].1 = Tensor::zeros(&[1]);
        assert!(Model::from_named(tiny(), bad).is_err());
    }

    #[test]
    fn untrained_model_returns_bicubic() {
        let (hr, pd) = pair(3);
        let lr = resize(&hr, 8, 8, ResizeMode::Bicubic).unwrap();
        let (sr, diag) = forward_full(&Model::new(tiny(), 4), &lr, &pd).unwrap();
        assert_eq!(sr, diag.inputs.lr_up.map(|v| v.clamp(-1.0, 1.0)));
        assert_eq!(diag.inputs.reference_degraded, degrade(&pd, 4).unwrap());
    }

    #[test]
    fn forward_is_deterministic() {
        let (hr, pd) = pair(5);
        let lr = resize(&hr, 8, 8, ResizeMode::Bicubic).unwrap();
        let mut m = Model::new(tiny(), 6);
        m.decoder.layers[3] = crate::fusion::ConvParams::he_uniform(1, 8, 3, &mut ChaCha8Rng::seed_from_u64(7));
        let a = forward_full(&m, &lr, &pd).unwrap();
        let b = forward_full(&m.clone(), &lr, &pd).unwrap();
        assert_eq!(a, b);
        assert_eq!(Model::new(tiny(), 6), Model::new(tiny(), 6));
    }

    #[test]
    fn toggles_zero_their_branch() {
        let (hr, pd) = pair(8);
        let lr = resize(&hr, 8, 8, ResizeMode::Bicubic).unwrap();
        let full = Model::new(tiny(), 9);
        let (_, d) = forward_full(&full, &lr, &pd).unwrap();
        for (sa, ma) in [(false, true), (true, false)] {
            let mut m = full.clone();
            m.config.toggles = Toggles { use_sa: sa, use_ma: ma, use_chpf: true };
            let (_, dd) = forward_full(&m, &lr, &pd).unwrap();
            for s in Scale::ALL {
                let c = tiny().extractor.channels(s);
                let (ma_part, sa_part) = (dd.f_in.get(s).slice_channels(0, c).unwrap(), dd.f_in.get(s).slice_channels(c, c).unwrap());
                let (ma_full, sa_full) = (d.f_in.get(s).slice_channels(0, c).unwrap(), d.f_in.get(s).slice_channels(c, c).unwrap());
                if sa {
                    assert_eq!(sa_part, sa_full);
                    assert!(ma_part.data().iter().all(|&v| v == 0.0));
                } else {
                    assert_eq!(ma_part, ma_full);
                    assert!(sa_part.data().iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn training_reduces_loss() {
        let (hr, pd) = pair(10);
        let lr = resize(&hr, 8, 8, ResizeMode::Bicubic).unwrap();
        let cfg = TrainConfig { adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() }, ..TrainConfig::default() };
        let mut t = Trainer::new(Model::new(tiny(), 11), cfg, &lr, &pd, &hr).unwrap();
        let first = t.step().unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = t.step().unwrap();
        }
        assert_eq!(t.steps_done(), 31);
        assert!(last.total < first.total, "{} vs {}", last.total, first.total);
        // parameters stay representable at 32 bits
        for (_, p) in t.model.named_tensors() {
            assert!(p.data().iter().all(|&v| (v as f32) as f64 == v));
        }
    }

    #[test]
    fn trainer_rejects_bad_setup() {
        let (hr, pd) = pair(12);
        let lr = resize(&hr, 8, 8, ResizeMode::Bicubic).unwrap();
        let bad = TrainConfig { realign_every: 0, ..TrainConfig::default() };
        assert!(Trainer::new(Model::new(tiny(), 1), bad, &lr, &pd, &hr).is_err());
        let wrong = Tensor::zeros(&[1, 16, 64]);
        assert!(Trainer::new(Model::new(tiny(), 1), TrainConfig::default(), &lr, &pd, &wrong).is_err());
    }
}
