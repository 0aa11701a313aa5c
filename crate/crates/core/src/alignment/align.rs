use super::correlation::{
    argmax, coarse_cell_map, correlate, for_each_score_block, replication_scale, CorrelationMatrix, MatchIndex,
    SoftWeightVector, BLOCK_ROWS,
};
use super::embed::{word_embed, PatchEmbedding, Projection};
use crate::autodiff::{Graph, Var};
use crate::error::{contract_err, dim_err, Result};
use crate::extractor::{stage_forward, ExtractorParams, FeaturePyramid};
use crate::numerics::{resize, unfold, GridMeta, ResizeMode, Tensor};
use crate::pyramid::{Pyramid, Scale};

/// Aligned value features per scale, at that scale's spatial dims.
pub type AlignedPyramid = Pyramid<Tensor>;

#[derive(Clone, Debug, PartialEq)]
pub struct AlignConfig {
    pub patch: usize,
    pub stride: usize,
    pub pad: usize,
    /// Softmax temperature on cosine similarity of query and key patches.
    pub temperature: f64,
    /// Relative ridge penalty used when calibrating key projections.
    pub ridge: f64,
    /// Scales that take part in the merged multi-scale correlation.
    pub ma_scales: Pyramid<bool>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            patch: 3,
            stride: 1,
            pad: 1,
            temperature: 0.03,
            ridge: 1e-3,
            ma_scales: Pyramid { x4: true, x2: true, x1: true },
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.stride == 0 {
            return Err(contract_err!("patch and stride must be >= 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(contract_err!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return Err(contract_err!("ridge must be positive, got {}", self.ridge));
        }
        if !Scale::ALL.iter().any(|&s| *self.ma_scales.get(s)) {
            return Err(contract_err!("at least one scale must take part in multi-scale alignment"));
        }
        Ok(())
    }

    fn embed(&self, feat: &Tensor, proj: Option<&Projection>) -> Result<PatchEmbedding> {
        Ok(word_embed(feat, self.patch, self.stride, self.pad, proj)?.normalized(self.temperature))
    }

    fn grid(&self, channels: usize, h: usize, w: usize) -> Result<GridMeta> {
        GridMeta::new(channels, h, w, self.patch, self.stride, self.pad)
    }
}

/// Projections applied before single-to-multi-scale correlation. `None`
/// leaves rows unprojected.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignParams {
    pub q_proj: Option<Projection>,
    pub k_proj: Pyramid<Option<Projection>>,
}

impl AlignParams {
    pub fn identity() -> Self {
        Self { q_proj: None, k_proj: Pyramid { x4: None, x2: None, x1: None } }
    }

    /// Fits the coarse key projections so a coarse patch descriptor predicts
    /// the finest-stage descriptor of the same patch in a correspondingly
    /// downscaled image. Queries and 4× keys stay unprojected.
    pub fn calibrate(
        extractor: &ExtractorParams,
        refdd_img: &Tensor,
        refdd: &FeaturePyramid,
        cfg: &AlignConfig,
    ) -> Result<Self> {
        let (_, h, w) = refdd_img.dims3()?;
        let mut k_proj = Pyramid { x4: None, x2: None, x1: None };
        for s in [Scale::X2, Scale::X1] {
            let st = s.stride_from_hr();
            let small = resize(refdd_img, h / st, w / st, ResizeMode::Bicubic)?;
            let target = stage_forward(&small, &extractor.stages[0])?;
            let (x, _) = unfold(refdd.get(s), cfg.patch, cfg.stride, cfg.pad)?;
            let (y, _) = unfold(&target, cfg.patch, cfg.stride, cfg.pad)?;
            *k_proj.get_mut(s) = Some(Projection::fit_ridge(&x, &y, cfg.ridge)?);
        }
        Ok(Self { q_proj: None, k_proj })
    }

    fn shares_finest_correlation(&self) -> bool {
        self.q_proj.is_none() && self.k_proj.x4.is_none()
    }
}

/// Single-to-multi-scale matches: 4× queries against each scale's keys.
#[derive(Clone, Debug, PartialEq)]
pub struct SaMatches {
    pub idx: Pyramid<MatchIndex>,
    /// Row maxima, on the 4× query grid.
    pub weights: Pyramid<SoftWeightVector>,
    pub key_grids: Pyramid<GridMeta>,
}

/// Multi-to-multi matches from the merged correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct MaMatches {
    /// 4× query → 4× key.
    pub merged: MatchIndex,
    /// Merged row maximum over the number of merged scales, on the 4× query grid.
    pub weight: SoftWeightVector,
    /// Scale-n query → scale-n key, transferred through the 4× match.
    pub per_scale: Pyramid<MatchIndex>,
    pub grids: Pyramid<GridMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentPlan {
    pub sa: SaMatches,
    pub ma: MaMatches,
}

fn check_pyramids(a: &FeaturePyramid, b: &FeaturePyramid) -> Result<()> {
    for s in Scale::ALL {
        if a.get(s).shape() != b.get(s).shape() {
            return Err(dim_err!(
                "{} features {:?} vs {:?}",
                s.label(),
                a.get(s).shape(),
                b.get(s).shape()
            ));
        }
    }
    Ok(())
}

fn argmax_block(block: &[f64], nk: usize, idx: &mut Vec<usize>, w: &mut Vec<f64>) {
    for row in block.chunks(nk) {
        let (j, m) = argmax(row);
        idx.push(j);
        w.push(m);
    }
}

fn sa_scale(q: &PatchEmbedding, k: &PatchEmbedding) -> Result<(MatchIndex, SoftWeightVector)> {
    if q.dim() != k.dim() {
        return Err(dim_err!("query dim {} vs key dim {}; a key projection is required", q.dim(), k.dim()));
    }
    let nk = k.len();
    let (mut idx, mut w) = (Vec::with_capacity(q.len()), Vec::with_capacity(q.len()));
    for_each_score_block(&q.rows, &k.rows, |_, block| {
        argmax_block(block, nk, &mut idx, &mut w);
        Ok(())
    })?;
    Ok((MatchIndex::new(idx, nk)?, SoftWeightVector::new(Tensor::new(&[q.len()], w)?, q.grid)?))
}

/// Single-to-multi-scale matching. `skip_finest` leaves the 4× entry empty
/// for the caller to fill.
fn sa_matches_inner(
    lr: &FeaturePyramid,
    refdd: &FeaturePyramid,
    params: &AlignParams,
    cfg: &AlignConfig,
    skip_finest: bool,
) -> Result<SaMatches> {
    cfg.validate()?;
    check_pyramids(lr, refdd)?;
    let q = cfg.embed(&lr.x4, params.q_proj.as_ref())?;
    let mut idx = Pyramid::from_fn(|_| MatchIndex { idx: vec![], num_keys: 0 });
    let mut weights = Pyramid::from_fn(|_| SoftWeightVector { w: Tensor::zeros(&[0]), grid: q.grid });
    let mut key_grids = Pyramid::from_fn(|_| q.grid);
    for s in Scale::ALL {
        let k = cfg.embed(refdd.get(s), params.k_proj.get(s).as_ref())?;
        *key_grids.get_mut(s) = k.grid;
        if skip_finest && s == Scale::X4 {
            idx.x4.num_keys = k.len();
            continue;
        }
        let (m, w) = sa_scale(&q, &k)?;
        *idx.get_mut(s) = m;
        *weights.get_mut(s) = w;
    }
    Ok(SaMatches { idx, weights, key_grids })
}

pub fn sa_matches(
    lr: &FeaturePyramid,
    refdd: &FeaturePyramid,
    params: &AlignParams,
    cfg: &AlignConfig,
) -> Result<SaMatches> {
    sa_matches_inner(lr, refdd, params, cfg, false)
}

/// Multi-to-multi matching. The merged matrix is never materialized: rows
/// of the 4× correlation are streamed and the coarser (dense) correlations
/// are added through their cell maps, in the order 1×, 2×, 4×.
/// `on_finest` sees every streamed block of the 4× correlation.
fn ma_matches_inner(
    lr: &FeaturePyramid,
    refdd: &FeaturePyramid,
    cfg: &AlignConfig,
    mut on_finest: impl FnMut(&[f64], usize),
) -> Result<MaMatches> {
    cfg.validate()?;
    check_pyramids(lr, refdd)?;
    let q = Pyramid::try_from_fn(|s| cfg.embed(lr.get(s), None))?;
    let k = Pyramid::try_from_fn(|s| cfg.embed(refdd.get(s), None))?;
    let (qg4, kg4) = (q.x4.grid, k.x4.grid);
    let (nq4, nk4) = (q.x4.len(), k.x4.len());

    struct Coarse {
        c: CorrelationMatrix,
        qmap: Vec<usize>,
        kmap: Vec<usize>,
        inv: f64,
    }
    let mut coarse = Vec::new();
    for s in [Scale::X1, Scale::X2] {
        if *cfg.ma_scales.get(s) {
            let c = correlate(q.get(s), k.get(s))?;
            let qmap = coarse_cell_map(&c.query_grid, &qg4)?;
            let kmap = coarse_cell_map(&c.key_grid, &kg4)?;
            let inv = replication_scale(&c.key_grid, &kg4);
            coarse.push(Coarse { c, qmap, kmap, inv });
        }
    }
    let use_finest = cfg.ma_scales.x4;
    let merged_count = coarse.len() + usize::from(use_finest);

    let mut idx = Vec::with_capacity(nq4);
    let mut w = Vec::with_capacity(nq4);
    let mut merged = vec![0.0; nk4];
    let mut process = |start: usize, finest: Option<&[f64]>, rows: usize| {
        for r in 0..rows {
            let i = start + r;
            merged.iter_mut().for_each(|v| *v = 0.0);
            for part in &coarse {
                let src = part.c.scores.row(part.qmap[i]);
                for (m, &kj) in merged.iter_mut().zip(&part.kmap) {
                    *m += src[kj] * part.inv;
                }
            }
            if let Some(block) = finest {
                let row = &block[r * nk4..(r + 1) * nk4];
                if coarse.is_empty() {
                    merged.copy_from_slice(row);
                } else {
                    merged.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                }
            }
            let (j, m) = argmax(&merged);
            idx.push(j);
            w.push(m / merged_count as f64);
        }
    };
    if use_finest {
        for_each_score_block(&q.x4.rows, &k.x4.rows, |start, block| {
            on_finest(block, nk4);
            process(start, Some(block), block.len() / nk4);
            Ok(())
        })?;
    } else {
        let mut start = 0;
        while start < nq4 {
            let rows = BLOCK_ROWS.min(nq4 - start);
            process(start, None, rows);
            start += rows;
        }
    }

    let merged = MatchIndex::new(idx, nk4)?;
    let per_scale = Pyramid::try_from_fn(|s| transfer_index(&merged, &qg4, &kg4, &q.get(s).grid, &k.get(s).grid))?;
    Ok(MaMatches {
        merged,
        weight: SoftWeightVector::new(Tensor::new(&[nq4], w)?, qg4)?,
        per_scale,
        grids: q.map(|_, e| e.grid),
    })
}

pub fn ma_matches(lr: &FeaturePyramid, refdd: &FeaturePyramid, cfg: &AlignConfig) -> Result<MaMatches> {
    ma_matches_inner(lr, refdd, cfg, |_, _| {})
}

/// Carries a 4× match down to a coarser grid: each coarse query cell is
/// lifted to the 4× cell at the centre of its block, and the matched 4× key
/// is mapped back down by floor scaling.
pub fn transfer_index(
    merged: &MatchIndex,
    q4: &GridMeta,
    k4: &GridMeta,
    qn: &GridMeta,
    kn: &GridMeta,
) -> Result<MatchIndex> {
    if q4.gh % qn.gh != 0 || q4.gw % qn.gw != 0 || k4.gh % kn.gh != 0 || k4.gw % kn.gw != 0 {
        return Err(contract_err!("coarse grids must divide the 4x grids"));
    }
    let (sy, sx) = (q4.gh / qn.gh, q4.gw / qn.gw);
    let (ky, kx) = (k4.gh / kn.gh, k4.gw / kn.gw);
    let mut idx = Vec::with_capacity(qn.len());
    for r in 0..qn.gh {
        for c in 0..qn.gw {
            let lifted = (r * sy + sy / 2) * q4.gw + c * sx + sx / 2;
            let j4 = merged.idx[lifted];
            let (kr, kc) = (j4 / k4.gw, j4 % k4.gw);
            idx.push((kr / ky) * kn.gw + kc / kx);
        }
    }
    MatchIndex::new(idx, kn.len())
}

/// Single- and multi-scale matches. When the finest S-A correlation is the
/// same matrix as the finest M-A one, it is computed once.
pub fn plan_alignment(
    lr: &FeaturePyramid,
    refdd: &FeaturePyramid,
    params: &AlignParams,
    cfg: &AlignConfig,
) -> Result<AlignmentPlan> {
    let share = params.shares_finest_correlation() && cfg.ma_scales.x4;
    let mut sa = sa_matches_inner(lr, refdd, params, cfg, share)?;
    let (mut idx, mut w) = (Vec::new(), Vec::new());
    let ma = ma_matches_inner(lr, refdd, cfg, |block, nk| {
        if share {
            argmax_block(block, nk, &mut idx, &mut w);
        }
    })?;
    if share {
        let n = w.len();
        sa.idx.x4 = MatchIndex::new(idx, sa.key_grids.x4.len())?;
        sa.weights.x4 = SoftWeightVector::new(Tensor::new(&[n], w)?, sa.weights.x4.grid)?;
    }
    Ok(AlignmentPlan { sa, ma })
}

/// Builds S-A aligned features from value maps `values` (one per scale):
/// gathered patches are folded on the 4× query grid and average-pooled to
/// each scale.
pub fn assemble_sa_graph(g: &mut Graph, values: &Pyramid<Var>, sa: &SaMatches, cfg: &AlignConfig) -> Result<Pyramid<Var>> {
    let qgrid = sa.weights.x4.grid;
    Pyramid::try_from_fn(|s| {
        let (c, h, w) = g.value(*values.get(s)).dims3()?;
        let (v, _) = g.unfold(*values.get(s), cfg.patch, cfg.stride, cfg.pad)?;
        let warped = g.gather_rows(v, &sa.idx.get(s).idx)?;
        let fold_grid = cfg.grid(c, qgrid.height, qgrid.width)?;
        let folded = g.fold(warped, fold_grid)?;
        let k = qgrid.height / h;
        if k * h != qgrid.height || k * w != qgrid.width {
            return Err(dim_err!("{} values {}x{} do not tile the 4x grid", s.label(), h, w));
        }
        if k == 1 {
            Ok(folded)
        } else {
            g.avg_pool(folded, k)
        }
    })
}

/// Builds M-A aligned features: scale-n value patches gathered by the
/// transferred index and folded on the scale-n grid.
pub fn assemble_ma_graph(g: &mut Graph, values: &Pyramid<Var>, ma: &MaMatches, cfg: &AlignConfig) -> Result<Pyramid<Var>> {
    Pyramid::try_from_fn(|s| {
        let (v, vgrid) = g.unfold(*values.get(s), cfg.patch, cfg.stride, cfg.pad)?;
        let qgrid = ma.grids.get(s);
        if qgrid.gh != vgrid.gh || qgrid.gw != vgrid.gw {
            return Err(dim_err!("{} value grid differs from the query grid", s.label()));
        }
        let warped = g.gather_rows(v, &ma.per_scale.get(s).idx)?;
        g.fold(warped, vgrid)
    })
}

fn assemble_plain(
    values: &FeaturePyramid,
    build: impl FnOnce(&mut Graph, &Pyramid<Var>) -> Result<Pyramid<Var>>,
) -> Result<AlignedPyramid> {
    let mut g = Graph::new();
    let vars = values.map(|_, t| g.constant(t.clone()));
    let out = build(&mut g, &vars)?;
    Ok(out.map(|_, &v| g.value(v).clone()))
}

/// Single-to-multi-scale alignment: aligned features and per-scale
/// confidences (on the 4× query grid).
pub fn sa_align(
    lr: &FeaturePyramid,
    refdd: &FeaturePyramid,
    reference: &FeaturePyramid,
    params: &AlignParams,
    cfg: &AlignConfig,
) -> Result<(AlignedPyramid, Pyramid<SoftWeightVector>)> {
    check_pyramids(refdd, reference)?;
    let sa = sa_matches(lr, refdd, params, cfg)?;
    let f = assemble_plain(reference, |g, v| assemble_sa_graph(g, v, &sa, cfg))?;
    Ok((f, sa.weights))
}

/// Multi-to-multi-scale alignment: aligned features and the merged confidence.
pub fn ma_align(
    lr: &FeaturePyramid,
    refdd: &FeaturePyramid,
    reference: &FeaturePyramid,
    cfg: &AlignConfig,
) -> Result<(AlignedPyramid, SoftWeightVector)> {
    check_pyramids(refdd, reference)?;
    let ma = ma_matches(lr, refdd, cfg)?;
    let f = assemble_plain(reference, |g, v| assemble_ma_graph(g, v, &ma, cfg))?;
    Ok((f, ma.weight))
}

/// Spatializes per-patch weights: each weight lands on its patch's centre
/// pixel, and the map is nearest-resized to `(h, w)` when the sizes differ.
pub fn fold_weights(s: &SoftWeightVector, h: usize, w: usize) -> Result<Tensor> {
    let g = &s.grid;
    if s.w.shape() != [g.len()] {
        return Err(dim_err!("soft weights {:?} for a grid of {} cells", s.w.shape(), g.len()));
    }
    let mut map = Tensor::zeros(&[1, g.height, g.width]);
    for gy in 0..g.gh {
        for gx in 0..g.gw {
            let y = (gy * g.stride + g.patch / 2) as isize - g.pad as isize;
            let x = (gx * g.stride + g.patch / 2) as isize - g.pad as isize;
            if y >= 0 && x >= 0 && (y as usize) < g.height && (x as usize) < g.width {
                map.set(&[0, y as usize, x as usize], s.w.data()[gy * g.gw + gx]);
            }
        }
    }
    if (h, w) == (g.height, g.width) {
        Ok(map)
    } else {
        resize(&map, h, w, ResizeMode::Nearest)
    }
}
