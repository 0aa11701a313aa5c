use super::embed::PatchEmbedding;
use crate::autodiff::gather_rows;
use crate::error::{contract_err, dim_err, Result};
use crate::numerics::{gemm, softmax_in_place, GridMeta, Tensor};

/// Query rows processed per streamed block. Every dense or streamed
/// correlation uses the same partition, so their rows agree bit for bit.
pub(crate) const BLOCK_ROWS: usize = 256;

/// Row-softmaxed similarity between query and key patches.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub scores: Tensor,
    pub query_grid: GridMeta,
    pub key_grid: GridMeta,
}

/// Per-query index of the best key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchIndex {
    pub idx: Vec<usize>,
    /// Number of keys the indices refer to.
    pub num_keys: usize,
}

impl MatchIndex {
    pub fn new(idx: Vec<usize>, num_keys: usize) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&j| j >= num_keys) {
            return Err(contract_err!("match index {} out of range for {} keys", bad, num_keys));
        }
        Ok(Self { idx, num_keys })
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }
}

/// Per-query confidence laid out on a patch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftWeightVector {
    pub w: Tensor,
    pub grid: GridMeta,
}

impl SoftWeightVector {
    pub fn new(w: Tensor, grid: GridMeta) -> Result<Self> {
        if w.shape() != [grid.len()] {
            return Err(dim_err!("soft weights {:?} for a grid of {} cells", w.shape(), grid.len()));
        }
        Ok(Self { w, grid })
    }
}

/// First maximum of a row.
pub(crate) fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

fn check_pair(q: &PatchEmbedding, k: &PatchEmbedding) -> Result<()> {
    if q.dim() != k.dim() {
        return Err(dim_err!("query dim {} vs key dim {}", q.dim(), k.dim()));
    }
    if k.is_empty() {
        return Err(dim_err!("no keys to correlate against"));
    }
    Ok(())
}

/// Streams `softmax(q·kᵀ/√d)` in blocks of [`BLOCK_ROWS`] query rows,
/// calling `f(first_row, block)` with a `rows × Nk` slice.
pub(crate) fn for_each_score_block(
    q: &Tensor,
    k: &Tensor,
    mut f: impl FnMut(usize, &[f64]) -> Result<()>,
) -> Result<()> {
    let (nq, d) = q.dims2()?;
    let (nk, dk) = k.dims2()?;
    if d != dk {
        return Err(dim_err!("query dim {} vs key dim {}", d, dk));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut buf = vec![0.0; BLOCK_ROWS.min(nq.max(1)) * nk];
    let mut start = 0;
    while start < nq {
        let rows = BLOCK_ROWS.min(nq - start);
        let block = &mut buf[..rows * nk];
        gemm(rows, d, nk, &q.data()[start * d..(start + rows) * d], false, k.data(), true, block, false);
        for row in block.chunks_mut(nk) {
            row.iter_mut().for_each(|v| *v *= scale);
            softmax_in_place(row);
        }
        f(start, block)?;
        start += rows;
    }
    Ok(())
}

/// Dense correlation `softmax_rows(q·kᵀ/√d)`.
pub fn correlate(q: &PatchEmbedding, k: &PatchEmbedding) -> Result<CorrelationMatrix> {
    check_pair(q, k)?;
    let nk = k.len();
    let mut scores = Vec::with_capacity(q.len() * nk);
    for_each_score_block(&q.rows, &k.rows, |_, block| {
        scores.extend_from_slice(block);
        Ok(())
    })?;
    Ok(CorrelationMatrix {
        scores: Tensor::new(&[q.len(), nk], scores)?,
        query_grid: q.grid,
        key_grid: k.grid,
    })
}

pub fn hard_match(c: &CorrelationMatrix) -> MatchIndex {
    let (nq, nk) = (c.scores.shape()[0], c.scores.shape()[1]);
    let idx = (0..nq).map(|i| argmax(c.scores.row(i)).0).collect();
    MatchIndex { idx, num_keys: nk }
}

/// Row maxima of a correlation, laid out on its query grid.
pub fn row_max_weights(c: &CorrelationMatrix) -> SoftWeightVector {
    let nq = c.scores.shape()[0];
    let w = (0..nq).map(|i| argmax(c.scores.row(i)).1).collect();
    SoftWeightVector { w: Tensor::new(&[nq], w).expect("one weight per row"), grid: c.query_grid }
}

/// Exhaustive maximum-inner-product search with first-index ties.
pub fn brute_force_match(q_rows: &Tensor, k_rows: &Tensor) -> Result<MatchIndex> {
    let (nq, d) = q_rows.dims2()?;
    let (nk, dk) = k_rows.dims2()?;
    if d != dk {
        return Err(dim_err!("query dim {} vs key dim {}", d, dk));
    }
    if nk == 0 {
        return Err(dim_err!("no keys to match against"));
    }
    let idx = (0..nq)
        .map(|i| {
            let q = q_rows.row(i);
            let mut best = (0, f64::NEG_INFINITY);
            for j in 0..nk {
                let s: f64 = q.iter().zip(k_rows.row(j)).map(|(a, b)| a * b).sum();
                if s > best.1 {
                    best = (j, s);
                }
            }
            best.0
        })
        .collect();
    Ok(MatchIndex { idx, num_keys: nk })
}

/// Gathers value rows by match index.
pub fn warp(v: &PatchEmbedding, m: &MatchIndex) -> Result<Tensor> {
    gather_rows(&v.rows, &m.idx)
}

/// Maps each fine cell to the coarse cell containing it by floor scaling.
pub(crate) fn coarse_cell_map(from: &GridMeta, to: &GridMeta) -> Result<Vec<usize>> {
    if to.gh % from.gh != 0 || to.gw % from.gw != 0 {
        return Err(contract_err!(
            "grid {}x{} is not an integer multiple of {}x{}",
            to.gh,
            to.gw,
            from.gh,
            from.gw
        ));
    }
    let mut map = Vec::with_capacity(to.len());
    for r in 0..to.gh {
        for c in 0..to.gw {
            map.push((r * from.gh / to.gh) * from.gw + c * from.gw / to.gw);
        }
    }
    Ok(map)
}

/// Reciprocal of the key-axis replication factor, the row renormalization.
pub(crate) fn replication_scale(from: &GridMeta, to: &GridMeta) -> f64 {
    1.0 / ((to.gh / from.gh) * (to.gw / from.gw)) as f64
}

/// Nearest-neighbor upsampling of both axes, rows renormalized to sum 1.
pub fn upsample_correlation(c: &CorrelationMatrix, to_query: &GridMeta, to_key: &GridMeta) -> Result<CorrelationMatrix> {
    let qmap = coarse_cell_map(&c.query_grid, to_query)?;
    let kmap = coarse_cell_map(&c.key_grid, to_key)?;
    let inv = replication_scale(&c.key_grid, to_key);
    let mut out = Vec::with_capacity(qmap.len() * kmap.len());
    for &qi in &qmap {
        let src = c.scores.row(qi);
        out.extend(kmap.iter().map(|&kj| src[kj] * inv));
    }
    Ok(CorrelationMatrix {
        scores: Tensor::new(&[qmap.len(), kmap.len()], out)?,
        query_grid: *to_query,
        key_grid: *to_key,
    })
}

/// Sum of correlations upsampled to the grids of the last (finest) one,
/// accumulated in the given order.
pub fn merge_correlations(parts: &[&CorrelationMatrix]) -> Result<CorrelationMatrix> {
    let finest = parts.last().ok_or_else(|| contract_err!("nothing to merge"))?;
    let (qg, kg) = (finest.query_grid, finest.key_grid);
    let mut acc: Option<Tensor> = None;
    for c in parts {
        let up = upsample_correlation(c, &qg, &kg)?;
        acc = Some(match acc {
            None => up.scores,
            Some(a) => a.add(&up.scores)?,
        });
    }
    Ok(CorrelationMatrix { scores: acc.expect("non-empty"), query_grid: qg, key_grid: kg })
}
