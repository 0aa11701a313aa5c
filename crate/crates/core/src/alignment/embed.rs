use crate::error::{contract_err, dim_err, Result};
use crate::numerics::{cholesky_solve, gemm, linear, unfold, GridMeta, Tensor};

/// Affine map applied to patch rows: `x·Wᵀ + b` with `W: [Dout, Din]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Projection {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (dout, _) = weight.dims2()?;
        if bias.shape() != [dout] {
            return Err(dim_err!("projection bias {:?} for {} outputs", bias.shape(), dout));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(d: usize) -> Self {
        Self { weight: Tensor::identity(d), bias: Tensor::zeros(&[d]) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn apply(&self, rows: &Tensor) -> Result<Tensor> {
        linear(rows, &self.weight, &self.bias)
    }

    /// Least-squares fit of `y ≈ x·Wᵀ + b` with a ridge penalty on `W`
    /// (not on `b`). `ridge` is relative to the mean diagonal of `xᵀx`.
    pub fn fit_ridge(x: &Tensor, y: &Tensor, ridge: f64) -> Result<Self> {
        let (n, din) = x.dims2()?;
        let (ny, dout) = y.dims2()?;
        if n != ny || n == 0 {
            return Err(dim_err!("ridge fit needs matching non-empty rows, got {} and {}", n, ny));
        }
        if !(ridge > 0.0) {
            return Err(contract_err!("ridge penalty must be positive, got {}", ridge));
        }
        // augmented design [x | 1]
        let da = din + 1;
        let mut xa = Vec::with_capacity(n * da);
        for r in 0..n {
            xa.extend_from_slice(x.row(r));
            xa.push(1.0);
        }
        let mut gram = vec![0.0; da * da];
        gemm(da, n, da, &xa, true, &xa, false, &mut gram, false);
        let mut rhs = vec![0.0; da * dout];
        gemm(da, n, dout, &xa, true, y.data(), false, &mut rhs, false);
        let trace: f64 = (0..din).map(|i| gram[i * da + i]).sum();
        let lambda = ridge * (trace / din.max(1) as f64).max(1e-12);
        for i in 0..da {
            // a tiny penalty on the bias keeps all-zero designs solvable
            gram[i * da + i] += if i < din { lambda } else { lambda * 1e-6 };
        }
        let sol = cholesky_solve(&Tensor::new(&[da, da], gram)?, &Tensor::new(&[da, dout], rhs)?)?;
        let mut weight = Tensor::zeros(&[dout, din]);
        for i in 0..din {
            for o in 0..dout {
                weight.data_mut()[o * din + i] = sol.data()[i * dout + o];
            }
        }
        let bias = Tensor::new(&[dout], sol.row(din).to_vec())?;
        Ok(Self { weight, bias })
    }
}

/// Unfolded (and optionally projected) patch rows plus their grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbedding {
    pub rows: Tensor,
    pub grid: GridMeta,
    pub projected: bool,
}

impl PatchEmbedding {
    pub fn new(rows: Tensor, grid: GridMeta, projected: bool) -> Result<Self> {
        let (n, d) = rows.dims2()?;
        if n != grid.len() || d == 0 {
            return Err(dim_err!("embedding {:?} does not fit a {}x{} grid", rows.shape(), grid.gh, grid.gw));
        }
        Ok(Self { rows, grid, projected })
    }

    pub fn len(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    /// Rescales every non-zero row to norm `sqrt(√d / τ)`, so that the
    /// `q·kᵀ/√d` logit of two such rows equals `cos(q, k) / τ`.
    /// All-zero rows are left at zero.
    pub fn normalized(&self, temperature: f64) -> Self {
        let d = self.dim();
        let target = ((d as f64).sqrt() / temperature).sqrt();
        let mut rows = self.rows.clone();
        for row in rows.data_mut().chunks_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                let s = target / norm;
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        Self { rows, grid: self.grid, projected: self.projected }
    }
}

/// Unfolds `feat[c,h,w]` into patch rows and applies `proj` when given.
pub fn word_embed(
    feat: &Tensor,
    patch: usize,
    stride: usize,
    pad: usize,
    proj: Option<&Projection>,
) -> Result<PatchEmbedding> {
    let (rows, grid) = unfold(feat, patch, stride, pad)?;
    match proj {
        None => PatchEmbedding::new(rows, grid, false),
        Some(p) => PatchEmbedding::new(p.apply(&rows)?, grid, true),
    }
}
