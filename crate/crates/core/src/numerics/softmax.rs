use super::Tensor;
use crate::error::{dim_err, Result};

/// In-place max-subtracted softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// Softmax over the last axis of a `[N,M]` matrix: every row becomes a distribution.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let (n, cols) = m.dims2()?;
    if n == 0 || cols == 0 {
        return Err(dim_err!("softmax_rows needs a non-empty matrix"));
    }
    let mut out = m.clone();
    out.data_mut().chunks_mut(cols).for_each(softmax_in_place);
    Ok(out)
}

/// Vector-Jacobian product of softmax given its output `y`.
pub fn softmax_rows_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (_, cols) = y.dims2()?;
    let mut dx = grad_out.clone();
    for (drow, yrow) in dx.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
        let dot: f64 = drow.iter().zip(yrow).map(|(g, y)| g * y).sum();
        drow.iter_mut().zip(yrow).for_each(|(g, y)| *g = y * (*g - dot));
    }
    Ok(dx)
}
