use super::Tensor;
use crate::error::{dim_err, Result};

/// `c = a·b (+ c)` for row-major operands, with either side optionally
/// read transposed. Logical shapes are `a: m×k`, `b: k×n`, `c: m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above describe exactly the `m*k`, `k*n` and `m*n`
    // element buffers checked by the debug assertions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `a[n,k] · b[k,m]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = a.dims2()?;
    let (k2, m) = b.dims2()?;
    if k != k2 {
        return Err(dim_err!("matmul inner dims {} vs {}", k, k2));
    }
    let mut out = Tensor::zeros(&[n, m]);
    gemm(n, k, m, a.data(), false, b.data(), false, out.data_mut(), false);
    Ok(out)
}

/// `a[n,k] · b[m,k]ᵀ`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = a.dims2()?;
    let (m, k2) = b.dims2()?;
    if k != k2 {
        return Err(dim_err!("matmul_bt inner dims {} vs {}", k, k2));
    }
    let mut out = Tensor::zeros(&[n, m]);
    gemm(n, k, m, a.data(), false, b.data(), true, out.data_mut(), false);
    Ok(out)
}

/// Affine map applied to each row: `out[i] = weight · x[i] + bias`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, din) = x.dims2()?;
    let (dout, win) = weight.dims2()?;
    if din != win {
        return Err(dim_err!("linear expects input width {}, got {}", win, din));
    }
    if bias.shape() != [dout] {
        return Err(dim_err!("linear bias shape {:?}, expected [{}]", bias.shape(), dout));
    }
    let mut out = Tensor::zeros(&[n, dout]);
    gemm(n, din, dout, x.data(), false, weight.data(), true, out.data_mut(), false);
    for row in out.data_mut().chunks_mut(dout) {
        row.iter_mut().zip(bias.data()).for_each(|(v, b)| *v += b);
    }
    Ok(out)
}

/// Gradients of [`linear`] with respect to `(x, weight, bias)`.
pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, din) = x.dims2()?;
    let (dout, _) = weight.dims2()?;
    if grad_out.shape() != [n, dout] {
        return Err(dim_err!("linear grad shape {:?}, expected [{}, {}]", grad_out.shape(), n, dout));
    }
    let mut dx = Tensor::zeros(&[n, din]);
    gemm(n, dout, din, grad_out.data(), false, weight.data(), false, dx.data_mut(), false);
    let mut dw = Tensor::zeros(&[dout, din]);
    gemm(dout, n, din, grad_out.data(), true, x.data(), false, dw.data_mut(), false);
    let mut db = Tensor::zeros(&[dout]);
    for row in grad_out.data().chunks(dout) {
        db.data_mut().iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    Ok((dx, dw, db))
}

/// Solves `a·x = b` for symmetric positive-definite `a[n,n]` and `b[n,m]`.
pub fn cholesky_solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, n2) = a.dims2()?;
    let (bn, m) = b.dims2()?;
    if n != n2 || bn != n {
        return Err(dim_err!("cholesky_solve shapes {:?} and {:?}", a.shape(), b.shape()));
    }
    let a = a.data();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(crate::error::contract_err!("matrix is not positive definite"));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut x = b.data().to_vec();
    for col in 0..m {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[i * m + col];
            for p in 0..i {
                s -= l[i * n + p] * x[p * m + col];
            }
            x[i * m + col] = s / l[i * n + i];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[i * m + col];
            for p in i + 1..n {
                s -= l[p * n + i] * x[p * m + col];
            }
            x[i * m + col] = s / l[i * n + i];
        }
    }
    Tensor::new(&[n, m], x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (n, din) = x.dims2().unwrap();
        let (dout, _) = w.dims2().unwrap();
        Tensor::from_fn(&[n, dout], |idx| {
            let (i, o) = (idx / dout, idx % dout);
            (0..din).map(|j| x.get(&[i, j]) * w.get(&[o, j])).sum::<f64>() + b.data()[o]
        })
    }

    #[test]
    fn identity_weight_zero_bias_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
        let y = linear(&x, &Tensor::identity(5), &Tensor::zeros(&[5])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weight_yields_bias_rows() {
        let x = Tensor::ones(&[3, 4]);
        let b = Tensor::new(&[2], vec![0.5, -2.0]).unwrap();
        let y = linear(&x, &Tensor::zeros(&[2, 4]), &b).unwrap();
        for i in 0..3 {
            assert_eq!(y.row(i), b.data());
        }
    }

    #[test]
    fn matches_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = Tensor::rand_uniform(&[3, 5], -1.0, 1.0, &mut rng);
            let w = Tensor::rand_uniform(&[2, 5], -1.0, 1.0, &mut rng);
            let b = Tensor::rand_uniform(&[2], -1.0, 1.0, &mut rng);
            let got = linear(&x, &w, &b).unwrap();
            assert!(got.max_abs_diff(&naive_linear(&x, &w, &b)) < 1e-12);
        }
    }

    #[test]
    fn inner_dimension_mismatch_is_rejected() {
        let x = Tensor::zeros(&[3, 4]);
        assert!(linear(&x, &Tensor::zeros(&[2, 5]), &Tensor::zeros(&[2])).is_err());
        assert!(matmul(&x, &Tensor::zeros(&[3, 4])).is_err());
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Tensor::new(&[2, 2], vec![4.0, 1.0, 1.0, 3.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap();
        let x = cholesky_solve(&a, &b).unwrap();
        assert!((x.data()[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x.data()[1] - 7.0 / 11.0).abs() < 1e-12);
    }
}
