use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{ComplexTensor, Tensor};
use crate::error::{dim_err, Result};

/// Unnormalized forward 2-D DFT of every channel of a real `[C,H,W]` tensor.
/// Any extents are accepted.
pub fn fft2(x: &Tensor) -> Result<ComplexTensor> {
    let imag = Tensor::zeros(x.shape());
    fft2_complex(&ComplexTensor { real: x.clone(), imag })
}

/// Unnormalized forward 2-D DFT of a complex `[C,H,W]` tensor.
pub fn fft2_complex(x: &ComplexTensor) -> Result<ComplexTensor> {
    let (c, h, w) = x.real.dims3()?;
    if x.imag.shape() != x.real.shape() {
        return Err(dim_err!("complex planes disagree in shape"));
    }
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);
    let mut buf: Vec<Complex<f64>> =
        x.real.data().iter().zip(x.imag.data()).map(|(&re, &im)| Complex::new(re, im)).collect();
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for plane in buf.chunks_mut(h * w) {
        for row in plane.chunks_mut(w) {
            row_fft.process(row);
        }
        for xx in 0..w {
            for y in 0..h {
                col[y] = plane[y * w + xx];
            }
            col_fft.process(&mut col);
            for y in 0..h {
                plane[y * w + xx] = col[y];
            }
        }
    }
    let shape = [c, h, w];
    ComplexTensor::new(
        Tensor::new(&shape, buf.iter().map(|z| z.re).collect())?,
        Tensor::new(&shape, buf.iter().map(|z| z.im).collect())?,
    )
}

/// Gradient of a scalar with respect to the real input of [`fft2`], given its
/// gradients with respect to the real and imaginary output planes.
pub fn fft2_backward(grad_re: &Tensor, grad_im: &Tensor) -> Result<Tensor> {
    // The 2-D DFT matrix is symmetric, so the adjoint of x -> (Re Fx, Im Fx)
    // is (gr, gi) -> Re F(gr - i gi).
    let conj = ComplexTensor::new(grad_re.clone(), grad_im.scale(-1.0))?;
    Ok(fft2_complex(&conj)?.real)
}
