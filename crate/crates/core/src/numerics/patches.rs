use super::Tensor;
use crate::error::{dim_err, Result};

/// Geometry of a sliding-window patch grid over a `[C,H,W]` source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridMeta {
    pub patch: usize,
    pub stride: usize,
    pub pad: usize,
    pub gh: usize,
    pub gw: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl GridMeta {
    pub fn new(channels: usize, height: usize, width: usize, patch: usize, stride: usize, pad: usize) -> Result<Self> {
        if patch == 0 || stride == 0 {
            return Err(dim_err!("patch and stride must be >= 1"));
        }
        if height + 2 * pad < patch || width + 2 * pad < patch {
            return Err(dim_err!(
                "patch {} larger than padded image {}x{}",
                patch,
                height + 2 * pad,
                width + 2 * pad
            ));
        }
        Ok(Self {
            patch,
            stride,
            pad,
            gh: (height + 2 * pad - patch) / stride + 1,
            gw: (width + 2 * pad - patch) / stride + 1,
            channels,
            height,
            width,
        })
    }

    /// Number of patches `gh·gw`.
    pub fn len(&self) -> usize {
        self.gh * self.gw
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened patch width `C·patch²`.
    pub fn row_width(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// Image coordinate of the patch at grid cell `(gy, gx)`'s top-left corner
    /// (may be negative inside the padding).
    fn origin(&self, gy: usize, gx: usize) -> (isize, isize) {
        (
            (gy * self.stride) as isize - self.pad as isize,
            (gx * self.stride) as isize - self.pad as isize,
        )
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        // f(patch row, column within row, flat image index)
        let p = self.patch;
        for gy in 0..self.gh {
            for gx in 0..self.gw {
                let row = gy * self.gw + gx;
                let (oy, ox) = self.origin(gy, gx);
                for c in 0..self.channels {
                    for ky in 0..p {
                        let y = oy + ky as isize;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        for kx in 0..p {
                            let x = ox + kx as isize;
                            if x < 0 || x >= self.width as isize {
                                continue;
                            }
                            let col = (c * p + ky) * p + kx;
                            f(row, col, (c * self.height + y as usize) * self.width + x as usize);
                        }
                    }
                }
            }
        }
    }
}

/// Extracts every patch as one row of a `[N, C·patch²]` matrix, grid cells in
/// row-major order, columns ordered channel, then kernel row, then kernel column.
pub fn unfold(x: &Tensor, patch: usize, stride: usize, pad: usize) -> Result<(Tensor, GridMeta)> {
    let (c, h, w) = x.dims3()?;
    let grid = GridMeta::new(c, h, w, patch, stride, pad)?;
    let d = grid.row_width();
    let src = x.data();
    let mut out = vec![0.0; grid.len() * d];
    grid.for_each_tap(|row, col, idx| out[row * d + col] = src[idx]);
    Ok((Tensor::new(&[grid.len(), d], out)?, grid))
}

/// Scatters patch rows back onto the image, summing overlaps.
pub fn fold_sum(patches: &Tensor, grid: &GridMeta) -> Result<Tensor> {
    check_patches(patches, grid)?;
    let d = grid.row_width();
    let src = patches.data();
    let mut out = vec![0.0; grid.channels * grid.height * grid.width];
    grid.for_each_tap(|row, col, idx| out[idx] += src[row * d + col]);
    Tensor::new(&[grid.channels, grid.height, grid.width], out)
}

/// Number of patches covering each pixel.
pub fn coverage(grid: &GridMeta) -> Tensor {
    let mut out = Tensor::zeros(&[grid.channels, grid.height, grid.width]);
    let data = out.data_mut();
    grid.for_each_tap(|_, _, idx| data[idx] += 1.0);
    out
}

/// Inverse of [`unfold`]: overlapping contributions are averaged; uncovered
/// pixels are zero.
pub fn fold(patches: &Tensor, grid: &GridMeta) -> Result<Tensor> {
    let summed = fold_sum(patches, grid)?;
    let count = coverage(grid);
    summed.zip_map(&count, |s, n| if n > 0.0 { s / n } else { 0.0 })
}

/// Adjoint of [`fold`] with respect to the patch matrix.
pub fn fold_backward(grad_out: &Tensor, grid: &GridMeta) -> Result<Tensor> {
    let count = coverage(grid);
    let scaled = grad_out.zip_map(&count, |g, n| if n > 0.0 { g / n } else { 0.0 })?;
    Ok(unfold(&scaled, grid.patch, grid.stride, grid.pad)?.0)
}

fn check_patches(patches: &Tensor, grid: &GridMeta) -> Result<()> {
    let (n, d) = patches.dims2()?;
    if n != grid.len() || d != grid.row_width() {
        return Err(dim_err!(
            "patch matrix {}x{} inconsistent with grid of {} patches of width {}",
            n,
            d,
            grid.len(),
            grid.row_width()
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Patch copy by explicit index arithmetic.
    fn naive_unfold(x: &Tensor, p: usize, s: usize, pad: usize) -> Tensor {
        let (c, h, w) = x.dims3().unwrap();
        let gh = (h + 2 * pad - p) / s + 1;
        let gw = (w + 2 * pad - p) / s + 1;
        let mut out = Tensor::zeros(&[gh * gw, c * p * p]);
        for gy in 0..gh {
            for gx in 0..gw {
                for ci in 0..c {
                    for ky in 0..p {
                        for kx in 0..p {
                            let y = (gy * s + ky) as isize - pad as isize;
                            let xx = (gx * s + kx) as isize - pad as isize;
                            let v = if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                x.get(&[ci, y as usize, xx as usize])
                            } else {
                                0.0
                            };
                            out.set(&[gy * gw + gx, ci * p * p + ky * p + kx], v);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_pixel_patches() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (u, g) = unfold(&x, 1, 1, 0).unwrap();
        assert_eq!(u.shape(), &[4, 1]);
        assert_eq!(u.data(), x.data());
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn partition_rows_cover_every_pixel_once() {
        let x = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
        let (u, _) = unfold(&x, 2, 2, 0).unwrap();
        assert_eq!(u.shape(), &[4, 4]);
        let mut vals = u.data().to_vec();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, x.data());
    }

    #[test]
    fn matches_index_arithmetic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..100 {
            let x = Tensor::rand_uniform(&[2, 5, 5], -1.0, 1.0, &mut rng);
            let (p, s, pad) = [(3, 1, 1), (2, 2, 0), (3, 2, 1), (1, 1, 0)][trial % 4];
            let (u, _) = unfold(&x, p, s, pad).unwrap();
            assert_eq!(u, naive_unfold(&x, p, s, pad));
        }
        let x = Tensor::rand_uniform(&[2, 5, 5], -1.0, 1.0, &mut rng);
        assert_eq!(unfold(&x, 3, 1, 1).unwrap().0.shape(), &[25, 18]);
    }

    #[test]
    fn fold_inverts_unfold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::rand_uniform(&[1, 4, 4], -1.0, 1.0, &mut rng);
        let (u, g) = unfold(&x, 2, 2, 0).unwrap();
        assert_eq!(fold(&u, &g).unwrap(), x);
        let (u, g) = unfold(&x, 3, 1, 1).unwrap();
        assert!(fold(&u, &g).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn overlapping_ones_average_to_ones() {
        let g = GridMeta::new(1, 3, 3, 2, 1, 0).unwrap();
        let img = fold(&Tensor::ones(&[g.len(), g.row_width()]), &g).unwrap();
        assert_eq!(img, Tensor::ones(&[1, 3, 3]));
    }

    #[test]
    fn bad_geometry_is_rejected() {
        assert!(unfold(&Tensor::zeros(&[1, 2, 2]), 3, 1, 0).is_err());
        let g = GridMeta::new(1, 4, 4, 2, 2, 0).unwrap();
        assert!(fold(&Tensor::zeros(&[3, 4]), &g).is_err());
    }

    #[test]
    fn fold_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = GridMeta::new(2, 5, 6, 3, 1, 1).unwrap();
        let p = Tensor::rand_uniform(&[g.len(), g.row_width()], -1.0, 1.0, &mut rng);
        let y = Tensor::rand_uniform(&[2, 5, 6], -1.0, 1.0, &mut rng);
        let lhs = fold(&p, &g).unwrap().mul(&y).unwrap().sum();
        let rhs = fold_backward(&y, &g).unwrap().mul(&p).unwrap().sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
