use crate::error::{contract_err, dim_err, Result};
use crate::numerics::{self as nx, GridMeta, ResizeMode, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Detach,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Var },
    SoftmaxRows(Var),
    Unfold { x: Var, grid: GridMeta },
    Fold { x: Var, grid: GridMeta },
    Resize { x: Var, mode: ResizeMode },
    AvgPool { x: Var, k: usize },
    Filter2d { x: Var, kernel: Tensor },
    FftRe(Var),
    FftIm(Var),
    Concat(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    MulChannelMap { x: Var, map: Var },
    Reshape(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    /// Whether any trainable leaf is reachable through this node.
    tracked: bool,
    stop_gradient: bool,
}

/// Append-only tape of tensor operations. Nodes only reference earlier
/// nodes, so the insertion order is a topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of its shape when no gradient reached it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { op, value, tracked, stop_gradient: false });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, tracked: true, stop_gradient: false });
        Var(self.nodes.len() - 1)
    }

    /// Stop-gradient leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Constant, value, tracked: false, stop_gradient: true });
        Var(self.nodes.len() - 1)
    }

    /// Same value as `x`, but no gradient flows through it.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.nodes.push(Node { op: Op::Detach, value, tracked: false, stop_gradient: true });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_stop_gradient(&self, v: Var) -> bool {
        self.nodes[v.0].stop_gradient
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v, &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), v, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(Op::AddScalar(a), v, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).relu();
        self.push(Op::Relu(a), v, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), v, &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(Op::Mean(a), v, &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let v = nx::conv2d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        Ok(self.push(Op::Conv2d { x, w, b, stride, pad }, v, &[x, w, b]))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let v = nx::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Linear { x, w, b }, v, &[x, w, b]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = nx::softmax_rows(self.value(x))?;
        Ok(self.push(Op::SoftmaxRows(x), v, &[x]))
    }

    pub fn unfold(&mut self, x: Var, patch: usize, stride: usize, pad: usize) -> Result<(Var, GridMeta)> {
        let (v, grid) = nx::unfold(self.value(x), patch, stride, pad)?;
        Ok((self.push(Op::Unfold { x, grid }, v, &[x]), grid))
    }

    pub fn fold(&mut self, x: Var, grid: GridMeta) -> Result<Var> {
        let v = nx::fold(self.value(x), &grid)?;
        Ok(self.push(Op::Fold { x, grid }, v, &[x]))
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize, mode: ResizeMode) -> Result<Var> {
        let v = nx::resize(self.value(x), h, w, mode)?;
        Ok(self.push(Op::Resize { x, mode }, v, &[x]))
    }

    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let v = nx::avg_pool(self.value(x), k)?;
        Ok(self.push(Op::AvgPool { x, k }, v, &[x]))
    }

    /// Valid correlation of every channel with a fixed kernel.
    pub fn filter2d(&mut self, x: Var, kernel: &Tensor) -> Result<Var> {
        let v = nx::filter2d_valid(self.value(x), kernel)?;
        Ok(self.push(Op::Filter2d { x, kernel: kernel.clone() }, v, &[x]))
    }

    /// Real part of the unnormalized 2-D DFT.
    pub fn fft_re(&mut self, x: Var) -> Result<Var> {
        let v = nx::fft2(self.value(x))?.real;
        Ok(self.push(Op::FftRe(x), v, &[x]))
    }

    /// Imaginary part of the unnormalized 2-D DFT.
    pub fn fft_im(&mut self, x: Var) -> Result<Var> {
        let v = nx::fft2(self.value(x))?.imag;
        Ok(self.push(Op::FftIm(x), v, &[x]))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_channels(&tensors)?;
        Ok(self.push(Op::Concat(parts.to_vec()), v, parts))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).slice_channels(start, len)?;
        Ok(self.push(Op::SliceChannels { x, start }, v, &[x]))
    }

    /// Row gather: output row `i` is `x[idx[i]]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = gather_rows(self.value(x), idx)?;
        Ok(self.push(Op::GatherRows { x, idx: idx.to_vec() }, v, &[x]))
    }

    /// `x[C,H,W]` scaled per pixel by the single-channel `map[1,H,W]`.
    pub fn mul_channel_map(&mut self, x: Var, map: Var) -> Result<Var> {
        let v = mul_channel_map(self.value(x), self.value(map))?;
        Ok(self.push(Op::MulChannelMap { x, map }, v, &[x, map]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(x), v, &[x]))
    }

    /// Reverse-mode sweep from a scalar `loss`. Fan-out contributions are summed;
    /// stop-gradient nodes receive nothing.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(contract_err!("backward needs a scalar loss, got shape {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || node.stop_gradient {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, contribution) in self.local_grads(&node.op, &node.value, &g)? {
                let target = &self.nodes[input.0];
                if !target.tracked || target.stop_gradient {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn local_grads(&self, op: &Op, out: &Tensor, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        Ok(match op {
            Op::Leaf | Op::Constant | Op::Detach => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Mul(a, b) => vec![(*a, g.mul(val(*b))?), (*b, g.mul(val(*a))?)],
            Op::Div(a, b) => {
                let da = g.zip_map(val(*b), |g, y| g / y)?;
                let db = g.zip_map(out, |g, q| -g * q)?.zip_map(val(*b), |t, y| t / y)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(a, s) => vec![(*a, g.scale(*s))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Relu(a) => vec![(*a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })?)],
            Op::Abs(a) => vec![(*a, g.zip_map(val(*a), |g, x| g * sign(x))?)],
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                vec![(*a, g.zip_map(val(*a), |g, x| if x > lo && x < hi { g } else { 0.0 })?)]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.data()[0]))],
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                vec![(*a, Tensor::full(val(*a).shape(), g.data()[0] / n))]
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (dx, dw, db) = nx::conv2d_backward(val(*x), val(*w), g, *stride, *pad)?;
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = nx::linear_backward(val(*x), val(*w), g)?;
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::SoftmaxRows(x) => vec![(*x, nx::softmax_rows_backward(out, g)?)],
            Op::Unfold { x, grid } => vec![(*x, nx::fold_sum(g, grid)?)],
            Op::Fold { x, grid } => vec![(*x, nx::fold_backward(g, grid)?)],
            Op::Resize { x, mode } => {
                let (_, h, w) = val(*x).dims3()?;
                vec![(*x, nx::resize_backward(g, h, w, *mode)?)]
            }
            Op::AvgPool { x, k } => vec![(*x, nx::avg_pool_backward(g, *k)?)],
            Op::Filter2d { x, kernel } => {
                let (_, h, w) = val(*x).dims3()?;
                vec![(*x, nx::filter2d_valid_backward(g, kernel, h, w)?)]
            }
            Op::FftRe(x) => vec![(*x, nx::fft2_backward(g, &Tensor::zeros(g.shape()))?)],
            Op::FftIm(x) => vec![(*x, nx::fft2_backward(&Tensor::zeros(g.shape()), g)?)],
            Op::Concat(parts) => {
                let mut start = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let (c, _, _) = val(p).dims3()?;
                    out.push((p, g.slice_channels(start, c)?));
                    start += c;
                }
                out
            }
            Op::SliceChannels { x, start } => {
                let (c, h, w) = val(*x).dims3()?;
                let (len, _, _) = g.dims3()?;
                let mut dx = Tensor::zeros(&[c, h, w]);
                let plane = h * w;
                dx.data_mut()[start * plane..(start + len) * plane].copy_from_slice(g.data());
                vec![(*x, dx)]
            }
            Op::GatherRows { x, idx } => {
                let (n, d) = val(*x).dims2()?;
                let mut dx = Tensor::zeros(&[n, d]);
                let buf = dx.data_mut();
                for (i, &j) in idx.iter().enumerate() {
                    buf[j * d..(j + 1) * d].iter_mut().zip(g.row(i)).for_each(|(a, b)| *a += b);
                }
                vec![(*x, dx)]
            }
            Op::MulChannelMap { x, map } => {
                let dx = mul_channel_map(g, val(*map))?;
                let (c, h, w) = val(*x).dims3()?;
                let plane = h * w;
                let mut dm = Tensor::zeros(&[1, h, w]);
                for ci in 0..c {
                    let gs = &g.data()[ci * plane..(ci + 1) * plane];
                    let xs = &val(*x).data()[ci * plane..(ci + 1) * plane];
                    dm.data_mut().iter_mut().zip(gs.iter().zip(xs)).for_each(|(d, (g, x))| *d += g * x);
                }
                vec![(*x, dx), (*map, dm)]
            }
            Op::Reshape(x) => vec![(*x, g.clone().reshape(val(*x).shape())?)],
        })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Row gather on a `[N,D]` matrix.
pub fn gather_rows(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (n, d) = x.dims2()?;
    let mut out = Vec::with_capacity(idx.len() * d);
    for &j in idx {
        if j >= n {
            return Err(contract_err!("gather index {} out of range for {} rows", j, n));
        }
        out.extend_from_slice(x.row(j));
    }
    Tensor::new(&[idx.len(), d], out)
}

/// Broadcast multiply of `x[C,H,W]` by `map[1,H,W]`.
pub fn mul_channel_map(x: &Tensor, map: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if map.shape() != [1, h, w] {
        return Err(dim_err!("weight map {:?} does not broadcast over [{}, {}, {}]", map.shape(), c, h, w));
    }
    let mut out = x.clone();
    for plane in out.data_mut().chunks_mut(h * w) {
        plane.iter_mut().zip(map.data()).for_each(|(v, s)| *v *= s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[3], vec![1.0, -2.0, 5.0]).unwrap());
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x), Tensor::ones(&[3]));
    }

    #[test]
    fn square_sum_gives_two_x() {
        let mut g = Graph::new();
        let xv = Tensor::new(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let x = g.leaf(xv.clone());
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq);
        assert_eq!(g.backward(l).unwrap().wrt(x), xv.scale(2.0));
    }

    #[test]
    fn fan_out_sums_branches() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[2], vec![0.3, 0.7]).unwrap());
        let y = g.add(x, x).unwrap();
        let l = g.sum(y);
        assert_eq!(g.backward(l).unwrap().wrt(x), Tensor::full(&[2], 2.0));
    }

    #[test]
    fn stop_gradient_reports_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let c = g.constant(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
        let d = g.detach(x);
        let xc = g.mul(x, c).unwrap();
        let dd = g.mul(d, d).unwrap();
        let s = g.add(xc, dd).unwrap();
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(c), Tensor::zeros(&[2]));
        assert_eq!(grads.wrt(d), Tensor::zeros(&[2]));
        // only the x*c branch reaches x
        assert_eq!(grads.wrt(x), Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::ones(&[2]));
        assert!(matches!(g.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = g.relu(x);
        let l = g.sum(r);
        assert_eq!(g.backward(l).unwrap().wrt(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn gather_out_of_range_is_contract_error() {
        let x = Tensor::zeros(&[3, 2]);
        assert!(matches!(gather_rows(&x, &[0, 3]), Err(crate::Error::Contract(_))));
    }
}
