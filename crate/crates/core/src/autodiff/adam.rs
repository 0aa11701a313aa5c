use crate::error::{dim_err, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }
}

/// One bias-corrected Adam update, in place. Moments are created on the
/// first call and shapes are checked on every call.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(dim_err!("{} parameters but {} gradients", params.len(), grads.len()));
    }
    for (p, g) in params.iter().zip(grads) {
        if !p.same_shape(g) {
            return Err(dim_err!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()));
        }
    }
    if state.first.is_empty() {
        state.first = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        state.second = state.first.clone();
    } else if state.first.len() != params.len()
        || state.first.iter().zip(grads).any(|(m, g)| !m.same_shape(g))
    {
        return Err(dim_err!("optimizer state does not match parameter shapes"));
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
        let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((p, &g), (m, v)) in iter {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut x = Tensor::new(&[2], vec![1.0, -1.0]).unwrap();
        let mut st = AdamState::new(AdamConfig::default());
        adam_step(&mut [&mut x], &[Tensor::zeros(&[2])], &mut st).unwrap();
        assert_eq!(x.data(), &[1.0, -1.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut x = Tensor::scalar(0.0);
        let mut st = AdamState::new(AdamConfig::default());
        let mut prev = 0.0;
        for _ in 0..200 {
            adam_step(&mut [&mut x], &[Tensor::scalar(0.3)], &mut st).unwrap();
            let now = x.data()[0];
            assert!(now < prev);
            let step = prev - now;
            assert!((step - 1e-3).abs() < 1e-6);
            prev = now;
        }
    }

    #[test]
    fn quadratic_converges() {
        // f(x) = (x - 2)^2, gradient 2(x - 2)
        let mut x = Tensor::scalar(0.0);
        let mut st = AdamState::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        for _ in 0..500 {
            let g = Tensor::scalar(2.0 * (x.data()[0] - 2.0));
            adam_step(&mut [&mut x], &[g], &mut st).unwrap();
        }
        assert!((x.data()[0] - 2.0).abs() < 0.01, "{}", x.data()[0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut x = Tensor::zeros(&[2]);
        let mut st = AdamState::new(AdamConfig::default());
        assert!(adam_step(&mut [&mut x], &[Tensor::zeros(&[3])], &mut st).is_err());
    }
}
