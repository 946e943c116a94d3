use super::{ParamSet, Tensor};

/// Adam with global-norm gradient clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros = |ps: &ParamSet| ps.iter().map(|(_, v, _)| Tensor::zeros(v.shape())).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Clips, applies one bias-corrected update, and zeroes the gradients.
    pub fn step(&mut self, params: &mut ParamSet) {
        let norm = params.grads().global_norm();
        let clip = if norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (values, grads) = params.values_and_grads_mut();
        for (idx, (value, grad)) in values.iter_mut().zip(grads.iter_mut()).enumerate() {
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            for (k, (w, g)) in value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                let g = g * clip;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            grad.fill(0.0);
        }
    }
}
