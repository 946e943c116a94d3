//! Dense layers with explicit backward passes.
//!
//! Forward functions are pure. Backward functions take the cached forward
//! inputs, accumulate parameter gradients into a [`GradStore`], and return the
//! gradient with respect to the layer input.

use super::{GradStore, NnError, ParamId, ParamSet, ParamView, SeededRng, Tensor};

/// Row gather from a `vocab × dim` table.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(ps: &mut ParamSet, name: &str, vocab: usize, dim: usize, rng: &mut SeededRng) -> Self {
        Embedding {
            table: ps.xavier(name, vocab, dim, rng),
            vocab,
            dim,
        }
    }

    pub fn forward(&self, p: ParamView<'_>, ids: &[usize]) -> Result<Tensor, NnError> {
        let table = p.get(self.table);
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            if id >= self.vocab {
                return Err(NnError::IndexOutOfRange {
                    index: id,
                    len: self.vocab,
                });
            }
            out.extend_from_slice(table.row(id));
        }
        Ok(Tensor::matrix(ids.len(), self.dim, out))
    }

    /// Scatters `d_out` rows back into the table gradient, summing repeats.
    pub fn backward(&self, g: &mut GradStore, ids: &[usize], d_out: &Tensor) {
        let grad = g.get_mut(self.table);
        for (i, &id) in ids.iter().enumerate() {
            for (a, b) in grad.row_mut(id).iter_mut().zip(d_out.row(i)) {
                *a += b;
            }
        }
    }
}

/// `y = x·W + b` with `W: in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = ps.xavier(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = bias.then(|| ps.zeros(format!("{name}.bias"), &[1, out_dim]));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, p: ParamView<'_>, x: &Tensor) -> Result<Tensor, NnError> {
        let mut y = x.matmul(p.get(self.weight))?;
        if let Some(b) = self.bias {
            let b = p.get(b).data();
            for i in 0..y.rows() {
                for (v, bb) in y.row_mut(i).iter_mut().zip(b) {
                    *v += bb;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(
        &self,
        p: ParamView<'_>,
        g: &mut GradStore,
        x: &Tensor,
        dy: &Tensor,
    ) -> Result<Tensor, NnError> {
        g.accumulate(self.weight, &x.t_matmul(dy)?)?;
        if let Some(b) = self.bias {
            let grad = g.get_mut(b);
            for i in 0..dy.rows() {
                for (a, d) in grad.data_mut().iter_mut().zip(dy.row(i)) {
                    *a += d;
                }
            }
        }
        dy.matmul_t(p.get(self.weight))
    }
}

/// Per-row layer normalization with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: ps.filled(format!("{name}.gain"), &[1, dim], 1.0),
            shift: ps.zeros(format!("{name}.shift"), &[1, dim]),
            dim,
        }
    }

    pub fn forward(&self, p: ParamView<'_>, x: &Tensor) -> Result<(Tensor, LayerNormCache), NnError> {
        if x.cols() != self.dim {
            return Err(NnError::ShapeMismatch(format!(
                "layer norm over {} columns, input has {}",
                self.dim,
                x.cols()
            )));
        }
        let (gain, shift) = (p.get(self.gain).data(), p.get(self.shift).data());
        let d = self.dim as f64;
        let mut normalized = x.clone();
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for (j, (n, o)) in normalized
                .row_mut(i)
                .iter_mut()
                .zip(out.row_mut(i).iter_mut())
                .enumerate()
            {
                *n = (row[j] - mean) * inv;
                *o = *n * gain[j] + shift[j];
            }
        }
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward(
        &self,
        p: ParamView<'_>,
        g: &mut GradStore,
        cache: &LayerNormCache,
        dy: &Tensor,
    ) -> Result<Tensor, NnError> {
        let gain = p.get(self.gain).data();
        let d = self.dim as f64;
        let mut d_gain = vec![0.0; self.dim];
        let mut d_shift = vec![0.0; self.dim];
        let mut dx = Tensor::zeros(dy.shape());
        for i in 0..dy.rows() {
            let (dyr, xhat) = (dy.row(i), cache.normalized.row(i));
            let dxhat: Vec<f64> = dyr.iter().zip(gain).map(|(a, b)| a * b).collect();
            let mean_dxhat = dxhat.iter().sum::<f64>() / d;
            let mean_dxhat_xhat = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d;
            for j in 0..self.dim {
                d_gain[j] += dyr[j] * xhat[j];
                d_shift[j] += dyr[j];
            }
            for (j, v) in dx.row_mut(i).iter_mut().enumerate() {
                *v = cache.inv_std[i] * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
            }
        }
        g.accumulate(self.gain, &Tensor::matrix(1, self.dim, d_gain))?;
        g.accumulate(self.shift, &Tensor::matrix(1, self.dim, d_shift))?;
        Ok(dx)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu_forward(x: &Tensor) -> Tensor {
    x.map(|v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        let t = (GELU_C * (v + 0.044715 * v * v * v)).tanh();
        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
        *d *= 0.5 * (1.0 + t) + 0.5 * v * dt;
    }
    dx
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Backward through tanh given its output `y`.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &t) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= 1.0 - t * t;
    }
    dx
}

/// Logistic function, computed without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    x.map(sigmoid)
}

/// Backward through the sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= s * (1.0 - s);
    }
    dx
}

/// Mean over rows: `n × d → 1 × d`.
pub fn mean_pool_forward(x: &Tensor) -> Result<Tensor, NnError> {
    let n = x.rows();
    if n == 0 {
        return Err(NnError::ShapeMismatch("mean pool over zero rows".into()));
    }
    let mut out = vec![0.0; x.cols()];
    for i in 0..n {
        for (o, v) in out.iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    Ok(Tensor::matrix(1, x.cols(), out))
}

pub fn mean_pool_backward(rows: usize, dy: &Tensor) -> Tensor {
    let scale = 1.0 / rows as f64;
    let row: Vec<f64> = dy.data().iter().map(|v| v * scale).collect();
    let mut data = Vec::with_capacity(rows * row.len());
    for _ in 0..rows {
        data.extend_from_slice(&row);
    }
    Tensor::matrix(rows, row.len(), data)
}

/// Fixed sinusoidal position table, `n × dim`.
pub fn sinusoidal_positions(n: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; n * dim];
    for pos in 0..n {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(n, dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::gradcheck::check_function;

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(40.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-40.0).abs() < 1e-15);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) <= 1.0);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-9);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn embedding_gather_and_scatter() {
        let mut ps = ParamSet::new();
        ps.add("emb", Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let emb = Embedding {
            table: ps.find("emb").unwrap(),
            vocab: 3,
            dim: 3,
        };
        let out = emb.forward(ps.view(), &[0]).unwrap();
        assert_eq!(out.data(), &[1., 0., 0.]);
        assert!(matches!(
            emb.forward(ps.view(), &[3]),
            Err(NnError::IndexOutOfRange { index: 3, len: 3 })
        ));
        let d = Tensor::matrix(2, 3, vec![1., 2., 3., 10., 20., 30.]);
        emb.backward(ps.grads_mut(), &[1, 1], &d);
        assert_eq!(ps.grad(emb.table).row(1), &[11., 22., 33.]);
    }

    #[test]
    fn elementwise_gradients_match_differences() {
        let x = Tensor::matrix(2, 3, vec![-2.0, -0.3, 0.0, 0.4, 1.5, 3.0]);
        let err = check_function(&x, |t| gelu_forward(t), |t, dy| gelu_backward(t, dy));
        assert!(err < 1e-6, "gelu {err}");
        let err = check_function(&x, sigmoid_forward, |t, dy| sigmoid_backward(&sigmoid_forward(t), dy));
        assert!(err < 1e-6, "sigmoid {err}");
        let err = check_function(&x, tanh_forward, |t, dy| tanh_backward(&tanh_forward(t), dy));
        assert!(err < 1e-6, "tanh {err}");
        let err = check_function(
            &x,
            |t| mean_pool_forward(t).unwrap(),
            |t, dy| mean_pool_backward(t.rows(), dy),
        );
        assert!(err < 1e-6, "mean pool {err}");
    }

    #[test]
    fn positions_are_bounded() {
        let p = sinusoidal_positions(5, 4);
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!(p.data().iter().all(|v| v.abs() <= 1.0));
    }
}
