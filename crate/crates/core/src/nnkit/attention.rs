//! Scaled dot-product self-attention with an optional sparse pattern.

use std::collections::BTreeSet;

use super::{GradStore, NnError, ParamId, ParamSet, ParamView, SeededRng, Tensor};

/// Which keys each query may see.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum AttentionMask {
    #[default]
    Full,
    /// Banded window of `radius` on each side, plus positions in `global`
    /// that see and are seen by every position.
    Local {
        radius: usize,
        global: BTreeSet<usize>,
    },
}

impl AttentionMask {
    pub fn allows(&self, query: usize, key: usize) -> bool {
        match self {
            AttentionMask::Full => true,
            AttentionMask::Local { radius, global } => {
                query.abs_diff(key) <= *radius || global.contains(&query) || global.contains(&key)
            }
        }
    }

    /// Allowed keys per query, ascending.
    pub fn allowed(&self, n: usize) -> Vec<Vec<usize>> {
        match self {
            AttentionMask::Full => (0..n).map(|_| (0..n).collect()).collect(),
            AttentionMask::Local { radius, global } => (0..n)
                .map(|i| {
                    if global.contains(&i) {
                        return (0..n).collect();
                    }
                    let lo = i.saturating_sub(*radius);
                    let hi = (i + radius).min(n.saturating_sub(1));
                    let mut keys: Vec<usize> = global.iter().copied().filter(|&g| g < n).collect();
                    keys.extend(lo..=hi);
                    keys.sort_unstable();
                    keys.dedup();
                    keys
                })
                .collect(),
        }
    }
}

/// `softmax(QKᵀ/√d_head)V` per head, heads concatenated, then `·Wo`.
/// Projections carry no bias.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub dim: usize,
    pub heads: usize,
}

/// Forward intermediates. `weights[h][i]` pairs with `keys[i]`.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mixed: Tensor,
    keys: Vec<Vec<usize>>,
    weights: Vec<Vec<Vec<f64>>>,
}

impl AttentionCache {
    /// Dense `n × n` attention matrix of one head; masked entries are zero.
    pub fn weights(&self, head: usize) -> Tensor {
        let n = self.keys.len();
        let mut out = Tensor::zeros(&[n, n]);
        for (i, keys) in self.keys.iter().enumerate() {
            for (&j, &w) in keys.iter().zip(&self.weights[head][i]) {
                out.row_mut(i)[j] = w;
            }
        }
        out
    }
}

impl SelfAttention {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut SeededRng,
    ) -> Result<Self, NnError> {
        if heads == 0 || dim % heads != 0 {
            return Err(NnError::ShapeMismatch(format!(
                "width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(SelfAttention {
            wq: ps.xavier(format!("{name}.wq"), dim, dim, rng),
            wk: ps.xavier(format!("{name}.wk"), dim, dim, rng),
            wv: ps.xavier(format!("{name}.wv"), dim, dim, rng),
            wo: ps.xavier(format!("{name}.wo"), dim, dim, rng),
            dim,
            heads,
        })
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward(
        &self,
        p: ParamView<'_>,
        x: &Tensor,
        mask: &AttentionMask,
    ) -> Result<(Tensor, AttentionCache), NnError> {
        if x.cols() != self.dim {
            return Err(NnError::ShapeMismatch(format!(
                "attention width {}, input has {} columns",
                self.dim,
                x.cols()
            )));
        }
        let n = x.rows();
        let q = x.matmul(p.get(self.wq))?;
        let k = x.matmul(p.get(self.wk))?;
        let v = x.matmul(p.get(self.wv))?;
        let keys = mask.allowed(n);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut mixed = Tensor::zeros(&[n, self.dim]);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let mut head_w = Vec::with_capacity(n);
            for i in 0..n {
                let qi = &q.row(i)[cols.clone()];
                let scores: Vec<f64> = keys[i]
                    .iter()
                    .map(|&j| dot(qi, &k.row(j)[cols.clone()]) * scale)
                    .collect();
                let w = softmax(&scores);
                let out = &mut mixed.row_mut(i)[cols.clone()];
                for (&j, &wj) in keys[i].iter().zip(&w) {
                    for (o, vv) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *o += wj * vv;
                    }
                }
                head_w.push(w);
            }
            weights.push(head_w);
        }
        let y = mixed.matmul(p.get(self.wo))?;
        Ok((
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                mixed,
                keys,
                weights,
            },
        ))
    }

    pub fn backward(
        &self,
        p: ParamView<'_>,
        g: &mut GradStore,
        cache: &AttentionCache,
        dy: &Tensor,
    ) -> Result<Tensor, NnError> {
        let n = cache.x.rows();
        g.accumulate(self.wo, &cache.mixed.t_matmul(dy)?)?;
        let d_mixed = dy.matmul_t(p.get(self.wo))?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(&[n, self.dim]);
        let mut dk = Tensor::zeros(&[n, self.dim]);
        let mut dv = Tensor::zeros(&[n, self.dim]);
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let d_out = &d_mixed.row(i)[cols.clone()];
                let w = &cache.weights[h][i];
                let keys = &cache.keys[i];
                let dw: Vec<f64> = keys
                    .iter()
                    .map(|&j| dot(d_out, &cache.v.row(j)[cols.clone()]))
                    .collect();
                let weighted: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
                for (idx, &j) in keys.iter().enumerate() {
                    for (t, d) in dv.row_mut(j)[cols.clone()].iter_mut().zip(d_out) {
                        *t += w[idx] * d;
                    }
                    let ds = w[idx] * (dw[idx] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.k.row(j)[cols.clone()];
                    for (t, kk) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                        *t += ds * kk;
                    }
                    let qi = &cache.q.row(i)[cols.clone()];
                    for (t, qq) in dk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                        *t += ds * qq;
                    }
                }
            }
        }
        g.accumulate(self.wq, &cache.x.t_matmul(&dq)?)?;
        g.accumulate(self.wk, &cache.x.t_matmul(&dk)?)?;
        g.accumulate(self.wv, &cache.x.t_matmul(&dv)?)?;
        let mut dx = dq.matmul_t(p.get(self.wq))?;
        dx.add_assign(&dk.matmul_t(p.get(self.wk))?)?;
        dx.add_assign(&dv.matmul_t(p.get(self.wv))?)?;
        Ok(dx)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-shifted softmax.
pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(dim: usize, heads: usize, seed: u64) -> (ParamSet, SelfAttention) {
        let mut rng = SeededRng::new(seed);
        let mut ps = ParamSet::new();
        let att = SelfAttention::new(&mut ps, "att", dim, heads, &mut rng).unwrap();
        (ps, att)
    }

    #[test]
    fn single_token_is_value_then_output_projection() {
        let (ps, att) = layer(4, 1, 3);
        let x = Tensor::matrix(1, 4, vec![0.3, -1.0, 2.0, 0.5]);
        let (y, cache) = att.forward(ps.view(), &x, &AttentionMask::Full).unwrap();
        let expect = x
            .matmul(ps.value(att.wv))
            .unwrap()
            .matmul(ps.value(att.wo))
            .unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(cache.weights(0).data(), &[1.0]);
    }

    #[test]
    fn identical_rows_attend_uniformly() {
        let (ps, att) = layer(4, 2, 5);
        let row: &[f64] = &[1.0, 2.0, 3.0, 4.0];
        let x = Tensor::from_rows(&[row; 5]);
        let (_, cache) = att.forward(ps.view(), &x, &AttentionMask::Full).unwrap();
        for h in 0..2 {
            assert!(cache.weights(h).data().iter().all(|w| (w - 0.2).abs() < 1e-12));
        }
    }

    #[test]
    fn local_mask_with_global_tokens() {
        let mask = AttentionMask::Local {
            radius: 1,
            global: BTreeSet::from([0]),
        };
        let allowed = mask.allowed(6);
        assert_eq!(allowed[0], vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(allowed[3], vec![0, 2, 3, 4]);
        assert_eq!(allowed[5], vec![0, 4, 5]);
        assert!(mask.allows(5, 0) && mask.allows(0, 5) && !mask.allows(5, 2));
    }

    #[test]
    fn rejects_bad_widths() {
        let mut ps = ParamSet::new();
        let mut rng = SeededRng::new(0);
        assert!(SelfAttention::new(&mut ps, "a", 6, 4, &mut rng).is_err());
        let (ps, att) = layer(4, 1, 1);
        let x = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            att.forward(ps.view(), &x, &AttentionMask::Full),
            Err(NnError::ShapeMismatch(_))
        ));
    }
}
