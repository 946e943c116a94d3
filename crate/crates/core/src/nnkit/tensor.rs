use serde::{Deserialize, Serialize};

use super::NnError;

/// Dense row-major `f64` tensor. Layers treat it as a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix {rows}x{cols}");
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.data.len() / self.shape[0].max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    fn check_same(&self, other: &Tensor, op: &str) -> Result<(), NnError> {
        if self.shape != other.shape {
            return Err(NnError::ShapeMismatch(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NnError> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), NnError> {
        self.check_same(other, "add")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NnError> {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        if k != k2 {
            return Err(NnError::ShapeMismatch(format!(
                "matmul: {n}x{k} · {k2}x{m}"
            )));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::matrix(n, m, out))
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor, NnError> {
        let (k, n) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        if k != k2 {
            return Err(NnError::ShapeMismatch(format!(
                "t_matmul: ({k}x{n})ᵀ · {k2}x{m}"
            )));
        }
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let a_row = &self.data[p * n..(p + 1) * n];
            let b_row = &other.data[p * m..(p + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out[i * m..(i + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::matrix(n, m, out))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor, NnError> {
        let (n, k) = (self.rows(), self.cols());
        let (m, k2) = (other.rows(), other.cols());
        if k != k2 {
            return Err(NnError::ShapeMismatch(format!(
                "matmul_t: {n}x{k} · ({m}x{k2})ᵀ"
            )));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b_row = &other.data[j * k..(j + 1) * k];
                out[i * m + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Ok(Tensor::matrix(n, m, out))
    }

    /// Column slice `[from, to)` of a matrix.
    pub fn cols_slice(&self, from: usize, to: usize) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let w = to - from;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&self.data[i * c + from..i * c + to]);
        }
        Tensor::matrix(r, w, out)
    }

    /// Writes `block` into columns starting at `from`.
    pub fn set_cols(&mut self, from: usize, block: &Tensor) {
        let c = self.cols();
        let w = block.cols();
        for i in 0..self.rows() {
            self.data[i * c + from..i * c + from + w].copy_from_slice(block.row(i));
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]);
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.data(), &[58., 64., 139., 154.]);
        assert_eq!(a.transpose().t_matmul(&b).unwrap(), ab);
        assert_eq!(a.matmul_t(&b.transpose()).unwrap(), ab);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn column_blocks() {
        let mut a = Tensor::matrix(2, 4, (0..8).map(f64::from).collect());
        let blk = a.cols_slice(1, 3);
        assert_eq!(blk.data(), &[1., 2., 5., 6.]);
        a.set_cols(2, &blk);
        assert_eq!(a.data(), &[0., 1., 1., 2., 4., 5., 5., 6.]);
    }

    #[test]
    fn from_vec_checks_count() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }
}
