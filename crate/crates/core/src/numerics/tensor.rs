use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Dense row-major 2-D array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::DataLength {
                shape: (rows, cols),
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::full(1, 1, v)
    }

    /// Single row.
    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NumericsError::DataLength {
                    shape: (rows.len(), cols),
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a 1×1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += other * alpha`; shapes must agree.
    pub fn add_scaled(&mut self, other: &Tensor, alpha: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale_in_place(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op` optionally transposes.
pub(crate) fn gemm(alpha: f64, a: &Tensor, ta: bool, b: &Tensor, tb: bool, beta: f64, c: &mut Tensor) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "inner dimensions");
    assert_eq!(c.shape(), (m, n), "output shape");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: the strides above describe exactly the row-major buffers of
    // `a`, `b` and `c`, whose dimensions were checked against m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
        let at = |i: usize, j: usize| if ta { a.get(j, i) } else { a.get(i, j) };
        let bt = |i: usize, j: usize| if tb { b.get(j, i) } else { b.get(i, j) };
        let (m, k) = if ta { (a.cols(), a.rows()) } else { a.shape() };
        let n = if tb { b.rows() } else { b.cols() };
        let mut c = Tensor::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                c.set(i, j, (0..k).map(|p| at(i, p) * bt(p, j)).sum());
            }
        }
        c
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(Tensor::new(2, 3, vec![0.0; 5]).is_err());
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    proptest! {
        #[test]
        fn gemm_matches_naive(m in 1usize..5, k in 1usize..5, n in 1usize..5, ta: bool, tb: bool, seed in proptest::collection::vec(-3.0f64..3.0, 50)) {
            let a_shape = if ta { (k, m) } else { (m, k) };
            let b_shape = if tb { (n, k) } else { (k, n) };
            let a = Tensor::new(a_shape.0, a_shape.1, seed[..m * k].to_vec()).unwrap();
            let b = Tensor::new(b_shape.0, b_shape.1, seed[25..25 + k * n].to_vec()).unwrap();
            let mut c = Tensor::zeros(m, n);
            gemm(1.0, &a, ta, &b, tb, 0.0, &mut c);
            let expect = naive(&a, ta, &b, tb);
            for (x, y) in c.data().iter().zip(expect.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
