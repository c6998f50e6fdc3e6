use serde::{Deserialize, Serialize};

use super::{AutodiffError, Result};

/// Dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(AutodiffError::InvalidTensor { shape, len: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        assert!(shape.iter().all(|&d| d > 0), "zero dimension");
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], data: vec![x] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a 2-D matrix (rank-1 tensors are a
    /// single row).
    pub fn rows(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    /// Length of the trailing axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `C = op_a(A) * op_b(B)` for 2-D matrices, with optional transposes.
///
/// Loop orders are chosen per case so the inner loop streams rows of the
/// row-major operands; row computations are independent, so the parallel
/// build splits over rows of `C` and stays bit-identical to sequential.
pub(crate) fn matmul_into(
    c: &mut [f64],
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    match (trans_a, trans_b) {
        (false, false) => crate::par::for_each_row(c, n, |i, row| {
            row.fill(0.0);
            let a_row = &a[i * k..(i + 1) * k];
            for (kk, &aik) in a_row.iter().enumerate() {
                let b_row = &b[kk * n..(kk + 1) * n];
                for (cj, &bj) in row.iter_mut().zip(b_row) {
                    *cj += aik * bj;
                }
            }
        }),
        (false, true) => crate::par::for_each_row(c, n, |i, row| {
            // B is stored [n, k]; each output element is a dot product.
            let a_row = &a[i * k..(i + 1) * k];
            for (j, cj) in row.iter_mut().enumerate() {
                let b_row = &b[j * k..(j + 1) * k];
                *cj = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            }
        }),
        (true, false) => crate::par::for_each_row(c, n, |i, row| {
            // A is stored [k, m]; column i of A scales the rows of B.
            row.fill(0.0);
            for kk in 0..k {
                let aki = a[kk * m + i];
                let b_row = &b[kk * n..(kk + 1) * n];
                for (cj, &bj) in row.iter_mut().zip(b_row) {
                    *cj += aki * bj;
                }
            }
        }),
        (true, true) => crate::par::for_each_row(c, n, |i, row| {
            for (j, cj) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a[kk * m + i] * b[j * k + kk];
                }
                *cj = acc;
            }
        }),
    }
}

/// Sequential matmul used by the benchmark suite to compare against the
/// rayon path. Identical arithmetic, identical output bits.
#[doc(hidden)]
pub fn matmul_into_seq(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    crate::par::for_each_row_seq(c, n, |i, row| {
        row.fill(0.0);
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cj, &bj) in row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    });
}

/// Parallel-dispatch matmul, exported for the benchmark suite.
#[doc(hidden)]
pub fn matmul_into_dispatch(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    matmul_into(c, a, b, m, k, n, false, false);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_shape() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        // A [2,3], B [3,2]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0; 4];
        matmul_into(&mut c, &a, &b, 2, 3, 2, false, false);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // A^T path: store A transposed [3,2] and ask for trans_a.
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c2 = [0.0; 4];
        matmul_into(&mut c2, &at, &b, 2, 3, 2, true, false);
        assert_eq!(c, c2);

        // B^T path.
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c3 = [0.0; 4];
        matmul_into(&mut c3, &a, &bt, 2, 3, 2, false, true);
        assert_eq!(c, c3);

        let mut c4 = [0.0; 4];
        matmul_into(&mut c4, &at, &bt, 2, 3, 2, true, true);
        assert_eq!(c, c4);
    }

    #[test]
    fn seq_and_dispatch_match_bitwise() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..20).map(|i| (i as f64).cos()).collect();
        let mut c1 = vec![0.0; 15];
        let mut c2 = vec![0.0; 15];
        matmul_into_seq(&mut c1, &a, &b, 3, 4, 5);
        matmul_into_dispatch(&mut c2, &a, &b, 3, 4, 5);
        assert_eq!(c1, c2);
    }
}
