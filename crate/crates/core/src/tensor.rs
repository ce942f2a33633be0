//! Dense row-major f64 matrices. All model math runs on two-axis tensors;
//! token sequences are packed along rows.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "value count must equal the shape product"
        );
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
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

    /// Shape as a dimension list.
    pub fn dims(&self) -> Vec<usize> {
        vec![self.rows, self.cols]
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

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() requires a scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// The models' matrices are small enough that the GEMM library's own
/// threading only adds overhead; parallelism lives at the sequence level
/// (rayon). Honors a user-set MATMUL_NUM_THREADS.
fn pin_gemm_threads() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        if std::env::var_os("MATMUL_NUM_THREADS").is_none() {
            std::env::set_var("MATMUL_NUM_THREADS", "1");
        }
    });
}

/// Output rows per parallel GEMM chunk. The partition is a pure function of
/// the shape (never of the worker count), so results are identical at any
/// thread count.
const GEMM_ROW_CHUNK: usize = 256;

/// `c = alpha * op(a) @ op(b) + beta * c`, where `op` optionally transposes.
/// Tall products are split into fixed row blocks evaluated in parallel; each
/// output element is still produced by one dgemm call over the full inner
/// dimension.
pub fn gemm(
    alpha: f64,
    a: &Tensor,
    ta: bool,
    b: &Tensor,
    tb: bool,
    beta: f64,
    c: &mut Tensor,
) {
    pin_gemm_threads();
    let (am, ak) = if ta {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (bk, bn) = if tb {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    assert_eq!(ak, bk, "gemm inner dimensions differ: {ak} vs {bk}");
    assert_eq!(c.shape(), (am, bn), "gemm output shape mismatch");

    let (rsa, csa) = if ta {
        (1usize, a.cols)
    } else {
        (a.cols, 1usize)
    };
    let (rsb, csb) = if tb {
        (1usize, b.cols)
    } else {
        (b.cols, 1usize)
    };

    if am >= 2 * GEMM_ROW_CHUNK {
        use rayon::prelude::*;
        let a_data = &a.data;
        let b_data = &b.data;
        c.data
            .par_chunks_mut(GEMM_ROW_CHUNK * bn)
            .enumerate()
            .for_each(|(chunk, c_rows)| {
                let row0 = chunk * GEMM_ROW_CHUNK;
                let rows = c_rows.len() / bn;
                gemm_views(
                    (rows, ak, bn),
                    alpha,
                    a_data,
                    (row0 * rsa, rsa, csa),
                    b_data,
                    (0, rsb, csb),
                    beta,
                    c_rows,
                    (0, bn, 1),
                );
            });
        return;
    }

    unsafe {
        matrixmultiply::dgemm(
            am,
            ak,
            bn,
            alpha,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            bn as isize,
            1,
        );
    }
}

/// GEMM over strided views into raw row-major buffers:
/// `C = alpha * A @ B + beta * C` with explicit offsets and strides per
/// operand. Bounds are asserted against the backing slices.
#[allow(clippy::too_many_arguments)]
pub fn gemm_views(
    (m, k, n): (usize, usize, usize),
    alpha: f64,
    a: &[f64],
    (a_off, rsa, csa): (usize, usize, usize),
    b: &[f64],
    (b_off, rsb, csb): (usize, usize, usize),
    beta: f64,
    c: &mut [f64],
    (c_off, rsc, csc): (usize, usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    pin_gemm_threads();
    assert!(a_off + (m - 1) * rsa + (k - 1) * csa < a.len() + usize::from(k == 0));
    assert!(b_off + (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c_off + (m - 1) * rsc + (n - 1) * csc < c.len());
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(a_off),
            rsa as isize,
            csa as isize,
            b.as_ptr().add(b_off),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr().add(c_off),
            rsc as isize,
            csc as isize,
        );
    }
}

pub fn matmul(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let m = if ta { a.cols } else { a.rows };
    let n = if tb { b.rows } else { b.cols };
    let mut c = Tensor::zeros(m, n);
    gemm(1.0, a, ta, b, tb, 0.0, &mut c);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_all_transpose_combinations() {
        let a = Tensor::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::from_vec(3, 2, vec![7., 8., 9., 10., 11., 12.]);
        let c = matmul(&a, false, &b, false);
        assert_eq!(c.data(), &[58., 64., 139., 154.]);

        let at = a.transpose();
        let c2 = matmul(&at, true, &b, false);
        assert_eq!(c2.data(), c.data());

        let bt = b.transpose();
        let c3 = matmul(&a, false, &bt, true);
        assert_eq!(c3.data(), c.data());

        let c4 = matmul(&at, true, &bt, true);
        assert_eq!(c4.data(), c.data());
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = Tensor::from_vec(1, 2, vec![1., 1.]);
        let b = Tensor::from_vec(2, 1, vec![2., 3.]);
        let mut c = Tensor::from_vec(1, 1, vec![10.]);
        gemm(1.0, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c.item(), 15.0);
    }

    #[test]
    fn parallel_row_split_is_bit_identical_to_single_call() {
        let m = 3 * GEMM_ROW_CHUNK + 17;
        let k = 37;
        let n = 45;
        let a = Tensor::from_vec(
            m,
            k,
            (0..m * k).map(|i| ((i * 2654435761) % 1000) as f64 * 1e-3 - 0.5).collect(),
        );
        let b = Tensor::from_vec(
            k,
            n,
            (0..k * n).map(|i| ((i * 40503) % 997) as f64 * 1e-3 - 0.3).collect(),
        );
        let mut split = Tensor::zeros(m, n);
        gemm(1.0, &a, false, &b, false, 0.0, &mut split);

        let mut single = Tensor::zeros(m, n);
        gemm_views(
            (m, k, n),
            1.0,
            a.data(),
            (0, k, 1),
            b.data(),
            (0, n, 1),
            0.0,
            single.data_mut(),
            (0, n, 1),
        );
        assert_eq!(split.data(), single.data());
    }
}
