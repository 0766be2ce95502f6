use std::fmt;

/// Scalar type for network math. 64-bit unless built with `single-precision`.
#[cfg(not(feature = "single-precision"))]
pub type Float = f64;
#[cfg(feature = "single-precision")]
pub type Float = f32;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<Float>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]{:?}", self.rows, self.cols, &self.data[..self.data.len().min(8)])
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, v: Float) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Float>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::from_vec(rows, cols, data.iter().map(|&v| v as Float).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Float] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Float] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Float> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[Float] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Float] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> Float {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Float) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
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

/// `c = alpha * op(a) * op(b) + beta * c` with optional transposes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Float,
    a: &[Float],
    trans_a: bool,
    b: &[Float],
    trans_b: bool,
    beta: Float,
    c: &mut [Float],
) {
    if m == 0 || n == 0 {
        return;
    }
    // row/col strides for op(a) as an m x k matrix and op(b) as k x n
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: slices cover m*k, k*n and m*n elements for the given strides.
    unsafe {
        #[cfg(not(feature = "single-precision"))]
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        #[cfg(feature = "single-precision")]
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes_match_loops() {
        let a = Tensor::from_f64(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let b = Tensor::from_f64(3, 2, &[7., 8., 9., 10., 11., 12.]);
        let mut c = vec![0.0; 4];
        gemm(2, 3, 2, 1.0, a.data(), false, b.data(), false, 0.0, &mut c);
        assert_eq!(c, vec![58., 64., 139., 154.]);
        let at = a.transpose();
        let bt = b.transpose();
        let mut c2 = vec![0.0; 4];
        gemm(2, 3, 2, 1.0, at.data(), true, bt.data(), true, 0.0, &mut c2);
        assert_eq!(c, c2);
    }
}
