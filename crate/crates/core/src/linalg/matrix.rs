use crate::error::{Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice gives a `0 x 0` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact(0) panics, and a zero-column matrix has no data anyway.
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(if self.cols == 0 { 0 } else { self.rows })
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[c]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for r in self.iter_rows() {
            data.extend(idx.iter().map(|&c| r[c]));
        }
        Matrix { rows: self.rows, cols: idx.len(), data }
    }

    /// First `n` rows (or all, if fewer).
    pub fn head(&self, n: usize) -> Matrix {
        let n = n.min(self.rows);
        Matrix { rows: n, cols: self.cols, data: self.data[..n * self.cols].to_vec() }
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.data.len()).sum());
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::shape(format!("cannot stack {} columns onto {cols}", m.cols)));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (m, &x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        let n = self.rows as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Unbiased (`n - 1`) sample covariance of the rows.
    pub fn covariance(&self) -> Matrix {
        let mean = self.column_means();
        let d = self.cols;
        let mut cov = Matrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for r in self.iter_rows() {
            for j in 0..d {
                centered[j] = r[j] - mean[j];
            }
            for i in 0..d {
                let ci = centered[i];
                let row = &mut cov.data[i * d..(i + 1) * d];
                for j in i..d {
                    row[j] += ci * centered[j];
                }
            }
        }
        let denom = (self.rows as f64 - 1.0).max(1.0);
        for i in 0..d {
            for j in i..d {
                let v = cov.data[i * d + j] / denom;
                cov.data[i * d + j] = v;
                cov.data[j * d + i] = v;
            }
        }
        cov
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Matrix {
    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &nalgebra::DMatrix<f64>) -> Matrix {
        let mut out = Matrix::zeros(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.data[r * m.ncols() + c] = m[(r, c)];
            }
        }
        out
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(&self) -> Option<Matrix> {
        nalgebra::linalg::Cholesky::new(self.to_nalgebra()).map(|c| Matrix::from_nalgebra(&c.l()))
    }
}

fn check(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::shape(what.to_string()))
    }
}

/// `out = a · bᵀ` for `a: n×k`, `b: m×k`, `out: n×m`.
pub fn matmul_nt(a: &Matrix, b: &Matrix, out: &mut Matrix) -> Result<()> {
    check(a.cols == b.cols && out.rows == a.rows && out.cols == b.rows, "matmul_nt operands")?;
    let (m, k, n) = (a.rows, a.cols, b.rows);
    if m == 0 || n == 0 {
        return Ok(());
    }
    // SAFETY: dimensions and strides describe the owned buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.data.as_ptr(), k as isize, 1,
            b.data.as_ptr(), 1, k as isize,
            0.0,
            out.data.as_mut_ptr(), n as isize, 1,
        );
    }
    Ok(())
}

/// `out += aᵀ · b` for `a: n×m`, `b: n×k`, `out: m×k`.
pub fn matmul_tn_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) -> Result<()> {
    check(a.rows == b.rows && out.rows == a.cols && out.cols == b.cols, "matmul_tn operands")?;
    let (m, k, n) = (a.cols, a.rows, b.cols);
    if m == 0 || n == 0 {
        return Ok(());
    }
    // SAFETY: see matmul_nt.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.data.as_ptr(), 1, m as isize,
            b.data.as_ptr(), n as isize, 1,
            1.0,
            out.data.as_mut_ptr(), n as isize, 1,
        );
    }
    Ok(())
}

/// `out = a · b` for `a: n×m`, `b: m×k`, `out: n×k`.
pub fn matmul_nn(a: &Matrix, b: &Matrix, out: &mut Matrix) -> Result<()> {
    check(a.cols == b.rows && out.rows == a.rows && out.cols == b.cols, "matmul_nn operands")?;
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return Ok(());
    }
    // SAFETY: see matmul_nt.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.data.as_ptr(), k as isize, 1,
            b.data.as_ptr(), n as isize, 1,
            0.0,
            out.data.as_mut_ptr(), n as isize, 1,
        );
    }
    Ok(())
}
