//! Dense row-major matrices, seeded randomness and the central-difference
//! gradient oracle used to check every analytic gradient in the crate.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Orientation of a segment: a run along one row, or a run down one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Row,
    Column,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Row => "row",
            Axis::Column => "column",
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        match s {
            "row" => Some(Axis::Row),
            "column" | "col" => Some(Axis::Column),
            _ => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Row-major matrix of `f64`. `data.len() == rows * cols` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Entries drawn i.i.d. from `N(0, std^2)`.
    pub fn random_normal(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Self {
        Matrix::from_fn(rows, cols, |_, _| rng.normal() * std)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> Shape {
        Shape {
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copy of rows `lo..hi`.
    pub fn row_block(&self, lo: usize, hi: usize) -> Matrix {
        Matrix {
            rows: hi - lo,
            cols: self.cols,
            data: self.data[lo * self.cols..hi * self.cols].to_vec(),
        }
    }

    /// Overwrites rows starting at `lo` with `block`.
    pub fn set_row_block(&mut self, lo: usize, block: &Matrix) {
        assert_eq!(block.cols, self.cols);
        self.data[lo * self.cols..(lo + block.rows) * self.cols].copy_from_slice(&block.data);
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| x * c)
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "hadamard")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn count_zeros(&self) -> usize {
        self.data.iter().filter(|&&x| x == 0.0).count()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// `a * b`.
///
/// Every output entry accumulates `a[i,k] * b[k,j]` for `k = 0, 1, ...` in
/// ascending order starting from `+0.0`. The loop nest is i-k-j for cache
/// friendliness; the per-entry summation order is the same as the textbook
/// triple loop, so results are bit-identical to it.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `a * b^T` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b.row(j)) {
                acc += x * y;
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    Ok(out)
}

/// `a^T * b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aki * bkj;
            }
        }
    }
    Ok(out)
}

/// l2 norm of the entries `lo..hi` of row `group_index` (row axis) or of
/// column `group_index` (column axis).
pub fn segment_l2_norm(m: &Matrix, group_index: usize, axis: Axis, lo: usize, hi: usize) -> Result<f64> {
    let (groups, extent) = match axis {
        Axis::Row => (m.rows, m.cols),
        Axis::Column => (m.cols, m.rows),
    };
    if group_index >= groups || lo >= hi || hi > extent {
        return Err(Error::OutOfRange(format!(
            "{axis} segment {group_index}[{lo}..{hi}) of a {} matrix",
            m.shape()
        )));
    }
    let sum_sq: f64 = match axis {
        Axis::Row => m.row(group_index)[lo..hi].iter().map(|x| x * x).sum(),
        Axis::Column => (lo..hi).map(|i| m[(i, group_index)].powi(2)).sum(),
    };
    Ok(sum_sq.sqrt())
}

/// Central-difference gradient of `f` at `w`:
/// `(f(w + h e_ij) - f(w - h e_ij)) / 2h` for every entry.
pub fn finite_diff_gradient<F>(mut f: F, w: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    let mut probe = w.clone();
    let mut grad = Matrix::zeros(w.rows, w.cols);
    for idx in 0..w.data.len() {
        let orig = probe.data[idx];
        probe.data[idx] = orig + h;
        let plus = f(&probe);
        probe.data[idx] = orig - h;
        let minus = f(&probe);
        probe.data[idx] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at entry ({}, {})",
                idx / w.cols.max(1),
                idx % w.cols.max(1)
            )));
        }
        grad.data[idx] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Seeded pseudo-random source (ChaCha8). Identical seeds give identical
/// streams within one build; nothing is promised across implementations.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream, keyed by `stream`, that leaves `self` untouched.
    pub fn fork(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Standard normal sample.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_times_m() {
        let mut rng = Rng::new(1);
        let m = Matrix::random_normal(3, 4, 1.0, &mut rng);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn small_hand_product() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[1.0], [1.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), Matrix::from_rows(&[[3.0], [7.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let mut rng = Rng::new(7);
        for &(m, k, n) in &[(5, 7, 3), (1, 1, 1), (8, 3, 9), (16, 16, 16)] {
            let a = Matrix::random_normal(m, k, 1.0, &mut rng);
            let b = Matrix::random_normal(k, n, 1.0, &mut rng);
            assert_eq!(matmul(&a, &b).unwrap(), naive_matmul(&a, &b));
            assert_eq!(matmul_nt(&a, &b.transpose()).unwrap(), naive_matmul(&a, &b));
            assert_eq!(matmul_tn(&a.transpose(), &b).unwrap(), naive_matmul(&a, &b));
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "{msg}");
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn segment_norm_examples() {
        let m = Matrix::from_rows(&[[3.0, 4.0]]);
        assert_eq!(segment_l2_norm(&m, 0, Axis::Row, 0, 2).unwrap(), 5.0);
        assert_eq!(segment_l2_norm(&Matrix::zeros(2, 4), 1, Axis::Row, 1, 3).unwrap(), 0.0);
        let c = Matrix::from_rows(&[[3.0], [4.0]]);
        assert_eq!(segment_l2_norm(&c, 0, Axis::Column, 0, 2).unwrap(), 5.0);
    }

    #[test]
    fn segment_norm_matches_scalar_loop() {
        let mut rng = Rng::new(3);
        let m = Matrix::random_normal(4, 10, 1.0, &mut rng);
        let mut acc = 0.0;
        for j in 2..8 {
            acc += m[(1, j)] * m[(1, j)];
        }
        let got = segment_l2_norm(&m, 1, Axis::Row, 2, 8).unwrap();
        assert!((got - acc.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn segment_norm_rejects_bad_ranges() {
        let m = Matrix::zeros(3, 4);
        assert!(segment_l2_norm(&m, 3, Axis::Row, 0, 1).is_err());
        assert!(segment_l2_norm(&m, 0, Axis::Row, 2, 2).is_err());
        assert!(segment_l2_norm(&m, 0, Axis::Row, 0, 5).is_err());
        assert!(segment_l2_norm(&m, 0, Axis::Column, 0, 4).is_err());
    }

    #[test]
    fn finite_diff_of_sum_is_ones() {
        let mut rng = Rng::new(11);
        let w = Matrix::random_normal(3, 5, 1.0, &mut rng);
        let g = finite_diff_gradient(|m| m.as_slice().iter().sum(), &w, 1e-4).unwrap();
        assert!(g.max_abs_diff(&Matrix::filled(3, 5, 1.0)).unwrap() < 1e-9);
    }

    #[test]
    fn finite_diff_of_half_norm_sq_is_w() {
        let mut rng = Rng::new(12);
        let w = Matrix::random_normal(4, 4, 1.0, &mut rng);
        let g = finite_diff_gradient(|m| 0.5 * m.frobenius_norm_sq(), &w, 1e-4).unwrap();
        assert!(g.max_abs_diff(&w).unwrap() < 1e-8);
    }

    #[test]
    fn finite_diff_reports_non_finite_entry() {
        let w = Matrix::zeros(2, 2);
        let err = finite_diff_gradient(|m| if m[(1, 0)] > 0.0 { f64::NAN } else { 0.0 }, &w, 1e-3)
            .unwrap_err();
        assert!(err.to_string().contains("(1, 0)"), "{err}");
        assert!(finite_diff_gradient(|_| 0.0, &w, 0.0).is_err());
    }

    #[test]
    fn rng_is_deterministic() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::fork(42, 1);
        let mut d = Rng::fork(42, 2);
        assert_ne!(c.next_u64(), d.next_u64());
    }
}
