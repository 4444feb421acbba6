//! Dense row-major matrices and vectors.
//!
//! Everything here is generic over [`Real`] so the same code paths run at
//! 32 bits (the default compute width) and at 64 bits for oracle comparisons.
//! Reductions use a fixed summation order so results are bit-reproducible.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, Deref, DerefMut, DivAssign, Index, IndexMut, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type.
pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

const LANES: usize = 8;

/// Inner product with eight fixed accumulator lanes.
///
/// The lane split is part of the contract: it fixes the summation order
/// independently of the caller, and lets the compiler vectorize the loop.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let xa = &a[c * LANES..(c + 1) * LANES];
        let xb = &b[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    for i in chunks * LANES..a.len() {
        acc[i % LANES] += a[i] * b[i];
    }
    let mut s = T::zero();
    for v in acc {
        s += v;
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Clone, PartialEq)]
pub struct Vector<T: Real = f32>(pub Vec<T>);

impl<T: Real> Vector<T> {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![T::zero(); len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &Vector<T>) -> T {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, c: T) -> Vector<T> {
        Vector(self.0.iter().map(|&x| x * c).collect())
    }

    pub fn add(&self, other: &Vector<T>) -> Vector<T> {
        Vector(self.0.iter().zip(&other.0).map(|(&a, &b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector<T>) -> Vector<T> {
        Vector(self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Vector<U> {
        Vector(self.0.iter().map(|&x| U::lit(x.as_f64())).collect())
    }
}

impl<T: Real> Deref for Vector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T: Real> DerefMut for Vector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T: Real> From<Vec<T>> for Vector<T> {
    fn from(v: Vec<T>) -> Self {
        Vector(v)
    }
}

impl<T: Real> Debug for Vector<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T: Real = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Debug for Matrix<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

// Row-block size for the blocked kernels. Only affects memory traffic, never
// the per-element summation order.
const ROW_BLOCK: usize = 16;

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn diag(values: &[T]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn row_vector(&self, i: usize) -> Vector<T> {
        Vector(self.row(i).to_vec())
    }

    pub fn col_vector(&self, j: usize) -> Vector<T> {
        Vector((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    /// Matrix whose rows are the selected rows of `self`, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, c: T) -> Matrix<T> {
        self.map(|x| x * c)
    }

    pub fn scale_in_place(&mut self, c: T) {
        for x in &mut self.data {
            *x *= c;
        }
    }

    fn check_same(&self, other: &Matrix<T>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_same(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_same(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn hadamard(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_same(other, "hadamard")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    fn zip_map(&self, other: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
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

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: T, x: &Matrix<T>) -> Result<()> {
        self.check_same(x, "axpy")?;
        axpy(alpha, &x.data, &mut self.data);
        Ok(())
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix<T>) -> Result<T> {
        self.check_same(other, "dot")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn frobenius_norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    /// Scale each row to unit norm; zero rows are left alone.
    pub fn normalize_rows(&mut self) {
        for i in 0..self.rows {
            let r = self.row_mut(i);
            let n = dot(r, r).sqrt();
            if n > T::zero() {
                for x in r.iter_mut() {
                    *x /= n;
                }
            }
        }
    }

    pub fn relu(&self) -> Matrix<T> {
        self.map(|x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn relu_mask(&self) -> Matrix<T> {
        self.map(|x| if x > T::zero() { T::one() } else { T::zero() })
    }
}

impl<T: Real> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// `a · b`.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut c = Matrix::zeros(m, n);
    for ib in (0..m).step_by(ROW_BLOCK) {
        let ie = (ib + ROW_BLOCK).min(m);
        for p in 0..k {
            let b_row = &b.data[p * n..(p + 1) * n];
            for i in ib..ie {
                let aip = a.data[i * k + p];
                if aip == T::zero() {
                    continue;
                }
                axpy(aip, b_row, &mut c.data[i * n..(i + 1) * n]);
            }
        }
    }
    Ok(c)
}

/// `a · bᵀ`; the natural layout for a batch of row vectors hitting a weight matrix.
pub fn matmul_bt<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::Shape {
            op: "matmul_bt",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (m, n) = (a.rows, b.rows);
    let mut c = Matrix::zeros(m, n);
    for ib in (0..m).step_by(ROW_BLOCK) {
        let ie = (ib + ROW_BLOCK).min(m);
        for j in 0..n {
            let b_row = b.row(j);
            for i in ib..ie {
                c.data[i * n + j] = dot(a.row(i), b_row);
            }
        }
    }
    Ok(c)
}

/// `aᵀ · b`; used to reduce per-example outer products over a batch.
pub fn matmul_at<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return Err(Error::Shape {
            op: "matmul_at",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (r, m, n) = (a.rows, a.cols, b.cols);
    let mut c = Matrix::zeros(m, n);
    for ib in (0..m).step_by(ROW_BLOCK) {
        let ie = (ib + ROW_BLOCK).min(m);
        for p in 0..r {
            let b_row = &b.data[p * n..(p + 1) * n];
            for i in ib..ie {
                let api = a.data[p * m + i];
                if api == T::zero() {
                    continue;
                }
                axpy(api, b_row, &mut c.data[i * n..(i + 1) * n]);
            }
        }
    }
    Ok(c)
}

/// `result[i][j] = u[i] * v[j]`
pub fn outer<T: Real>(u: &[T], v: &[T]) -> Matrix<T> {
    let mut m = Matrix::zeros(u.len(), v.len());
    for (i, &ui) in u.iter().enumerate() {
        for (dst, &vj) in m.row_mut(i).iter_mut().zip(v) {
            *dst = ui * vj;
        }
    }
    m
}

pub fn relu<T: Real>(v: &[T]) -> Vector<T> {
    Vector(
        v.iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect(),
    )
}

/// ReLU derivative; exactly-zero inputs map to 0.
pub fn relu_mask<T: Real>(v: &[T]) -> Vector<T> {
    Vector(
        v.iter()
            .map(|&x| if x > T::zero() { T::one() } else { T::zero() })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a[(i, p)] * b[(p, j)];
                }
                c[(i, j)] = s;
            }
        }
        c
    }

    fn random(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, rng.randn::<f64>(rows * cols).0).unwrap()
    }

    fn max_rel(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        let scale = b.as_slice().iter().fold(1e-12f64, |m, x| m.max(x.abs()));
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs() / scale)
            .fold(0.0, f64::max)
    }

    #[test]
    fn matmul_identity_and_selection() {
        let a = Matrix::<f32>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
        let sel = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &sel).unwrap();
        assert_eq!(c.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let a = Matrix::<f32>::zeros(2, 3);
        let b = Matrix::<f32>::zeros(2, 3);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn matmul_matches_naive_loop() {
        let mut rng = RngStream::new(1, 0);
        let a = random(8, 8, &mut rng);
        let b = random(8, 8, &mut rng);
        assert!(max_rel(&matmul(&a, &b).unwrap(), &naive_matmul(&a, &b)) < 1e-6);

        let a = random(37, 64, &mut rng);
        let b = random(64, 29, &mut rng);
        let want = naive_matmul(&a, &b);
        assert!(max_rel(&matmul(&a, &b).unwrap(), &want) < 1e-6);
        assert!(max_rel(&matmul_bt(&a, &b.transpose()).unwrap(), &want) < 1e-6);
        assert!(max_rel(&matmul_at(&a.transpose(), &b).unwrap(), &want) < 1e-6);
    }

    #[test]
    fn matmul_f32_matches_f64_oracle() {
        let mut rng = RngStream::new(2, 0);
        let a = random(64, 64, &mut rng);
        let b = random(64, 64, &mut rng);
        let got = matmul(&a.cast::<f32>(), &b.cast::<f32>()).unwrap().cast::<f64>();
        let want = naive_matmul(&a.cast::<f32>().cast(), &b.cast::<f32>().cast());
        let err = got
            .as_slice()
            .iter()
            .zip(want.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        // 64-term f32 accumulation of O(1) products.
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn outer_cases() {
        let m = outer(&[1.0f32, 0.0], &[0.0, 1.0]);
        assert_eq!(m.as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        let z = outer(&[0.0f32; 3], &[1.0, 2.0]);
        assert!(z.as_slice().iter().all(|&x| x == 0.0));

        let mut rng = RngStream::new(3, 0);
        let u = rng.randn::<f32>(5);
        let v = rng.randn::<f32>(7);
        let m = outer(&u, &v);
        for i in 0..5 {
            for j in 0..7 {
                assert_eq!(m[(i, j)], u[i] * v[j]);
            }
        }
    }

    #[test]
    fn relu_and_mask() {
        let v = [-1.0f32, 0.0, 2.0];
        assert_eq!(relu(&v).0, vec![0.0, 0.0, 2.0]);
        assert_eq!(relu_mask(&v).0, vec![0.0, 0.0, 1.0]);
        assert!(relu_mask(&[0.5f32, 3.0, 1e-9]).iter().all(|&m| m == 1.0));
    }

    #[test]
    fn relu_mask_density_on_standard_normal() {
        let mut rng = RngStream::new(4, 0);
        let v = rng.randn::<f32>(10_000);
        let mean = relu_mask(&v).iter().sum::<f32>() / 10_000.0;
        assert!((0.47..=0.53).contains(&mean), "{mean}");
    }

    proptest! {
        #[test]
        fn kernels_agree_with_naive(m in 1usize..20, k in 1usize..20, n in 1usize..20, seed in 0u64..1000) {
            let mut rng = RngStream::new(seed, 9);
            let a = random(m, k, &mut rng);
            let b = random(k, n, &mut rng);
            let want = naive_matmul(&a, &b);
            prop_assert!(max_rel(&matmul(&a, &b).unwrap(), &want) < 1e-12);
            prop_assert!(max_rel(&matmul_bt(&a, &b.transpose()).unwrap(), &want) < 1e-12);
            prop_assert!(max_rel(&matmul_at(&a.transpose(), &b).unwrap(), &want) < 1e-12);
        }

        #[test]
        fn dot_is_reproducible(seed in 0u64..1000, n in 0usize..100) {
            let mut rng = RngStream::new(seed, 0);
            let a = rng.randn::<f32>(n);
            let b = rng.randn::<f32>(n);
            prop_assert_eq!(dot(&a, &b).to_bits(), dot(&a, &b).to_bits());
            let exact: f64 = a.iter().zip(b.iter()).map(|(&x, &y)| x as f64 * y as f64).sum();
            prop_assert!((dot(&a, &b) as f64 - exact).abs() < 1e-4 * (1.0 + n as f64).sqrt());
        }
    }
}
