//! Decompositions: one-sided Jacobi SVD, symmetric Jacobi eigensolver,
//! Gram-Schmidt and PCA bases.
//!
//! All iterations run in f64 regardless of the element type and are rounded
//! on the way out.

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix, Real, Vector};

/// Sweep cap for both Jacobi iterations.
pub const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin SVD: `a = u · diag(singular_values) · v_t`.
#[derive(Debug, Clone)]
pub struct SvdResult<T: Real = f32> {
    /// m × r, orthonormal columns.
    pub u: Matrix<T>,
    /// r values, descending, non-negative.
    pub singular_values: Vector<T>,
    /// r × n, orthonormal rows.
    pub v_t: Matrix<T>,
}

impl<T: Real> SvdResult<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        self.reconstruct_with(&self.singular_values)
    }

    /// `u · diag(values) · v_t` with a substitute spectrum.
    pub fn reconstruct_with(&self, values: &[T]) -> Matrix<T> {
        let (m, r) = self.u.shape();
        let n = self.v_t.cols();
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            let row = out.row_mut(i);
            for k in 0..r {
                let c = self.u[(i, k)] * values[k];
                if c == T::zero() {
                    continue;
                }
                for (dst, &v) in row.iter_mut().zip(self.v_t.row(k)) {
                    *dst += c * v;
                }
            }
        }
        out
    }
}

struct Rotation {
    c: f64,
    s: f64,
}

fn rotate(x: &mut [f64], y: &mut [f64], rot: &Rotation) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = rot.c * xa - rot.s * yb;
        *b = rot.s * xa + rot.c * yb;
    }
}

fn split_pair(rows: &mut [Vec<f64>], p: usize, q: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    debug_assert!(p < q);
    let (lo, hi) = rows.split_at_mut(q);
    (&mut lo[p], &mut hi[0])
}

/// Hestenes iteration on the rows of `w` (the columns of the original matrix).
/// Returns the accumulated right rotations when `track` is set.
fn orthogonalize_rows(w: &mut [Vec<f64>], track: bool) -> Result<Option<Vec<Vec<f64>>>> {
    let n = w.len();
    let mut v: Option<Vec<Vec<f64>>> = track.then(|| {
        (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                r
            })
            .collect()
    });
    let mut norms: Vec<f64> = w.iter().map(|r| dot(r, r)).collect();
    let tol = 1e-15;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha < 1e-300 || beta < 1e-300 {
                    continue;
                }
                let (wp, wq) = split_pair(w, p, q);
                let gamma = dot(wp, wq);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let rot = Rotation { c, s: c * t };
                rotate(wp, wq, &rot);
                norms[p] = dot(wp, wp);
                norms[q] = dot(wq, wq);
                if let Some(v) = v.as_mut() {
                    let (vp, vq) = split_pair(v, p, q);
                    rotate(vp, vq, &rot);
                }
            }
        }
        if !rotated {
            return Ok(v);
        }
    }
    Err(Error::SvdNoConvergence {
        cap: JACOBI_MAX_SWEEPS,
    })
}

/// Extend `cols` (unit, mutually orthogonal, all of length `m`) so that slots
/// flagged in `missing` are filled with unit vectors orthogonal to the rest.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[bool], m: usize) {
    let mut candidate = 0usize;
    for j in 0..cols.len() {
        if !missing[j] {
            continue;
        }
        loop {
            assert!(candidate < m, "basis completion ran out of candidates");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == j || (missing[k] && k > j) {
                        continue;
                    }
                    let proj = dot(&e, c);
                    for (ei, ci) in e.iter_mut().zip(c) {
                        *ei -= proj * ci;
                    }
                }
            }
            let n = dot(&e, &e).sqrt();
            if n > 1e-6 {
                cols[j] = e.iter().map(|x| x / n).collect();
                break;
            }
        }
    }
}

/// One-sided Jacobi SVD.
pub fn svd<T: Real>(a: &Matrix<T>) -> Result<SvdResult<T>> {
    if !a.is_finite() {
        return Err(Error::invalid("svd input has non-finite entries"));
    }
    let (m, n) = a.shape();
    if m < n {
        let t = svd(&a.transpose())?;
        return Ok(SvdResult {
            u: t.v_t.transpose(),
            singular_values: t.singular_values,
            v_t: t.u.transpose(),
        });
    }
    let mut w: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a[(i, j)].as_f64()).collect())
        .collect();
    let v = orthogonalize_rows(&mut w, true)?.expect("tracked");

    let sigma: Vec<f64> = w.iter().map(|r| dot(r, r).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let smax = order.first().map_or(0.0, |&i| sigma[i]);
    let floor = smax * 1e-13;
    let mut u_cols = Vec::with_capacity(n);
    let mut missing = Vec::with_capacity(n);
    for &j in &order {
        if sigma[j] > floor && sigma[j] > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / sigma[j]).collect::<Vec<_>>());
            missing.push(false);
        } else {
            u_cols.push(vec![0.0; m]);
            missing.push(true);
        }
    }
    if missing.iter().any(|&x| x) {
        complete_basis(&mut u_cols, &missing, m);
    }

    let u = Matrix::from_fn(m, n, |i, k| T::lit(u_cols[k][i]));
    let v_t = Matrix::from_fn(n, n, |k, j| T::lit(v[order[k]][j]));
    let singular_values = Vector(order.iter().map(|&j| T::lit(sigma[j])).collect());
    Ok(SvdResult {
        u,
        singular_values,
        v_t,
    })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues descending; eigenvectors are the rows of the returned matrix.
pub fn symmetric_eigen(a: &Matrix<f64>, want_vectors: bool) -> Result<(Vec<f64>, Option<Matrix<f64>>)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape {
            op: "symmetric_eigen",
            lhs: a.shape(),
            rhs: (n, n),
        });
    }
    let mut s = a.clone();
    let mut vecs = want_vectors.then(|| Matrix::<f64>::identity(n));
    let scale = s.frobenius_norm().max(1e-300);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += s[(p, q)] * s[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = s[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (s[(q, q)] - s[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let skp = s[(k, p)];
                    let skq = s[(k, q)];
                    s[(k, p)] = c * skp - sn * skq;
                    s[(k, q)] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[(p, k)];
                    let sqk = s[(q, k)];
                    s[(p, k)] = c * spk - sn * sqk;
                    s[(q, k)] = sn * spk + c * sqk;
                }
                if let Some(v) = vecs.as_mut() {
                    let (rp, rq) = {
                        let data = v.as_mut_slice();
                        let (lo, hi) = data.split_at_mut(q * n);
                        (&mut lo[p * n..(p + 1) * n], &mut hi[..n])
                    };
                    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
                        let (xp, yq) = (*x, *y);
                        *x = c * xp - sn * yq;
                        *y = sn * xp + c * yq;
                    }
                }
            }
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            cap: JACOBI_MAX_SWEEPS,
        });
    }
    let diag: Vec<f64> = (0..n).map(|i| s[(i, i)]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| diag[i]).collect();
    let vectors = vecs.map(|v| v.select_rows(&order));
    Ok((values, vectors))
}

/// Singular values only, descending. Goes through the Gram matrix of the
/// shorter side, so tiny values carry only ~1e-8 relative accuracy.
pub fn singular_values<T: Real>(a: &Matrix<T>) -> Result<Vec<f64>> {
    let a64 = a.cast::<f64>();
    let short = if a.rows() <= a.cols() { a64 } else { a64.transpose() };
    let d = short.rows();
    let mut g = Matrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = dot(short.row(i), short.row(j));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let (values, _) = symmetric_eigen(&g, false)?;
    Ok(values.into_iter().map(|l| l.max(0.0).sqrt()).collect())
}

/// Orthonormal basis from a list of vectors.
#[derive(Debug, Clone)]
pub struct OrthoBasis<T: Real = f32> {
    pub vectors: Vec<Vector<T>>,
    /// Inputs dropped as numerically dependent on earlier ones.
    pub dropped: usize,
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
///
/// A vector whose residual after projection falls below `1e-6` times its own
/// norm is dropped and counted.
pub fn gram_schmidt<T: Real>(vectors: &[Vector<T>]) -> OrthoBasis<T> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    for v in vectors {
        let mut r: Vec<f64> = v.iter().map(|x| x.as_f64()).collect();
        let n0 = dot(&r, &r).sqrt();
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&r, b);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= p * bi;
                }
            }
        }
        let n = dot(&r, &r).sqrt();
        if n0 == 0.0 || n < 1e-6 * n0 {
            dropped += 1;
            continue;
        }
        basis.push(r.into_iter().map(|x| x / n).collect());
    }
    if dropped > 0 {
        warn!("gram_schmidt dropped {dropped} near-dependent vector(s)");
    }
    OrthoBasis {
        vectors: basis
            .into_iter()
            .map(|b| Vector(b.into_iter().map(T::lit).collect()))
            .collect(),
        dropped,
    }
}

/// Top-`m` principal directions of the rows of `x` (as unit vectors).
pub fn pca_basis<T: Real>(x: &Matrix<T>, m: usize, center: bool) -> Result<Vec<Vector<f64>>> {
    let (rows, d) = x.shape();
    let mut xc = x.cast::<f64>();
    if center && rows > 0 {
        let mut mean = vec![0.0; d];
        for i in 0..rows {
            for (mu, v) in mean.iter_mut().zip(xc.row(i)) {
                *mu += v;
            }
        }
        for mu in &mut mean {
            *mu /= rows as f64;
        }
        for i in 0..rows {
            for (v, mu) in xc.row_mut(i).iter_mut().zip(&mean) {
                *v -= mu;
            }
        }
    }
    if rows < d {
        // Fewer samples than features: eigendecompose the sample Gram matrix
        // and map its eigenvectors back through the data.
        let gram = crate::tensor::matmul_bt(&xc, &xc)?;
        let (values, vectors) = symmetric_eigen(&gram, true)?;
        let vectors = vectors.expect("requested");
        let top = values.first().copied().unwrap_or(0.0);
        let xt = xc.transpose();
        let mut out = Vec::new();
        for k in 0..m.min(rows) {
            if values[k] <= 1e-12 * top.max(1e-300) {
                break;
            }
            let u = vectors.row_vector(k);
            let mut dir: Vec<f64> = (0..d).map(|j| dot(xt.row(j), &u)).collect();
            let n = dot(&dir, &dir).sqrt();
            dir.iter_mut().for_each(|x| *x /= n);
            out.push(Vector(dir));
        }
        return Ok(out);
    }
    let cov = crate::tensor::matmul_at(&xc, &xc)?;
    let (values, vectors) = symmetric_eigen(&cov, true)?;
    let vectors = vectors.expect("requested");
    let top = values.first().copied().unwrap_or(0.0);
    Ok((0..m.min(d))
        .filter(|&k| values[k] > 1e-12 * top.max(1e-300))
        .map(|k| vectors.row_vector(k))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tensor::{matmul, matmul_at, outer};

    fn orthonormal_cols(u: &Matrix<f64>) -> f64 {
        let g = matmul_at(u, u).unwrap();
        let n = g.rows();
        g.sub(&Matrix::identity(n)).unwrap().as_slice().iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn diagonal_spectrum() {
        let a = Matrix::<f32>::diag(&[1.0, 3.0, 2.0]);
        let r = svd(&a).unwrap();
        assert_eq!(r.singular_values.0, vec![3.0, 2.0, 1.0]);
        let rec = r.reconstruct();
        assert!(rec.sub(&a).unwrap().frobenius_norm() < 1e-6);
    }

    #[test]
    fn rank_one_has_single_value() {
        let mut rng = RngStream::new(5, 0);
        let u = rng.randn::<f32>(6);
        let v = rng.randn::<f32>(4);
        let r = svd(&outer(&u, &v)).unwrap();
        let s1 = r.singular_values[0];
        let above = r.singular_values.iter().filter(|&&s| s > 1e-5 * s1).count();
        assert_eq!(above, 1);
        assert!(orthonormal_cols(&r.u.cast()) < 1e-4);
        assert!(orthonormal_cols(&r.v_t.transpose().cast()) < 1e-4);
    }

    #[test]
    fn reconstruction_rectangular_both_orientations() {
        let mut rng = RngStream::new(6, 0);
        for &(m, n) in &[(12, 5), (5, 12), (30, 30)] {
            let a = Matrix::from_vec(m, n, rng.randn::<f32>(m * n).0).unwrap();
            let r = svd(&a).unwrap();
            let err = r.reconstruct().sub(&a).unwrap().frobenius_norm();
            assert!(err <= 1e-4 * a.frobenius_norm(), "{m}x{n}: {err}");
            assert!(orthonormal_cols(&r.u.cast()) < 1e-4);
            assert!(orthonormal_cols(&r.v_t.transpose().cast()) < 1e-4);
            assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_has_orthonormal_u() {
        let mut rng = RngStream::new(7, 0);
        let b = Matrix::from_vec(10, 3, rng.randn::<f64>(30).0).unwrap();
        let c = Matrix::from_vec(3, 8, rng.randn::<f64>(24).0).unwrap();
        let a = matmul(&b, &c).unwrap();
        let r = svd(&a).unwrap();
        assert!(orthonormal_cols(&r.u) < 1e-8);
        assert!(r.reconstruct().sub(&a).unwrap().frobenius_norm() < 1e-10 * a.frobenius_norm());
        assert!(r.singular_values[3] < 1e-10 * r.singular_values[0]);
    }

    #[test]
    fn zero_matrix() {
        let r = svd(&Matrix::<f32>::zeros(4, 3)).unwrap();
        assert!(r.singular_values.iter().all(|&s| s == 0.0));
        assert!(orthonormal_cols(&r.u.cast()) < 1e-6);
    }

    #[test]
    fn singular_values_match_full_svd() {
        let mut rng = RngStream::new(8, 0);
        let a = Matrix::from_vec(20, 45, rng.randn::<f32>(900).0).unwrap();
        let fast = singular_values(&a).unwrap();
        let full = svd(&a).unwrap().singular_values;
        for (x, y) in fast.iter().zip(full.iter()) {
            assert!((x - *y as f64).abs() < 1e-4 * fast[0]);
        }
    }

    #[test]
    fn gram_schmidt_cases() {
        let e1 = Vector(vec![1.0f32, 0.0, 0.0]);
        let e2 = Vector(vec![0.0f32, 1.0, 0.0]);
        let b = gram_schmidt(&[e1.clone(), e2.clone()]);
        assert_eq!(b.dropped, 0);
        assert!(b.vectors[0].sub(&e1).norm() < 1e-6);
        assert!(b.vectors[1].sub(&e2).norm() < 1e-6);

        let b = gram_schmidt(&[e1.clone(), e1.add(&e2)]);
        assert!(b.vectors[1].sub(&e2).norm() < 1e-6);

        let b = gram_schmidt(&[e1.clone(), e1.scale(2.0), e2]);
        assert_eq!(b.dropped, 1);
        assert_eq!(b.vectors.len(), 2);
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let mut rng = RngStream::new(9, 0);
        let dir = Vector(vec![0.6, 0.8, 0.0]);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let t: f64 = rng.normal::<f64>() * 5.0;
                let noise = rng.randn::<f64>(3);
                (0..3).map(|k| t * dir[k] + 0.1 * noise[k] + 3.0).collect()
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let basis = pca_basis(&x, 1, true).unwrap();
        assert!(basis[0].dot(&dir).abs() > 0.999);
    }
}
