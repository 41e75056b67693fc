//! Small dense helpers shared across modules.
//!
//! Vectors are plain `[f64]` slices; matrices are `nalgebra::DMatrix<f64>`.
//! Dimensions here are tiny (2 or 3), so hot loops index directly instead of
//! going through nalgebra's allocating operators.

use alloc::vec::Vec;
use nalgebra::DMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Cosine of the angle between `a` and `b`, or `None` when either is zero.
pub fn cos_angle(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// `out = m * x`.
pub fn mat_vec_into(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let (rows, cols) = m.shape();
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let mut acc = 0.0;
        for (c, xc) in x.iter().enumerate().take(cols) {
            acc += m[(r, c)] * xc;
        }
        *o = acc;
    }
}

pub fn mat_vec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = alloc::vec![0.0; m.nrows()];
    mat_vec_into(m, x, &mut out);
    out
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest and largest eigenvalue of the symmetric part of `m`.
pub fn sym_eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = symmetrize(m).symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (_, hi) = sym_eig_extremes(&(m.transpose() * m));
    libm::sqrt(hi.max(0.0))
}

/// Clamp the eigenvalues of a symmetric matrix from below.
///
/// The floor is `max(rel * trace / d, abs_floor)`.
pub fn floor_covariance(cov: &DMatrix<f64>, rel: f64, abs_floor: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    let sym = symmetrize(cov);
    let floor = (rel * sym.trace() / d as f64).max(abs_floor);
    let eig = sym.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&clamped) * q.transpose();
    symmetrize(&out)
}

/// Axis-aligned bounding box of a set of points as `(min, max)`.
pub fn bounding_box<'a, I>(points: I, dim: usize) -> (Vec<f64>, Vec<f64>)
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut lo = alloc::vec![f64::INFINITY; dim];
    let mut hi = alloc::vec![f64::NEG_INFINITY; dim];
    for p in points {
        for i in 0..dim {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    (lo, hi)
}
