//! Small dense complex linear algebra for per-frequency `M x M` problems.
//!
//! The dual-microphone case dominates every hot loop, so `M = 2` has closed
//! forms; larger arrays go through nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::C64;

/// Solves `A x = b` for a row-major `m x m` matrix. Returns `None` when singular.
pub fn solve(a: &[C64], m: usize, b: &[C64]) -> Option<Vec<C64>> {
    debug_assert_eq!(a.len(), m * m);
    debug_assert_eq!(b.len(), m);
    if m == 2 {
        let det = a[0] * a[3] - a[1] * a[2];
        if det.norm() == 0.0 || !det.is_finite() {
            return None;
        }
        return Some(vec![
            (a[3] * b[0] - a[1] * b[1]) / det,
            (a[0] * b[1] - a[2] * b[0]) / det,
        ]);
    }
    let mat = DMatrix::from_row_slice(m, m, a);
    let rhs = DVector::from_column_slice(b);
    mat.lu().solve(&rhs).map(|x| x.iter().copied().collect())
}

/// Unit-norm eigenvector of the largest eigenvalue of a Hermitian matrix.
pub fn dominant_eigenvector(a: &[C64], m: usize) -> (f64, Vec<C64>) {
    if m == 1 {
        return (a[0].re, vec![C64::new(1.0, 0.0)]);
    }
    if m == 2 {
        let p = a[0].re;
        let q = a[3].re;
        let r = a[1];
        let mean = 0.5 * (p + q);
        let disc = (0.25 * (p - q) * (p - q) + r.norm_sqr()).sqrt();
        let lambda = mean + disc;
        // (A - lambda I) v = 0; choose the better-conditioned row
        let v = if r.norm() == 0.0 {
            if p >= q {
                vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
            } else {
                vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]
            }
        } else if (lambda - q).abs() >= (lambda - p).abs() {
            vec![C64::new(lambda - q, 0.0), r.conj()]
        } else {
            vec![r, C64::new(lambda - p, 0.0)]
        };
        let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        return (lambda, v.into_iter().map(|x| x / n).collect());
    }
    let mat = DMatrix::from_row_slice(m, m, a);
    let eig = mat.symmetric_eigen();
    let (idx, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best });
    (lambda, eig.eigenvectors.column(idx).iter().copied().collect())
}

/// `u^H v`.
#[inline]
pub fn inner(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// Ratio of extreme singular values of a row-major `2 x 2` matrix.
pub fn condition_number_2x2(a: &[C64]) -> f64 {
    // singular values are square roots of the eigenvalues of A^H A
    let g00 = a[0].norm_sqr() + a[2].norm_sqr();
    let g11 = a[1].norm_sqr() + a[3].norm_sqr();
    let g01 = a[0].conj() * a[1] + a[2].conj() * a[3];
    let mean = 0.5 * (g00 + g11);
    let disc = (0.25 * (g00 - g11).powi(2) + g01.norm_sqr()).sqrt();
    let hi = (mean + disc).max(0.0).sqrt();
    let lo = (mean - disc).max(0.0).sqrt();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Lower Cholesky factor of a real symmetric PSD matrix, with a tiny ridge so
/// that rank-deficient (e.g. all-ones at DC) matrices still factor.
pub fn cholesky_psd(a: &[f64], m: usize) -> Vec<f64> {
    let mut mat = DMatrix::from_row_slice(m, m, a);
    for i in 0..m {
        mat[(i, i)] += 1e-10;
    }
    let l = mat
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(|| DMatrix::identity(m, m));
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = l[(i, j)];
        }
    }
    out
}
