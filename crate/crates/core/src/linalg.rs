//! Small dense linear-algebra helpers shared by the alignment stages.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Haar-distributed random orthogonal matrix: QR of a Gaussian matrix with
/// the signs of R's diagonal folded into Q.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    q
}

/// `‖WᵀW − I‖_F`.
pub fn orthogonality_error(w: &DMatrix<f64>) -> f64 {
    let n = w.ncols();
    (w.transpose() * w - DMatrix::<f64>::identity(n, n)).norm()
}

/// Cosine similarity; `None` when either vector is zero.
pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
    }
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}
