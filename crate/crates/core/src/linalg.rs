//! Small dense helpers on `DMatrix<f64>` shared by every module.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// `(X + Xᵀ) / 2`.
pub fn symmetrize(x: &Mat) -> Mat {
    (x + x.transpose()) * 0.5
}

pub fn symmetrize_in_place(x: &mut Mat) {
    let n = x.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (x[(i, j)] + x[(j, i)]);
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
}

/// Frobenius inner product `⟨A, B⟩ = tr(AᵀB)`.
pub fn frob(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn min_eigenvalue(x: &Mat) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(x))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn eigenvalues(x: &Mat) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(symmetrize(x)).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Relative asymmetry `‖X − Xᵀ‖_F / ‖X‖_F` (zero for the zero matrix).
pub fn asymmetry(x: &Mat) -> f64 {
    let norm = x.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (x - x.transpose()).norm() / norm
}

/// Positive-definiteness floor used across trajectories: `1e-12 · tr(X) / n`.
pub fn pd_floor(x: &Mat) -> f64 {
    let n = x.nrows().max(1) as f64;
    1e-12 * (x.trace() / n).abs()
}

/// Returns `Ok(())` if `X − floor·I` admits a Cholesky factor.
pub fn check_pd(x: &Mat, what: &str, time: Option<f64>) -> Result<()> {
    let floor = pd_floor(x);
    let shifted = x - Mat::identity(x.nrows(), x.ncols()) * floor;
    if x.trace() > 0.0 && shifted.cholesky().is_some() {
        return Ok(());
    }
    Err(Error::NotPositiveDefinite {
        what: what.to_string(),
        min_eig: min_eigenvalue(x),
        time,
    })
}

/// Inverse of an SPD matrix via Cholesky, symmetrized.
pub fn spd_inverse(x: &Mat, what: &str, time: Option<f64>) -> Result<Mat> {
    match x.clone().cholesky() {
        Some(c) => {
            let mut inv = c.inverse();
            symmetrize_in_place(&mut inv);
            Ok(inv)
        }
        None => Err(Error::NotPositiveDefinite {
            what: what.to_string(),
            min_eig: min_eigenvalue(x),
            time,
        }),
    }
}

/// Relative Frobenius distance `‖A − B‖_F / max(‖B‖_F, tiny)`.
pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// A factor `L` with `L Lᵀ = X` for symmetric PSD `X`, built from the
/// eigendecomposition so that singular matrices are handled.
pub fn psd_factor(x: &Mat) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(x));
    let mut l = eig.eigenvectors.clone();
    for (j, mu) in eig.eigenvalues.iter().enumerate() {
        let s = mu.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    l
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    // column-major fill order is part of the reproducibility contract
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// sign of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Mat {
    let g = gaussian_matrix(rng, n, n);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
