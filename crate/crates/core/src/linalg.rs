//! Small dense linear-algebra helpers shared by the moment engine and the
//! MoN formulas. Everything here works on `nalgebra` dynamic matrices; the
//! dimensions involved are tiny (at most a few dozen rows).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MonError, Result};

/// Number of jitter decades tried after the plain Cholesky attempt.
const JITTER_DECADES: i32 = 3;
const JITTER_BASE: f64 = 1e-12;
/// Relative eigenvalue threshold for the pseudo-inverse fallback.
pub const PINV_RELATIVE_THRESHOLD: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn is_square(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols()
}

const SIGN_PIVOT_FLOOR: f64 = 1e-8;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Each eigenvector is signed so that its first
/// component of magnitude above `SIGN_PIVOT_FLOOR` is positive; unlike a
/// largest-component rule this is unambiguous for `(1, ±1)/√2` pairs.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, 10_000).ok_or(MonError::EigenFailure)?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(MonError::EigenFailure);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let pivot = v.iter().position(|x| x.abs() > SIGN_PIVOT_FLOOR).unwrap_or(0);
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(col, &v);
    }
    Ok((values, vectors))
}

/// Returns a square root `L` with `L Lᵀ ≈ cov`.
///
/// Plain Cholesky first, then Cholesky with a diagonal jitter of
/// `1e-12 · tr(cov)/dim`, grown by one decade per retry, and finally an
/// eigen pseudo-factor with eigenvalues clamped at zero.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.l());
    }
    let scale = cov.trace() / n as f64;
    if scale > 0.0 && scale.is_finite() {
        for decade in 0..=JITTER_DECADES {
            let jitter = JITTER_BASE * 10f64.powi(decade) * scale;
            let shifted = cov + DMatrix::identity(n, n) * jitter;
            if let Some(chol) = shifted.cholesky() {
                return Ok(chol.l());
            }
        }
    }
    let (values, vectors) =
        sorted_symmetric_eigen(cov).map_err(|_| MonError::NotPsd("eigendecomposition failed".into()))?;
    let largest = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let floor = -1e-10 * largest.max(f64::MIN_POSITIVE);
    if let Some(bad) = values.iter().find(|&&v| v < floor) {
        return Err(MonError::NotPsd(format!("eigenvalue {bad:e}")));
    }
    let roots = values.map(|v| v.max(0.0).sqrt());
    Ok(&vectors * DMatrix::from_diagonal(&roots))
}

/// How a symmetric solve was carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveRoute {
    Cholesky,
    PseudoInverse { dropped: usize },
}

/// Solves `a · x = b` for symmetric positive (semi-)definite `a`.
///
/// Falls back to an eigen pseudo-inverse that drops eigenvalues below
/// `1e-12 · λ_max`. Fails only when `a` has no usable spectrum at all.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, SolveRoute)> {
    if !is_square(a) || a.nrows() != b.nrows() {
        return Err(MonError::DimensionMismatch(format!(
            "solve {}x{} against {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok((chol.solve(b), SolveRoute::Cholesky));
    }
    let (values, vectors) = sorted_symmetric_eigen(a)?;
    let lmax = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lmax > 0.0) || !lmax.is_finite() {
        return Err(MonError::DegenerateInput);
    }
    let threshold = PINV_RELATIVE_THRESHOLD * lmax;
    let mut dropped = 0;
    let inv_values = values.map(|v| {
        if v > threshold {
            1.0 / v
        } else {
            dropped += 1;
            0.0
        }
    });
    let pinv = &vectors * DMatrix::from_diagonal(&inv_values) * vectors.transpose();
    Ok((pinv * b, SolveRoute::PseudoInverse { dropped }))
}

/// Symmetrizes `m` and clamps negative eigenvalues to zero.
///
/// Returns the clamped matrix and the summed magnitude of the clamped
/// eigenvalues. If nothing is negative the symmetrized input is returned
/// untouched.
pub fn clamp_psd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let sym = symmetrize(m);
    let (values, vectors) = sorted_symmetric_eigen(&sym)?;
    let clamped: f64 = values.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    if clamped == 0.0 {
        return Ok((sym, 0.0));
    }
    let kept = values.map(|v| v.max(0.0));
    let rebuilt = &vectors * DMatrix::from_diagonal(&kept) * vectors.transpose();
    Ok((symmetrize(&rebuilt), clamped))
}

/// `tr(a · b)` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    is_square(m) && max_asymmetry(m) == 0.0 && m.clone().cholesky().is_some()
}
