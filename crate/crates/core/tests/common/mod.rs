#![allow(dead_code)]

use std::sync::Arc;

use mon_core::models::MatrixMap;
use mon_core::{GaussianPrior, StochasticModel, UnitChange};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(b.amax()).max(f64::MIN_POSITIVE);
    (a - b).amax() / scale
}

/// Symmetric positive definite matrix with eigenvalues log-uniform in
/// `[1, cond]` times a random overall scale in `[0.1, 10]`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, cond: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let overall = 10f64.powf(rng.random_range(-1.0..1.0));
    let eig = DVector::from_fn(n, |_, _| overall * cond.powf(rng.random_range(0.0..1.0)));
    let s = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&s + s.transpose()) * 0.5
}

pub fn random_diag<R: Rng>(rng: &mut R, n: usize, cond: f64) -> Vec<f64> {
    (0..n).map(|_| cond.sqrt().powf(rng.random_range(-1.0..1.0))).collect()
}

pub fn random_offset<R: Rng>(rng: &mut R, n: usize, max: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-max..max))
}

/// Random affine change with full input and noise scales of condition
/// number at most `cond`; the output scale is full only when `full_output`
/// is set and diagonal otherwise. Offsets are bounded by `offset`.
pub fn random_unit_change<R: Rng>(
    rng: &mut R,
    n_u: usize,
    n_y: usize,
    n_v: usize,
    full_output: bool,
    cond: f64,
    offset: f64,
) -> UnitChange {
    let s_u = random_spd(rng, n_u, cond);
    let s_y = if full_output {
        random_spd(rng, n_y, cond)
    } else {
        DMatrix::from_diagonal(&DVector::from_vec(random_diag(rng, n_y, cond)))
    };
    let s_v = if n_v == 0 {
        DMatrix::zeros(0, 0)
    } else {
        random_spd(rng, n_v, cond)
    };
    UnitChange::new(
        s_u,
        random_offset(rng, n_u, offset),
        s_y,
        random_offset(rng, n_y, offset),
        s_v,
    )
    .unwrap()
}

/// Positive weights summing to one.
pub fn random_alphas<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut a: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let rest: f64 = a[..n - 1].iter().sum();
    a[n - 1] = 1.0 - rest;
    a
}

/// `y = u²`, `u ~ N(mean, 1)`.
pub fn square_model(mean: f64) -> StochasticModel {
    StochasticModel::noiseless(
        "square",
        1,
        Arc::new(|u: &DVector<f64>| u.map(|x| x * x)),
        GaussianPrior::diagonal(&[mean], &[1.0]).unwrap(),
    )
    .unwrap()
}

/// `y = c·u + u·v`, `u, v ~ N(0, 1)`.
pub fn product_model(c: f64) -> StochasticModel {
    let pi: MatrixMap = Arc::new(|u: &DVector<f64>| DMatrix::from_element(1, 1, u[0]));
    StochasticModel::multiplicative(
        "product",
        1,
        Arc::new(move |u: &DVector<f64>| u * c),
        pi,
        GaussianPrior::diagonal(&[0.0], &[1.0]).unwrap(),
        GaussianPrior::diagonal(&[0.0], &[1.0]).unwrap(),
    )
    .unwrap()
}

/// Random multiplicative model `y = f(u) + π(u) v` with smooth nonlinear
/// `f` and `π`, `n_u = 2`, `n_y = 2`, `n_v = 2`.
pub fn random_multiplicative<R: Rng>(rng: &mut R) -> StochasticModel {
    let c: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cf = c.clone();
    let f = Arc::new(move |u: &DVector<f64>| {
        DVector::from_vec(vec![
            cf[0] * u[0] + cf[1] * u[1] * u[1],
            cf[2] * (u[0] * u[1]) + cf[3] * u[1].sin(),
        ])
    });
    let cp = c.clone();
    let pi: MatrixMap = Arc::new(move |u: &DVector<f64>| {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                1.0 + cp[4] * u[0],
                cp[5] * u[1],
                cp[6] * u[0] * u[1],
                0.5 + cp[7] * u[1],
            ],
        )
    });
    let mean = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let prior_u = GaussianPrior::new(DVector::from_row_slice(&mean), random_spd(rng, 2, 10.0)).unwrap();
    let prior_v = GaussianPrior::centered(random_spd(rng, 2, 10.0)).unwrap();
    StochasticModel::multiplicative("random_mult", 2, f, pi, prior_u, prior_v).unwrap()
}

/// Affine map with additive noise.
pub fn linear_additive() -> StochasticModel {
    let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.3, 0.0, 4.0]);
    StochasticModel::additive(
        "linear",
        2,
        Arc::new(move |u: &DVector<f64>| &a * u + DVector::from_vec(vec![7.0, -3.0])),
        GaussianPrior::diagonal(&[1.0, 2.0, 3.0], &[1.0, 0.5, 2.0]).unwrap(),
        GaussianPrior::diagonal(&[0.0, 0.0], &[0.3, 0.1]).unwrap(),
    )
    .unwrap()
}

/// Affine map with a constant noise gain.
pub fn linear_multiplicative() -> StochasticModel {
    StochasticModel::multiplicative(
        "linear_constant_gain",
        2,
        Arc::new(|u: &DVector<f64>| DVector::from_vec(vec![2.0 * u[0] - u[1], u[1] + 1.0])),
        Arc::new(|_u: &DVector<f64>| DMatrix::from_row_slice(2, 1, &[0.5, -1.5])),
        GaussianPrior::diagonal(&[0.0, 1.0], &[1.0, 2.0]).unwrap(),
        GaussianPrior::diagonal(&[0.0], &[0.7]).unwrap(),
    )
    .unwrap()
}

/// Upper-triangle correlations of a random positive definite correlation
/// matrix, row-major.
pub fn random_correlations<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let c = random_spd(rng, n, 10.0);
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt());
        }
    }
    out
}
