//! Seeded Gaussian sampling and single-pass, mergeable moment estimation.
//!
//! Every per-sample quantity the MoN formulas need is stacked into one
//! vector `[u; v; f(u); g(u,v); vec π(u); γ(v); x]` and a Welford-style
//! co-moment matrix of it is maintained. `x` is the regression basis: the
//! standard normals `z` behind `u = μ + L z` when the prior covariance is
//! nonsingular, otherwise `u` itself. Regressing on `z` gives the same
//! residual as regressing on `u` without squaring the conditioning of an
//! ill-scaled input covariance. Chunk accumulators are merged
//! with the pairwise (Chan et al.) update, so chunks can be built in
//! parallel and combined in a fixed order.
//!
//! Sampling is split into chunks of [`CHUNK_SIZE`] draws; chunk `c` uses
//! ChaCha8 stream `c` of the run seed, which makes every run bit-exact for
//! a given `(seed, n)` no matter how many threads build the chunks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{MonError, Result};
use crate::linalg::{max_asymmetry, psd_factor, symmetrize};
use crate::models::{Evaluation, NoiseForm, StochasticModel};

/// Draws per chunk; part of the reproducibility contract.
pub const CHUNK_SIZE: usize = 1 << 14;

/// Default Monte Carlo sample count.
pub const DEFAULT_SAMPLES: usize = 1_000_000;

/// Multivariate normal distribution `N(mean, cov)`.
///
/// Keeps a square root `L` of the covariance (`L Lᵀ = cov`) that is used
/// for sampling. The root is a Cholesky factor for freshly built priors and
/// the mapped factor for priors produced by an affine change of units, so
/// both priors turn the same standard-normal draws into corresponding
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
    full_rank: bool,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(MonError::DimensionMismatch(format!(
                "prior mean has {} entries, covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(MonError::InvalidParameter("non-finite prior".into()));
        }
        let asym = max_asymmetry(&cov);
        if asym != 0.0 {
            return Err(MonError::NotSymmetric(format!("prior covariance asymmetry {asym:e}")));
        }
        let factor = psd_factor(&cov)?;
        let full_rank = cov.clone().cholesky().is_some();
        Ok(Self {
            mean,
            cov,
            factor,
            full_rank,
        })
    }

    pub fn diagonal(mean: &[f64], variances: &[f64]) -> Result<Self> {
        let cov = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
        Self::new(DVector::from_column_slice(mean), cov)
    }

    /// Zero-mean prior with covariance `cov`.
    pub fn centered(cov: DMatrix<f64>) -> Result<Self> {
        Self::new(DVector::zeros(cov.nrows()), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Whether the covariance is nonsingular, so draws can be whitened.
    pub fn is_full_rank(&self) -> bool {
        self.full_rank
    }

    /// `L⁻¹ (x − mean)`; `None` for singular priors.
    pub fn whiten(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        if !self.full_rank {
            return None;
        }
        self.factor.clone().lu().solve(&(x - &self.mean))
    }

    /// Same mean, covariance multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(MonError::InvalidParameter(format!(
                "covariance scale must be positive, got {alpha}"
            )));
        }
        Self::new(self.mean.clone(), &self.cov * alpha)
    }

    /// Distribution of `s_inv · (x − offset)` for `x` drawn from `self`.
    pub(crate) fn affine_image(&self, s_inv: &DMatrix<f64>, offset: &DVector<f64>) -> Self {
        Self {
            mean: s_inv * (&self.mean - offset),
            cov: symmetrize(&(s_inv * &self.cov * s_inv.transpose())),
            factor: s_inv * &self.factor,
            full_rank: self.full_rank,
        }
    }

    /// Writes one draw into `out`, consuming `dim()` standard normals.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut DVector<f64>) {
        let mut z = DVector::zeros(self.dim());
        self.draw_with_normals(rng, &mut z, out);
    }

    /// As [`draw_into`](Self::draw_into), also returning the normals in `z`.
    pub fn draw_with_normals<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut DVector<f64>, out: &mut DVector<f64>) {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        out.copy_from(&self.mean);
        out.gemv(1.0, &self.factor, z, 1.0);
    }
}

/// RNG for chunk `chunk` of a run seeded with `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

fn chunk_count(n: usize) -> usize {
    n.div_ceil(CHUNK_SIZE)
}

fn chunk_len(n: usize, chunk: usize) -> usize {
    CHUNK_SIZE.min(n - chunk * CHUNK_SIZE)
}

/// `n` i.i.d. draws from `prior`, one per column.
pub fn sample_gaussian(prior: &GaussianPrior, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(MonError::InvalidParameter("sample count must be >= 1".into()));
    }
    let mut out = DMatrix::zeros(prior.dim(), n);
    let mut draw = DVector::zeros(prior.dim());
    for chunk in 0..chunk_count(n) {
        let mut rng = chunk_rng(seed, chunk as u64);
        for j in 0..chunk_len(n, chunk) {
            prior.draw_into(&mut rng, &mut draw);
            out.set_column(chunk * CHUNK_SIZE + j, &draw);
        }
    }
    Ok(out)
}

/// Joint input/noise draws for a model; columns are samples.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    /// Global index of the first column within its run.
    pub first_index: u64,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Standard normals behind `u`, when known.
    pub z: Option<DMatrix<f64>>,
}

impl SampleBatch {
    pub fn new(first_index: u64, u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(MonError::DimensionMismatch(format!(
                "batch has {} input and {} noise columns",
                u.ncols(),
                v.ncols()
            )));
        }
        Ok(Self {
            first_index,
            u,
            v,
            z: None,
        })
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws chunk `chunk` (of a run with `n` total samples) for `model`.
/// Each sample consumes `n_u` normals for the input, then `n_v` for the
/// noise.
pub fn sample_model_chunk(model: &StochasticModel, n: usize, seed: u64, chunk: usize) -> SampleBatch {
    let len = chunk_len(n, chunk);
    let prior_u = model.prior_u();
    let mut u = DMatrix::zeros(prior_u.dim(), len);
    let mut z = DMatrix::zeros(prior_u.dim(), len);
    let n_v = model.n_v();
    let mut v = DMatrix::zeros(n_v, len);
    let mut du = DVector::zeros(prior_u.dim());
    let mut dz = DVector::zeros(prior_u.dim());
    let mut dv = DVector::zeros(n_v);
    let mut rng = chunk_rng(seed, chunk as u64);
    for j in 0..len {
        prior_u.draw_with_normals(&mut rng, &mut dz, &mut du);
        u.set_column(j, &du);
        z.set_column(j, &dz);
        if let Some(prior_v) = model.prior_v() {
            prior_v.draw_into(&mut rng, &mut dv);
            v.set_column(j, &dv);
        }
    }
    SampleBatch {
        first_index: (chunk * CHUNK_SIZE) as u64,
        u,
        v,
        z: Some(z),
    }
}

/// Block sizes of the stacked per-sample vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_u: usize,
    pub n_v: usize,
    pub n_y: usize,
    pub n_gamma: usize,
}

impl Layout {
    fn u(&self) -> std::ops::Range<usize> {
        0..self.n_u
    }
    fn v(&self) -> std::ops::Range<usize> {
        let s = self.n_u;
        s..s + self.n_v
    }
    fn f(&self) -> std::ops::Range<usize> {
        let s = self.n_u + self.n_v;
        s..s + self.n_y
    }
    fn g(&self) -> std::ops::Range<usize> {
        let s = self.n_u + self.n_v + self.n_y;
        s..s + self.n_y
    }
    fn pi(&self) -> std::ops::Range<usize> {
        let s = self.n_u + self.n_v + 2 * self.n_y;
        s..s + self.n_y * self.n_gamma
    }
    fn gamma(&self) -> std::ops::Range<usize> {
        let s = self.n_u + self.n_v + 2 * self.n_y + self.n_y * self.n_gamma;
        s..s + self.n_gamma
    }
    fn x(&self) -> std::ops::Range<usize> {
        let s = self.n_u + self.n_v + 2 * self.n_y + self.n_y * self.n_gamma + self.n_gamma;
        s..s + self.n_u
    }
    pub fn width(&self) -> usize {
        2 * self.n_u + self.n_v + 2 * self.n_y + self.n_y * self.n_gamma + self.n_gamma
    }
}

/// Streaming co-moment accumulator for one model shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    layout: Layout,
    form: NoiseForm,
    gamma_cov: Option<DMatrix<f64>>,
    whitened: bool,
    seed: u64,
    n: u64,
    mean: DVector<f64>,
    comoment: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn for_model(model: &StochasticModel, seed: u64) -> Self {
        let layout = model.layout();
        let width = layout.width();
        Self {
            layout,
            form: model.form(),
            gamma_cov: model.gamma_cov().cloned(),
            whitened: model.prior_u().is_full_rank(),
            seed,
            n: 0,
            mean: DVector::zeros(width),
            comoment: DMatrix::zeros(width, width),
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    fn stack(&self, u: &DVector<f64>, v: &DVector<f64>, x: &DVector<f64>, e: &Evaluation) -> DVector<f64> {
        let l = &self.layout;
        let mut z = DVector::zeros(l.width());
        z.rows_range_mut(l.u()).copy_from(u);
        z.rows_range_mut(l.x()).copy_from(x);
        z.rows_range_mut(l.v()).copy_from(v);
        z.rows_range_mut(l.f()).copy_from(&e.f);
        z.rows_range_mut(l.g()).copy_from(&e.g);
        if let (Some(pi), Some(gamma)) = (&e.pi, &e.gamma) {
            z.rows_range_mut(l.pi()).copy_from_slice(pi.as_slice());
            z.rows_range_mut(l.gamma()).copy_from(gamma);
        }
        z
    }

    /// Welford rank-one update with one stacked sample.
    fn push(&mut self, z: &DVector<f64>) {
        self.n += 1;
        let n = self.n as f64;
        let delta = z - &self.mean;
        self.mean.axpy(1.0 / n, &delta, 1.0);
        self.comoment.ger((n - 1.0) / n, &delta, &delta, 1.0);
    }

    /// Evaluates the model on every sample of `batch` and folds the results in.
    pub fn accumulate(&mut self, model: &StochasticModel, batch: &SampleBatch) -> Result<()> {
        let l = model.layout();
        if l != self.layout
            || batch.u.nrows() != l.n_u
            || batch.v.nrows() != l.n_v
            || batch.z.as_ref().is_some_and(|z| z.shape() != batch.u.shape())
        {
            return Err(MonError::DimensionMismatch(format!(
                "batch {}+{} rows does not match model layout {:?}",
                batch.u.nrows(),
                batch.v.nrows(),
                l
            )));
        }
        let whitener = match (&batch.z, self.whitened) {
            (None, true) => Some(model.prior_u().factor().clone().lu()),
            _ => None,
        };
        for j in 0..batch.len() {
            let u = batch.u.column(j).clone_owned();
            let v = batch.v.column(j).clone_owned();
            let x = match (&batch.z, &whitener) {
                _ if !self.whitened => u.clone(),
                (Some(z), _) => z.column(j).clone_owned(),
                (None, Some(lu)) => lu
                    .solve(&(&u - model.prior_u().mean()))
                    .ok_or(MonError::NotPositiveDefinite("input prior factor".into()))?,
                (None, None) => unreachable!("whitener built for whitened accumulators"),
            };
            let eval = model.evaluate(&u, &v);
            let z = self.stack(&u, &v, &x, &eval);
            if z.iter().any(|x| !x.is_finite()) {
                return Err(MonError::NonFinite {
                    index: batch.first_index + j as u64,
                });
            }
            self.push(&z);
        }
        Ok(())
    }

    /// Pairwise merge; equivalent to accumulating both sample sets in turn.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.layout != other.layout || self.form != other.form || self.whitened != other.whitened {
            return Err(MonError::DimensionMismatch(format!(
                "cannot merge accumulators with layouts {:?} and {:?}",
                self.layout, other.layout
            )));
        }
        if other.n == 0 {
            return Ok(self.clone());
        }
        if self.n == 0 {
            return Ok(other.clone());
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        let mut merged = self.clone();
        merged.n = self.n + other.n;
        merged.mean = &self.mean + &delta * (nb / n);
        merged.comoment = &self.comoment + &other.comoment;
        merged.comoment.ger(na * nb / n, &delta, &delta, 1.0);
        Ok(merged)
    }

    /// Finalizes into unbiased (`1/(n−1)`) moment blocks.
    pub fn finalize(&self) -> Result<MomentEstimates> {
        if self.n < 2 {
            return Err(MonError::InsufficientSamples(self.n));
        }
        let l = self.layout;
        let cov = symmetrize(&(&self.comoment / (self.n as f64 - 1.0)));
        let block = |r: std::ops::Range<usize>, c: std::ops::Range<usize>| {
            cov.view((r.start, c.start), (r.len(), c.len())).clone_owned()
        };
        let mean = |r: std::ops::Range<usize>| self.mean.rows_range(r).clone_owned();

        let sigma_uu = block(l.u(), l.u());
        let sigma_vv = block(l.v(), l.v());
        let sigma_ff = block(l.f(), l.f());
        let sigma_fu = block(l.f(), l.u());
        let sigma_gg_sampled = block(l.g(), l.g());
        let sigma_gu_sampled = block(l.g(), l.u());
        let sigma_xx = block(l.x(), l.x());
        let sigma_fx = block(l.f(), l.x());
        let sigma_gx_sampled = block(l.g(), l.x());

        let (sigma_gg, sigma_gu, sigma_gx, sigma_gamma_gamma, pi_bar, m_pi_tilde) =
            if self.form == NoiseForm::Multiplicative {
                let sgg = self.gamma_cov.clone().unwrap_or_else(|| block(l.gamma(), l.gamma()));
                let pi_bar = DMatrix::from_column_slice(l.n_y, l.n_gamma, mean(l.pi()).as_slice());
                let pi_cov = block(l.pi(), l.pi());
                let mut m = DMatrix::zeros(l.n_y, l.n_y);
                for a in 0..l.n_y {
                    for b in 0..l.n_y {
                        let mut acc = 0.0;
                        for k in 0..l.n_gamma {
                            for q in 0..l.n_gamma {
                                acc += pi_cov[(k * l.n_y + a, q * l.n_y + b)] * sgg[(k, q)];
                            }
                        }
                        m[(a, b)] = acc;
                    }
                }
                let m = symmetrize(&m);
                let structural = symmetrize(&(&sigma_ff + &pi_bar * &sgg * pi_bar.transpose() + &m));
                (
                    structural,
                    sigma_fu.clone(),
                    sigma_fx.clone(),
                    Some(sgg),
                    Some(pi_bar),
                    Some(m),
                )
            } else {
                (
                    sigma_gg_sampled.clone(),
                    sigma_gu_sampled,
                    sigma_gx_sampled,
                    None,
                    None,
                    None,
                )
            };

        Ok(MomentEstimates {
            form: self.form,
            mean_u: mean(l.u()),
            mean_f: mean(l.f()),
            mean_g: mean(l.g()),
            sigma_uu,
            sigma_vv,
            sigma_ff,
            sigma_fu,
            sigma_gg,
            sigma_gu,
            sigma_gg_sampled,
            sigma_xx,
            sigma_fx,
            sigma_gx,
            sigma_gamma_gamma,
            pi_bar,
            m_pi_tilde,
            n_samples: self.n,
            seed: self.seed,
        })
    }
}

/// Merges accumulators with a fixed pairwise tree over their order.
pub fn merge_all(mut accs: Vec<MomentAccumulator>) -> Result<MomentAccumulator> {
    if accs.is_empty() {
        return Err(MonError::InsufficientSamples(0));
    }
    while accs.len() > 1 {
        let mut next = Vec::with_capacity(accs.len().div_ceil(2));
        let mut it = accs.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.merge(&b)?),
                None => next.push(a),
            }
        }
        accs = next;
    }
    Ok(accs.pop().expect("non-empty"))
}

/// One accumulator per chunk, in chunk order.
pub fn accumulate_chunks(model: &StochasticModel, n: usize, seed: u64) -> Result<Vec<MomentAccumulator>> {
    if n == 0 {
        return Err(MonError::InvalidParameter("sample count must be >= 1".into()));
    }
    (0..chunk_count(n))
        .into_par_iter()
        .map(|chunk| {
            let batch = sample_model_chunk(model, n, seed, chunk);
            let mut acc = MomentAccumulator::for_model(model, seed);
            acc.accumulate(model, &batch)?;
            Ok(acc)
        })
        .collect()
}

/// Samples `n` draws of `model` with `seed` and returns the finalized moments.
pub fn estimate_moments(model: &StochasticModel, n: usize, seed: u64) -> Result<MomentEstimates> {
    merge_all(accumulate_chunks(model, n, seed)?)?.finalize()
}

/// Finalized moment blocks.
///
/// For multiplicative models `sigma_gg` and `sigma_gu` are assembled from
/// their structural identities (`Σff + π̄Σγγπ̄ᵀ + E[π̃Σγγπ̃ᵀ]` and `Σfu`),
/// which integrate the independent noise out exactly; the plain sample
/// covariance of `g` is kept in `sigma_gg_sampled` for cross-checking. For
/// the other forms both are the sample covariance of `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub form: NoiseForm,
    pub mean_u: DVector<f64>,
    pub mean_f: DVector<f64>,
    pub mean_g: DVector<f64>,
    pub sigma_uu: DMatrix<f64>,
    pub sigma_vv: DMatrix<f64>,
    pub sigma_ff: DMatrix<f64>,
    pub sigma_fu: DMatrix<f64>,
    pub sigma_gg: DMatrix<f64>,
    pub sigma_gu: DMatrix<f64>,
    pub sigma_gg_sampled: DMatrix<f64>,
    /// Covariance of the regression basis `x` (see the module docs); the
    /// residual is computed from `sigma_xx`, `sigma_fx` and `sigma_gx`.
    pub sigma_xx: DMatrix<f64>,
    pub sigma_fx: DMatrix<f64>,
    pub sigma_gx: DMatrix<f64>,
    pub sigma_gamma_gamma: Option<DMatrix<f64>>,
    pub pi_bar: Option<DMatrix<f64>>,
    /// `E[π̃(u) Σγγ π̃(u)ᵀ]`.
    pub m_pi_tilde: Option<DMatrix<f64>>,
    /// Zero for analytic moments.
    pub n_samples: u64,
    pub seed: u64,
}

impl MomentEstimates {
    /// Exact moments of a noiseless map `y = f(u)`.
    pub fn analytic_noiseless(
        mean_u: DVector<f64>,
        mean_f: DVector<f64>,
        sigma_uu: DMatrix<f64>,
        sigma_ff: DMatrix<f64>,
        sigma_fu: DMatrix<f64>,
    ) -> Result<Self> {
        let (n_u, n_y) = (mean_u.len(), mean_f.len());
        if sigma_uu.shape() != (n_u, n_u) || sigma_ff.shape() != (n_y, n_y) || sigma_fu.shape() != (n_y, n_u) {
            return Err(MonError::DimensionMismatch("analytic moment blocks".into()));
        }
        Ok(Self {
            form: NoiseForm::Noiseless,
            mean_g: mean_f.clone(),
            mean_u,
            mean_f,
            sigma_vv: DMatrix::zeros(0, 0),
            sigma_gg: sigma_ff.clone(),
            sigma_gg_sampled: sigma_ff.clone(),
            sigma_gu: sigma_fu.clone(),
            sigma_xx: sigma_uu.clone(),
            sigma_fx: sigma_fu.clone(),
            sigma_gx: sigma_fu.clone(),
            sigma_uu,
            sigma_ff,
            sigma_fu,
            sigma_gamma_gamma: None,
            pi_bar: None,
            m_pi_tilde: None,
            n_samples: 0,
            seed: 0,
        })
    }

    pub fn n_u(&self) -> usize {
        self.mean_u.len()
    }

    pub fn n_y(&self) -> usize {
        self.mean_g.len()
    }

    /// Moments of `y' = s_inv · (y − offset)`, the same run expressed in
    /// different output units.
    pub fn transform_output(&self, s_inv: &DMatrix<f64>, offset: &DVector<f64>) -> Result<Self> {
        let n_y = self.n_y();
        if s_inv.shape() != (n_y, n_y) || offset.len() != n_y {
            return Err(MonError::DimensionMismatch("output transform".into()));
        }
        let congruent = |m: &DMatrix<f64>| symmetrize(&(s_inv * m * s_inv.transpose()));
        Ok(Self {
            form: self.form,
            mean_u: self.mean_u.clone(),
            mean_f: s_inv * (&self.mean_f - offset),
            mean_g: s_inv * (&self.mean_g - offset),
            sigma_uu: self.sigma_uu.clone(),
            sigma_vv: self.sigma_vv.clone(),
            sigma_ff: congruent(&self.sigma_ff),
            sigma_fu: s_inv * &self.sigma_fu,
            sigma_gg: congruent(&self.sigma_gg),
            sigma_gu: s_inv * &self.sigma_gu,
            sigma_gg_sampled: congruent(&self.sigma_gg_sampled),
            sigma_xx: self.sigma_xx.clone(),
            sigma_fx: s_inv * &self.sigma_fx,
            sigma_gx: s_inv * &self.sigma_gx,
            sigma_gamma_gamma: self.sigma_gamma_gamma.clone(),
            pi_bar: self.pi_bar.as_ref().map(|p| s_inv * p),
            m_pi_tilde: self.m_pi_tilde.as_ref().map(|m| congruent(m)),
            n_samples: self.n_samples,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::StochasticModel;
    use std::sync::Arc;

    fn scalar_identity(var: f64) -> StochasticModel {
        StochasticModel::noiseless(
            "identity",
            1,
            Arc::new(|u: &DVector<f64>| u.clone()),
            GaussianPrior::diagonal(&[0.0], &[var]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn sample_mean_close_to_zero() {
        let prior = GaussianPrior::diagonal(&[0.0], &[1.0]).unwrap();
        let s = sample_gaussian(&prior, 100_000, 11).unwrap();
        assert!(s.row(0).mean().abs() < 0.02);
    }

    #[test]
    fn zero_covariance_samples_equal_mean() {
        let prior = GaussianPrior::new(DVector::from_vec(vec![3.0, -1.0]), DMatrix::zeros(2, 2)).unwrap();
        let s = sample_gaussian(&prior, 3, 5).unwrap();
        for j in 0..3 {
            assert_eq!(s[(0, j)], 3.0);
            assert_eq!(s[(1, j)], -1.0);
        }
    }

    #[test]
    fn prior_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(GaussianPrior::centered(asym), Err(MonError::NotSymmetric(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(GaussianPrior::centered(indefinite), Err(MonError::NotPsd(_))));
        assert!(GaussianPrior::new(DVector::zeros(2), DMatrix::identity(3, 3)).is_err());
        assert!(sample_gaussian(&GaussianPrior::diagonal(&[0.0], &[1.0]).unwrap(), 0, 1).is_err());
    }

    #[test]
    fn two_sample_unbiased_variance() {
        let model = scalar_identity(1.0);
        let batch = SampleBatch::new(0, DMatrix::from_row_slice(1, 2, &[0.0, 2.0]), DMatrix::zeros(0, 2)).unwrap();
        let mut acc = MomentAccumulator::for_model(&model, 0);
        acc.accumulate(&model, &batch).unwrap();
        let est = acc.finalize().unwrap();
        assert_eq!(est.sigma_uu[(0, 0)], 2.0);
        assert_eq!(est.sigma_gu[(0, 0)], 2.0);
    }

    #[test]
    fn finalize_needs_two_samples() {
        let model = scalar_identity(1.0);
        let mut acc = MomentAccumulator::for_model(&model, 0);
        assert!(matches!(acc.finalize(), Err(MonError::InsufficientSamples(0))));
        let batch = SampleBatch::new(0, DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(0, 1)).unwrap();
        acc.accumulate(&model, &batch).unwrap();
        assert!(matches!(acc.finalize(), Err(MonError::InsufficientSamples(1))));
    }

    #[test]
    fn constant_model_has_exactly_zero_variance() {
        let model = StochasticModel::noiseless(
            "constant",
            1,
            Arc::new(|_u: &DVector<f64>| DVector::from_element(1, 4.25)),
            GaussianPrior::diagonal(&[0.0], &[1.0]).unwrap(),
        )
        .unwrap();
        let est = estimate_moments(&model, 50_000, 3).unwrap();
        assert_eq!(est.sigma_gg[(0, 0)], 0.0);
        assert_eq!(est.sigma_gu[(0, 0)], 0.0);
    }

    #[test]
    fn identity_model_moments() {
        let est = estimate_moments(&scalar_identity(1.0), 100_000, 9).unwrap();
        assert!((est.sigma_uu[(0, 0)] - 1.0).abs() < 0.02);
        assert!((est.sigma_gu[(0, 0)] - 1.0).abs() < 0.02);
    }

    #[test]
    fn non_finite_output_reports_index() {
        let model = StochasticModel::noiseless(
            "log",
            1,
            Arc::new(|u: &DVector<f64>| u.map(f64::ln)),
            GaussianPrior::diagonal(&[0.0], &[1.0]).unwrap(),
        )
        .unwrap();
        let batch = SampleBatch::new(
            100,
            DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]),
            DMatrix::zeros(0, 3),
        )
        .unwrap();
        let mut acc = MomentAccumulator::for_model(&model, 0);
        match acc.accumulate(&model, &batch) {
            Err(MonError::NonFinite { index }) => assert_eq!(index, 102),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn batches_without_normals_are_whitened_from_u() {
        let model = StochasticModel::noiseless(
            "quadratic",
            1,
            Arc::new(|u: &DVector<f64>| DVector::from_element(1, u[0] * u[1] + u[0])),
            GaussianPrior::new(
                DVector::from_vec(vec![3.0, -1.0]),
                DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            )
            .unwrap(),
        )
        .unwrap();
        let with_z = sample_model_chunk(&model, 5_000, 4, 0);
        let without_z = SampleBatch::new(0, with_z.u.clone(), with_z.v.clone()).unwrap();
        let mut a = MomentAccumulator::for_model(&model, 4);
        let mut b = MomentAccumulator::for_model(&model, 4);
        a.accumulate(&model, &with_z).unwrap();
        b.accumulate(&model, &without_z).unwrap();
        let (a, b) = (a.finalize().unwrap(), b.finalize().unwrap());
        assert!((&a.sigma_xx - &b.sigma_xx).amax() < 1e-12);
        assert!((&a.sigma_fx - &b.sigma_fx).amax() < 1e-12);
        assert_eq!(a.sigma_uu, b.sigma_uu);
    }

    #[test]
    fn singular_prior_regresses_on_u() {
        let prior =
            GaussianPrior::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
        assert!(!prior.is_full_rank());
        assert!(prior.whiten(&DVector::zeros(2)).is_none());
        let model = StochasticModel::noiseless(
            "sum",
            1,
            Arc::new(|u: &DVector<f64>| DVector::from_element(1, u.sum())),
            prior,
        )
        .unwrap();
        let est = estimate_moments(&model, 10_000, 2).unwrap();
        assert_eq!(est.sigma_xx, est.sigma_uu);
        assert_eq!(est.sigma_fx, est.sigma_fu);
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let model = scalar_identity(2.0);
        let accs = accumulate_chunks(&model, 5_000, 1).unwrap();
        let empty = MomentAccumulator::for_model(&model, 1);
        assert_eq!(accs[0].merge(&empty).unwrap(), accs[0]);
        assert_eq!(empty.merge(&accs[0]).unwrap(), accs[0]);
    }

    #[test]
    fn merge_rejects_mismatched_layouts() {
        let a = MomentAccumulator::for_model(&scalar_identity(1.0), 0);
        let two_d = StochasticModel::noiseless(
            "id2",
            2,
            Arc::new(|u: &DVector<f64>| u.clone()),
            GaussianPrior::diagonal(&[0.0, 0.0], &[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let b = MomentAccumulator::for_model(&two_d, 0);
        assert!(matches!(a.merge(&b), Err(MonError::DimensionMismatch(_))));
    }
}
