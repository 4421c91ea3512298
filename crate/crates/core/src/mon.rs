//! Measures of nonlinearity computed from [`MomentEstimates`].
//!
//! The MoN of `y = g(u, v)` is the square root of the minimal weighted mean
//! square error between `g` and its best approximation `A u + b + n`. With
//! `R = Σff − Σfu Σuu⁻¹ Σuf` it equals
//!
//! * `√tr(W R)` for noiseless and additive models, and
//! * `√tr(W (R + E[π̃ Σγγ π̃ᵀ]))` for multiplicative models.
//!
//! `W = I` gives the original MSE-based MoN. Weights with
//! `tr(W Σgg) = 1` built from the base-unit covariance give a MoN that is
//! both unitless and bounded by one; [`weight_diag`], [`weight_full`] and
//! [`weight_family`] construct them.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{MonError, Result};
use crate::linalg::{clamp_psd, sorted_symmetric_eigen, spd_solve, symmetrize, trace_of_product, SolveRoute};
use crate::models::NoiseForm;
use crate::moments::MomentEstimates;

/// Optimal affine part `A u + b` of the best linear approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub route: SolveRoute,
}

impl LinearFit {
    pub fn predict(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.a * u + &self.b
    }
}

/// `A = Σgu Σuu⁻¹`, `b = E[y] − A E[u]`, solved through a Cholesky
/// factorization of `Σuu` (pseudo-inverse when that fails).
pub fn best_linear_fit(est: &MomentEstimates) -> Result<LinearFit> {
    let (x, route) = spd_solve(&est.sigma_uu, &est.sigma_gu.transpose())?;
    let a = x.transpose();
    let b = &est.mean_g - &a * &est.mean_u;
    Ok(LinearFit { a, b, route })
}

/// Off-diagonal entries of `Y` in the eigenbasis of the base-unit output
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum OffDiagonal {
    Zero,
    /// `Y_ij` given directly (diagonal ignored).
    Entries(DMatrix<f64>),
    /// `Y_ij = ρ_ij √(Y_ii Y_jj)` (diagonal ignored).
    Correlations(DMatrix<f64>),
}

impl OffDiagonal {
    fn fill(&self, y: &mut DMatrix<f64>) -> Result<()> {
        let n = y.nrows();
        let src = match self {
            OffDiagonal::Zero => return Ok(()),
            OffDiagonal::Entries(m) | OffDiagonal::Correlations(m) => m,
        };
        if src.shape() != (n, n) {
            return Err(MonError::DimensionMismatch(format!(
                "off-diagonal spec is {}x{}, expected {n}x{n}",
                src.nrows(),
                src.ncols()
            )));
        }
        let asym = crate::linalg::max_asymmetry(src);
        if asym != 0.0 {
            return Err(MonError::InvalidParameter(format!(
                "off-diagonal spec is not symmetric ({asym:e})"
            )));
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    y[(i, j)] = match self {
                        OffDiagonal::Correlations(_) => src[(i, j)] * (y[(i, i)] * y[(j, j)]).sqrt(),
                        _ => src[(i, j)],
                    };
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightProvenance {
    Identity,
    LegacyNormalized,
    Diag,
    Full,
    Family {
        alphas: Vec<f64>,
        off_diagonal: OffDiagonal,
    },
}

impl WeightProvenance {
    /// Whether the weight was built to satisfy `tr(W Σgg) = 1` in base units.
    pub fn is_unitless(&self) -> bool {
        !matches!(self, WeightProvenance::Identity | WeightProvenance::LegacyNormalized)
    }

    pub fn label(&self) -> &'static str {
        match self {
            WeightProvenance::Identity => "identity",
            WeightProvenance::LegacyNormalized => "legacy_normalized",
            WeightProvenance::Diag => "diag",
            WeightProvenance::Full => "full",
            WeightProvenance::Family { .. } => "family",
        }
    }
}

impl fmt::Display for WeightProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightProvenance::Family { alphas, off_diagonal } => {
                let list: Vec<String> = alphas.iter().map(|a| format!("{a}")).collect();
                let off = match off_diagonal {
                    OffDiagonal::Zero => "",
                    OffDiagonal::Entries(_) => ";entries",
                    OffDiagonal::Correlations(_) => ";correlations",
                };
                write!(f, "family({}{off})", list.join(" "))
            }
            other => f.write_str(other.label()),
        }
    }
}

/// Symmetric positive definite weight of the norm `‖e‖²_W = eᵀ W e`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
    provenance: WeightProvenance,
}

impl WeightMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn provenance(&self) -> &WeightProvenance {
        &self.provenance
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

fn output_std(est: &MomentEstimates) -> Result<DVector<f64>> {
    let d = est.sigma_gg.diagonal();
    if let Some(i) = d.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(MonError::DegenerateOutput(i));
    }
    Ok(d.map(f64::sqrt))
}

/// `W = I`: the original MSE-based MoN.
pub fn weight_identity(n_y: usize) -> WeightMatrix {
    WeightMatrix {
        w: DMatrix::identity(n_y, n_y),
        provenance: WeightProvenance::Identity,
    }
}

/// `W = I / √tr(Σgg)` as in the legacy normalized definition.
///
/// MoN values computed with this weight are `M(I) / √tr(Σgg)`, the
/// normalized original MoN, evaluated directly rather than through the
/// stored matrix.
pub fn weight_legacy(est: &MomentEstimates) -> Result<WeightMatrix> {
    let trace = est.sigma_gg.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(MonError::DegenerateOutput(0));
    }
    let n = est.n_y();
    Ok(WeightMatrix {
        w: DMatrix::identity(n, n) / trace.sqrt(),
        provenance: WeightProvenance::LegacyNormalized,
    })
}

/// `W = diag(diag(Σgg))⁻¹ / n_y`.
pub fn weight_diag(est: &MomentEstimates) -> Result<WeightMatrix> {
    output_std(est)?;
    let n = est.n_y() as f64;
    Ok(WeightMatrix {
        w: DMatrix::from_diagonal(&est.sigma_gg.diagonal().map(|v| 1.0 / (n * v))),
        provenance: WeightProvenance::Diag,
    })
}

/// `W = Σgg⁻¹ / n_y`.
pub fn weight_full(est: &MomentEstimates) -> Result<WeightMatrix> {
    let n = est.n_y();
    let chol = est.sigma_gg.clone().cholesky().ok_or(MonError::SingularOutput)?;
    let inv = symmetrize(&chol.inverse());
    Ok(WeightMatrix {
        w: inv / n as f64,
        provenance: WeightProvenance::Full,
    })
}

/// A member `W = S_y⁻¹ V Y Vᵀ S_y⁻¹` of the complete normalized family.
///
/// `V Λ Vᵀ` is the eigendecomposition of the base-unit output covariance
/// (eigenvalues descending), `[Y]_ii = α_i/λ_i`, and the off-diagonal
/// entries of `Y` come from `off_diagonal`.
pub fn weight_family(est: &MomentEstimates, alphas: &[f64], off_diagonal: &OffDiagonal) -> Result<WeightMatrix> {
    let n = est.n_y();
    if alphas.len() != n {
        return Err(MonError::InvalidParameter(format!(
            "{} family weights for {n} outputs",
            alphas.len()
        )));
    }
    if alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(MonError::InvalidParameter(
            "family weights must be strictly positive".into(),
        ));
    }
    let sum: f64 = alphas.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(MonError::InvalidParameter(format!(
            "family weights sum to {sum}, expected 1"
        )));
    }
    let inv_std = output_std(est)?.map(|s| 1.0 / s);
    let d_inv = DMatrix::from_diagonal(&inv_std);
    let base_cov = symmetrize(&(&d_inv * &est.sigma_gg * &d_inv));
    let (lambda, v) = sorted_symmetric_eigen(&base_cov)?;
    if lambda.iter().any(|l| !(*l > 0.0)) {
        return Err(MonError::SingularOutput);
    }
    let mut y = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        alphas.iter().zip(lambda.iter()).map(|(a, l)| a / l),
    ));
    off_diagonal.fill(&mut y)?;
    if y.clone().cholesky().is_none() {
        return Err(MonError::NotPositiveDefinite("family matrix Y".into()));
    }
    let w_base = symmetrize(&(&v * &y * v.transpose()));
    Ok(WeightMatrix {
        w: symmetrize(&(&d_inv * w_base * &d_inv)),
        provenance: WeightProvenance::Family {
            alphas: alphas.to_vec(),
            off_diagonal: off_diagonal.clone(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonKind {
    Orig,
    OrigNormalized,
    Weighted,
}

impl MonKind {
    fn of(provenance: &WeightProvenance) -> Self {
        match provenance {
            WeightProvenance::Identity => MonKind::Orig,
            WeightProvenance::LegacyNormalized => MonKind::OrigNormalized,
            _ => MonKind::Weighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonResult {
    pub value: f64,
    pub kind: MonKind,
    /// `tr(W R)`, the deterministic part.
    pub j_det: f64,
    /// `tr(W E[π̃ Σγγ π̃ᵀ])`; zero without multiplicative noise.
    pub j_sto: f64,
    /// `√tr(W Σgg)`.
    pub bound: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub weight: WeightProvenance,
    /// Summed magnitude of negative eigenvalues removed from `R`.
    pub clamped: f64,
    /// Relative gap between the `Σgg` and `Σff` forms (multiplicative only).
    pub form_discrepancy: Option<f64>,
}

/// The matrix the MoN is actually traced against.
fn effective_weight(est: &MomentEstimates, w: &WeightMatrix) -> Result<DMatrix<f64>> {
    if w.dim() != est.n_y() {
        return Err(MonError::DimensionMismatch(format!(
            "weight is {}x{}, output has {} elements",
            w.dim(),
            w.dim(),
            est.n_y()
        )));
    }
    Ok(match w.provenance {
        WeightProvenance::LegacyNormalized => {
            let trace = est.sigma_gg.trace();
            if !(trace > 0.0) {
                return Err(MonError::DegenerateOutput(0));
            }
            DMatrix::identity(est.n_y(), est.n_y()) / trace
        }
        _ => w.w.clone(),
    })
}

/// `Σff − Σfu Σuu⁻¹ Σuf` before clamping, evaluated in the regression basis.
fn residual(est: &MomentEstimates) -> Result<DMatrix<f64>> {
    let (x, _) = spd_solve(&est.sigma_xx, &est.sigma_fx.transpose())?;
    Ok(symmetrize(&(&est.sigma_ff - &est.sigma_fx * x)))
}

/// `√tr(W Σgg)`. For the legacy normalized weight this is one.
pub fn mon_upper_bound(est: &MomentEstimates, w: &WeightMatrix) -> Result<f64> {
    let weff = effective_weight(est, w)?;
    Ok(trace_of_product(&weff, &est.sigma_gg).max(0.0).sqrt())
}

fn result(est: &MomentEstimates, w: &WeightMatrix, j_det: f64, j_sto: f64, clamped: f64) -> Result<MonResult> {
    Ok(MonResult {
        value: (j_det + j_sto).max(0.0).sqrt(),
        kind: MonKind::of(&w.provenance),
        j_det,
        j_sto,
        bound: mon_upper_bound(est, w)?,
        n_samples: est.n_samples,
        seed: est.seed,
        weight: w.provenance.clone(),
        clamped,
        form_discrepancy: None,
    })
}

/// `M = √tr(W (Σff − Σfu Σuu⁻¹ Σuf))` for noiseless and additive models.
pub fn mon_additive(est: &MomentEstimates, w: &WeightMatrix) -> Result<MonResult> {
    match est.form {
        NoiseForm::Noiseless | NoiseForm::Additive => {}
        other => {
            return Err(MonError::WrongForm {
                expected: "noiseless or additive",
                actual: other.as_str(),
            })
        }
    }
    let weff = effective_weight(est, w)?;
    let (r, clamped) = clamp_psd(&residual(est)?)?;
    let j_det = trace_of_product(&weff, &r).max(0.0);
    result(est, w, j_det, 0.0, clamped)
}

/// `M = √tr(W (Σff − Σfu Σuu⁻¹ Σuf + E[π̃ Σγγ π̃ᵀ]))` for multiplicative models.
///
/// Also evaluates `tr(W (Σgg − Σgu Σuu⁻¹ Σug − π̄ Σγγ π̄ᵀ))` and records the
/// relative gap between the two forms.
pub fn mon_multiplicative(est: &MomentEstimates, w: &WeightMatrix) -> Result<MonResult> {
    if est.form != NoiseForm::Multiplicative {
        return Err(MonError::WrongForm {
            expected: "multiplicative",
            actual: est.form.as_str(),
        });
    }
    let (m_tilde, pi_bar, s_gamma) = match (&est.m_pi_tilde, &est.pi_bar, &est.sigma_gamma_gamma) {
        (Some(m), Some(p), Some(s)) => (m, p, s),
        _ => {
            return Err(MonError::DimensionMismatch(
                "multiplicative moments are missing noise blocks".into(),
            ))
        }
    };
    let weff = effective_weight(est, w)?;
    let raw_r = residual(est)?;
    let (r, clamped_r) = clamp_psd(&raw_r)?;
    let (m, clamped_m) = clamp_psd(m_tilde)?;
    let j_det = trace_of_product(&weff, &r).max(0.0);
    let j_sto = trace_of_product(&weff, &m).max(0.0);

    let (x, _) = spd_solve(&est.sigma_xx, &est.sigma_gx.transpose())?;
    let via_gg = &est.sigma_gg - &est.sigma_gx * x - pi_bar * s_gamma * pi_bar.transpose();
    let via_gg = trace_of_product(&weff, &symmetrize(&via_gg));
    let via_ff = trace_of_product(&weff, &raw_r) + trace_of_product(&weff, &symmetrize(m_tilde));
    let scale = via_ff.abs().max(f64::MIN_POSITIVE);

    let mut out = result(est, w, j_det, j_sto, clamped_r + clamped_m)?;
    out.form_discrepancy = Some((via_gg - via_ff).abs() / scale);
    Ok(out)
}

/// Dispatches on the noise form. General noise has no closed form.
pub fn compute_mon(est: &MomentEstimates, w: &WeightMatrix) -> Result<MonResult> {
    match est.form {
        NoiseForm::Noiseless | NoiseForm::Additive => mon_additive(est, w),
        NoiseForm::Multiplicative => mon_multiplicative(est, w),
        NoiseForm::General => Err(MonError::NoClosedForm),
    }
}
