//! Stochastic transformations `y = g(u, v)` and affine changes of units.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{MonError, Result};
use crate::linalg::is_positive_definite;
use crate::moments::{sample_gaussian, GaussianPrior, Layout, MomentEstimates};

pub type VectorMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixMap = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type JointMap = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Samples used to estimate and remove the mean of a user-supplied γ.
pub const GAMMA_CENTERING_SAMPLES: usize = 100_000;
const GAMMA_CENTERING_SEED: u64 = 0x6761_6d6d_6163_656e;

/// GMTI sensor position `[s_x, s_y, s_z]` in metres.
pub const GMTI_SENSOR: [f64; 3] = [1000.0, 1000.0, 1000.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseForm {
    Noiseless,
    Additive,
    Multiplicative,
    General,
}

impl NoiseForm {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseForm::Noiseless => "noiseless",
            NoiseForm::Additive => "additive",
            NoiseForm::Multiplicative => "multiplicative",
            NoiseForm::General => "general",
        }
    }
}

impl fmt::Display for NoiseForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything a single model evaluation produces.
///
/// For the general form there is no deterministic part, so `f` repeats `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub f: DVector<f64>,
    pub g: DVector<f64>,
    pub pi: Option<DMatrix<f64>>,
    pub gamma: Option<DVector<f64>>,
}

#[derive(Clone)]
enum Structure {
    Noiseless {
        f: VectorMap,
    },
    /// `g = f(u) + G v`; `G` is the identity until units change.
    Additive {
        f: VectorMap,
        gain: DMatrix<f64>,
    },
    Multiplicative {
        f: VectorMap,
        pi: MatrixMap,
        gamma: VectorMap,
        n_gamma: usize,
        gamma_cov: Option<DMatrix<f64>>,
    },
    General {
        g: JointMap,
    },
}

/// Output element name and unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputLabel {
    pub name: String,
    pub unit: String,
}

/// A transformation with its input and noise distributions.
#[derive(Clone)]
pub struct StochasticModel {
    name: String,
    n_y: usize,
    structure: Structure,
    prior_u: GaussianPrior,
    prior_v: Option<GaussianPrior>,
    outputs: Vec<OutputLabel>,
}

impl fmt::Debug for StochasticModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StochasticModel")
            .field("name", &self.name)
            .field("form", &self.form())
            .field("n_u", &self.n_u())
            .field("n_v", &self.n_v())
            .field("n_y", &self.n_y)
            .field("outputs", &self.outputs)
            .finish()
    }
}

fn check_noise_prior(prior_v: &GaussianPrior) -> Result<()> {
    if prior_v.mean().iter().any(|&m| m != 0.0) {
        return Err(MonError::InvalidParameter("noise prior must have zero mean".into()));
    }
    Ok(())
}

fn default_outputs(n_y: usize) -> Vec<OutputLabel> {
    (0..n_y)
        .map(|i| OutputLabel {
            name: format!("y{i}"),
            unit: "-".into(),
        })
        .collect()
}

impl StochasticModel {
    fn build(
        name: &str,
        n_y: usize,
        structure: Structure,
        prior_u: GaussianPrior,
        prior_v: Option<GaussianPrior>,
    ) -> Result<Self> {
        if n_y == 0 || prior_u.dim() == 0 {
            return Err(MonError::DimensionMismatch(
                "models need at least one input and one output".into(),
            ));
        }
        if let Some(pv) = &prior_v {
            check_noise_prior(pv)?;
        }
        let model = Self {
            name: name.to_string(),
            n_y,
            structure,
            prior_u,
            prior_v,
            outputs: default_outputs(n_y),
        };
        model.check_shapes()?;
        Ok(model)
    }

    /// Evaluates once at the prior means to catch shape errors early.
    fn check_shapes(&self) -> Result<()> {
        let u = self.prior_u.mean().clone();
        let v = DVector::zeros(self.n_v());
        let e = self.evaluate(&u, &v);
        let mismatch = |what: &str, got: String| {
            Err(MonError::DimensionMismatch(format!(
                "model '{}': {what} has shape {got}",
                self.name
            )))
        };
        if e.f.len() != self.n_y || e.g.len() != self.n_y {
            return mismatch("output", format!("{}", e.g.len()));
        }
        if let Structure::Additive { gain, .. } = &self.structure {
            if gain.shape() != (self.n_y, self.n_v()) {
                return mismatch("noise gain", format!("{:?}", gain.shape()));
            }
        }
        if let (Some(pi), Some(gamma)) = (&e.pi, &e.gamma) {
            let n_gamma = self.layout().n_gamma;
            if pi.shape() != (self.n_y, n_gamma) {
                return mismatch("pi(u)", format!("{:?}", pi.shape()));
            }
            if gamma.len() != n_gamma {
                return mismatch("gamma(v)", format!("{}", gamma.len()));
            }
        }
        Ok(())
    }

    /// `y = f(u)`.
    pub fn noiseless(name: &str, n_y: usize, f: VectorMap, prior_u: GaussianPrior) -> Result<Self> {
        Self::build(name, n_y, Structure::Noiseless { f }, prior_u, None)
    }

    /// `y = f(u) + v` with `v ~ prior_v`, `n_v = n_y`.
    pub fn additive(
        name: &str,
        n_y: usize,
        f: VectorMap,
        prior_u: GaussianPrior,
        prior_v: GaussianPrior,
    ) -> Result<Self> {
        if prior_v.dim() != n_y {
            return Err(MonError::DimensionMismatch(format!(
                "additive noise has dimension {}, output has {n_y}",
                prior_v.dim()
            )));
        }
        let gain = DMatrix::identity(n_y, n_y);
        Self::build(name, n_y, Structure::Additive { f, gain }, prior_u, Some(prior_v))
    }

    /// `y = f(u) + π(u) v` with the identity γ.
    pub fn multiplicative(
        name: &str,
        n_y: usize,
        f: VectorMap,
        pi: MatrixMap,
        prior_u: GaussianPrior,
        prior_v: GaussianPrior,
    ) -> Result<Self> {
        let n_gamma = prior_v.dim();
        let gamma_cov = Some(prior_v.cov().clone());
        let gamma: VectorMap = Arc::new(|v: &DVector<f64>| v.clone());
        Self::build(
            name,
            n_y,
            Structure::Multiplicative {
                f,
                pi,
                gamma,
                n_gamma,
                gamma_cov,
            },
            prior_u,
            Some(prior_v),
        )
    }

    /// `y = f(u) + π(u) γ(v)` with a user-supplied γ.
    ///
    /// γ is wrapped as `γ(v) − m` where `m` is its Monte Carlo mean over
    /// [`GAMMA_CENTERING_SAMPLES`] draws, so the stored γ is zero-mean.
    pub fn multiplicative_with_gamma(
        name: &str,
        n_y: usize,
        f: VectorMap,
        pi: MatrixMap,
        gamma: VectorMap,
        n_gamma: usize,
        prior_u: GaussianPrior,
        prior_v: GaussianPrior,
    ) -> Result<Self> {
        check_noise_prior(&prior_v)?;
        let draws = sample_gaussian(&prior_v, GAMMA_CENTERING_SAMPLES, GAMMA_CENTERING_SEED)?;
        let mut mean = DVector::zeros(n_gamma);
        for j in 0..draws.ncols() {
            let value = gamma(&draws.column(j).clone_owned());
            if value.len() != n_gamma {
                return Err(MonError::DimensionMismatch(format!(
                    "gamma(v) has {} entries, expected {n_gamma}",
                    value.len()
                )));
            }
            mean += value;
        }
        mean /= draws.ncols() as f64;
        let raw = gamma;
        let centered: VectorMap = Arc::new(move |v: &DVector<f64>| raw(v) - &mean);
        Self::build(
            name,
            n_y,
            Structure::Multiplicative {
                f,
                pi,
                gamma: centered,
                n_gamma,
                gamma_cov: None,
            },
            prior_u,
            Some(prior_v),
        )
    }

    /// Non-additive `y = g(u, v)`. Constructible, but the MoN has no closed
    /// form for it.
    pub fn general(
        name: &str,
        n_y: usize,
        g: JointMap,
        prior_u: GaussianPrior,
        prior_v: GaussianPrior,
    ) -> Result<Self> {
        Self::build(name, n_y, Structure::General { g }, prior_u, Some(prior_v))
    }

    pub fn with_outputs(mut self, outputs: &[(&str, &str)]) -> Result<Self> {
        if outputs.len() != self.n_y {
            return Err(MonError::DimensionMismatch(format!(
                "{} output labels for {} outputs",
                outputs.len(),
                self.n_y
            )));
        }
        self.outputs = outputs
            .iter()
            .map(|(n, u)| OutputLabel {
                name: n.to_string(),
                unit: u.to_string(),
            })
            .collect();
        Ok(self)
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn outputs(&self) -> &[OutputLabel] {
        &self.outputs
    }

    pub fn form(&self) -> NoiseForm {
        match self.structure {
            Structure::Noiseless { .. } => NoiseForm::Noiseless,
            Structure::Additive { .. } => NoiseForm::Additive,
            Structure::Multiplicative { .. } => NoiseForm::Multiplicative,
            Structure::General { .. } => NoiseForm::General,
        }
    }

    pub fn n_u(&self) -> usize {
        self.prior_u.dim()
    }

    pub fn n_v(&self) -> usize {
        self.prior_v.as_ref().map_or(0, |p| p.dim())
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn prior_u(&self) -> &GaussianPrior {
        &self.prior_u
    }

    pub fn prior_v(&self) -> Option<&GaussianPrior> {
        self.prior_v.as_ref()
    }

    /// Analytic `Σγγ`, known for the identity γ.
    pub fn gamma_cov(&self) -> Option<&DMatrix<f64>> {
        match &self.structure {
            Structure::Multiplicative { gamma_cov, .. } => gamma_cov.as_ref(),
            _ => None,
        }
    }

    pub fn layout(&self) -> Layout {
        let n_gamma = match &self.structure {
            Structure::Multiplicative { n_gamma, .. } => *n_gamma,
            _ => 0,
        };
        Layout {
            n_u: self.n_u(),
            n_v: self.n_v(),
            n_y: self.n_y,
            n_gamma,
        }
    }

    pub fn evaluate(&self, u: &DVector<f64>, v: &DVector<f64>) -> Evaluation {
        match &self.structure {
            Structure::Noiseless { f } => {
                let f = f(u);
                Evaluation {
                    g: f.clone(),
                    f,
                    pi: None,
                    gamma: None,
                }
            }
            Structure::Additive { f, gain } => {
                let f = f(u);
                let g = &f + gain * v;
                Evaluation {
                    f,
                    g,
                    pi: None,
                    gamma: None,
                }
            }
            Structure::Multiplicative { f, pi, gamma, .. } => {
                let f = f(u);
                let pi = pi(u);
                let gamma = gamma(v);
                let g = &f + &pi * &gamma;
                Evaluation {
                    f,
                    g,
                    pi: Some(pi),
                    gamma: Some(gamma),
                }
            }
            Structure::General { g } => {
                let g = g(u, v);
                Evaluation {
                    f: g.clone(),
                    g,
                    pi: None,
                    gamma: None,
                }
            }
        }
    }

    /// Shorthand for `evaluate(u, v).g`.
    pub fn output(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.evaluate(u, v).g
    }
}

/// Affine change of units: `u = S_u ū + o_u`, `y = S_y ȳ + o_y`, `v = S_v v̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitChange {
    s_u: DMatrix<f64>,
    s_u_inv: DMatrix<f64>,
    o_u: DVector<f64>,
    s_y: DMatrix<f64>,
    s_y_inv: DMatrix<f64>,
    o_y: DVector<f64>,
    s_v: DMatrix<f64>,
    s_v_inv: DMatrix<f64>,
}

fn checked_inverse(s: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !is_positive_definite(s) {
        return Err(MonError::NotPositiveDefinite(format!("{what} scale matrix")));
    }
    let chol = s.clone().cholesky().expect("checked above");
    Ok(chol.inverse())
}

fn diagonal_pair(values: &[f64], what: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if values.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(MonError::NotPositiveDefinite(format!(
            "{what} scale factors must be positive"
        )));
    }
    let s = DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().copied()));
    let s_inv = DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|m| 1.0 / m)));
    Ok((s, s_inv))
}

impl UnitChange {
    /// Scale matrices must be symmetric positive definite.
    pub fn new(
        s_u: DMatrix<f64>,
        o_u: DVector<f64>,
        s_y: DMatrix<f64>,
        o_y: DVector<f64>,
        s_v: DMatrix<f64>,
    ) -> Result<Self> {
        if s_u.nrows() != o_u.len() || s_y.nrows() != o_y.len() {
            return Err(MonError::DimensionMismatch("scale and offset dimensions differ".into()));
        }
        let s_u_inv = checked_inverse(&s_u, "input")?;
        let s_y_inv = checked_inverse(&s_y, "output")?;
        let s_v_inv = if s_v.nrows() == 0 && s_v.ncols() == 0 {
            s_v.clone()
        } else {
            checked_inverse(&s_v, "noise")?
        };
        Ok(Self {
            s_u,
            s_u_inv,
            o_u,
            s_y,
            s_y_inv,
            o_y,
            s_v,
            s_v_inv,
        })
    }

    pub fn identity(n_u: usize, n_y: usize, n_v: usize) -> Self {
        Self {
            s_u: DMatrix::identity(n_u, n_u),
            s_u_inv: DMatrix::identity(n_u, n_u),
            o_u: DVector::zeros(n_u),
            s_y: DMatrix::identity(n_y, n_y),
            s_y_inv: DMatrix::identity(n_y, n_y),
            o_y: DVector::zeros(n_y),
            s_v: DMatrix::identity(n_v, n_v),
            s_v_inv: DMatrix::identity(n_v, n_v),
        }
    }

    /// Diagonal change where `scale_*` hold the diagonals of `S_*`.
    pub fn diagonal(
        scale_u: &[f64],
        o_u: DVector<f64>,
        scale_y: &[f64],
        o_y: DVector<f64>,
        scale_v: &[f64],
    ) -> Result<Self> {
        if scale_u.len() != o_u.len() || scale_y.len() != o_y.len() {
            return Err(MonError::DimensionMismatch("scale and offset dimensions differ".into()));
        }
        let (s_u, s_u_inv) = diagonal_pair(scale_u, "input")?;
        let (s_y, s_y_inv) = diagonal_pair(scale_y, "output")?;
        let (s_v, s_v_inv) = diagonal_pair(scale_v, "noise")?;
        Ok(Self {
            s_u,
            s_u_inv,
            o_u,
            s_y,
            s_y_inv,
            o_y,
            s_v,
            s_v_inv,
        })
    }

    /// Output-only change where new output `i` is `multipliers[i]` times the
    /// old one (for example `[1e-3, 180/π, 3.6]` for m, rad, m/s to km, deg,
    /// km/h).
    pub fn output_multipliers(n_u: usize, multipliers: &[f64], n_v: usize) -> Result<Self> {
        let (s_y_inv, s_y) = diagonal_pair(multipliers, "output")?;
        Ok(Self {
            s_y,
            s_y_inv,
            ..Self::identity(n_u, multipliers.len(), n_v)
        })
    }

    /// The change that undoes `self`.
    pub fn inverse(&self) -> Self {
        Self {
            s_u: self.s_u_inv.clone(),
            s_u_inv: self.s_u.clone(),
            o_u: -(&self.s_u_inv * &self.o_u),
            s_y: self.s_y_inv.clone(),
            s_y_inv: self.s_y.clone(),
            o_y: -(&self.s_y_inv * &self.o_y),
            s_v: self.s_v_inv.clone(),
            s_v_inv: self.s_v.clone(),
        }
    }

    /// Applying `self` and then `next` equals applying the returned change.
    ///
    /// Products of positive definite scales need not be symmetric, so the
    /// composed change is only guaranteed to be invertible.
    pub fn then(&self, next: &UnitChange) -> Result<Self> {
        if self.s_u.shape() != next.s_u.shape()
            || self.s_y.shape() != next.s_y.shape()
            || self.s_v.shape() != next.s_v.shape()
        {
            return Err(MonError::DimensionMismatch("composing unit changes".into()));
        }
        Ok(Self {
            s_u: &self.s_u * &next.s_u,
            s_u_inv: &next.s_u_inv * &self.s_u_inv,
            o_u: &self.s_u * &next.o_u + &self.o_u,
            s_y: &self.s_y * &next.s_y,
            s_y_inv: &next.s_y_inv * &self.s_y_inv,
            o_y: &self.s_y * &next.o_y + &self.o_y,
            s_v: &self.s_v * &next.s_v,
            s_v_inv: &next.s_v_inv * &self.s_v_inv,
        })
    }

    pub fn s_u(&self) -> &DMatrix<f64> {
        &self.s_u
    }
    pub fn o_u(&self) -> &DVector<f64> {
        &self.o_u
    }
    pub fn s_y(&self) -> &DMatrix<f64> {
        &self.s_y
    }
    pub fn s_y_inv(&self) -> &DMatrix<f64> {
        &self.s_y_inv
    }
    pub fn o_y(&self) -> &DVector<f64> {
        &self.o_y
    }
    pub fn s_v(&self) -> &DMatrix<f64> {
        &self.s_v
    }
}

/// Re-expresses `model` in new units: `ȳ = S_y⁻¹(g(S_u ū + o_u, S_v v̄) − o_y)`.
pub fn apply_unit_change(model: &StochasticModel, change: &UnitChange) -> Result<StochasticModel> {
    if change.s_u.nrows() != model.n_u() || change.s_y.nrows() != model.n_y() || change.s_v.nrows() != model.n_v() {
        return Err(MonError::DimensionMismatch(format!(
            "unit change ({}, {}, {}) for model ({}, {}, {})",
            change.s_u.nrows(),
            change.s_y.nrows(),
            change.s_v.nrows(),
            model.n_u(),
            model.n_y(),
            model.n_v()
        )));
    }
    let s_u = change.s_u.clone();
    let o_u = change.o_u.clone();
    let to_input = move |ub: &DVector<f64>| &s_u * ub + &o_u;
    let s_y_inv = change.s_y_inv.clone();
    let o_y = change.o_y.clone();

    let map_f = |f: &VectorMap| -> VectorMap {
        let f = Arc::clone(f);
        let to_input = to_input.clone();
        let s_y_inv = s_y_inv.clone();
        let o_y = o_y.clone();
        Arc::new(move |ub: &DVector<f64>| &s_y_inv * (f(&to_input(ub)) - &o_y))
    };

    let structure = match &model.structure {
        Structure::Noiseless { f } => Structure::Noiseless { f: map_f(f) },
        Structure::Additive { f, gain } => Structure::Additive {
            f: map_f(f),
            gain: &change.s_y_inv * gain * &change.s_v,
        },
        Structure::Multiplicative {
            f,
            pi,
            gamma,
            n_gamma,
            gamma_cov,
        } => {
            let pi = Arc::clone(pi);
            let to_in = to_input.clone();
            let sy = s_y_inv.clone();
            let new_pi: MatrixMap = Arc::new(move |ub: &DVector<f64>| &sy * pi(&to_in(ub)));
            let gamma = Arc::clone(gamma);
            let s_v = change.s_v.clone();
            let new_gamma: VectorMap = Arc::new(move |vb: &DVector<f64>| gamma(&(&s_v * vb)));
            Structure::Multiplicative {
                f: map_f(f),
                pi: new_pi,
                gamma: new_gamma,
                n_gamma: *n_gamma,
                gamma_cov: gamma_cov.clone(),
            }
        }
        Structure::General { g } => {
            let g = Arc::clone(g);
            let to_in = to_input.clone();
            let sy = s_y_inv.clone();
            let oy = o_y.clone();
            let s_v = change.s_v.clone();
            let new_g: JointMap =
                Arc::new(move |ub: &DVector<f64>, vb: &DVector<f64>| &sy * (g(&to_in(ub), &(&s_v * vb)) - &oy));
            Structure::General { g: new_g }
        }
    };

    Ok(StochasticModel {
        name: model.name.clone(),
        n_y: model.n_y,
        structure,
        prior_u: model.prior_u.affine_image(&change.s_u_inv, &change.o_u),
        prior_v: model
            .prior_v
            .as_ref()
            .map(|p| p.affine_image(&change.s_v_inv, &DVector::zeros(p.dim()))),
        outputs: model.outputs.clone(),
    })
}

/// The diagonal change into base units, where every element of `u`, `v`
/// and `g` has unit variance and `u`, `g` are centered.
pub fn base_unit_change(est: &MomentEstimates) -> Result<UnitChange> {
    let std_of = |m: &DMatrix<f64>| -> Vec<f64> { m.diagonal().iter().map(|v| v.sqrt()).collect() };
    let scale_y = std_of(&est.sigma_gg);
    if let Some(i) = scale_y.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(MonError::DegenerateOutput(i));
    }
    let scale_u = std_of(&est.sigma_uu);
    if scale_u.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(MonError::DegenerateInput);
    }
    let scale_v: Vec<f64> = std_of(&est.sigma_vv)
        .into_iter()
        .map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 })
        .collect();
    UnitChange::diagonal(&scale_u, est.mean_u.clone(), &scale_y, est.mean_g.clone(), &scale_v)
}

/// Catalog entry for a built-in measurement model.
#[derive(Debug, Clone, Copy)]
pub struct BuiltinInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub n_u: usize,
    pub n_y: usize,
    /// Output unit variants; the first is the default.
    pub variants: &'static [&'static str],
    /// Models in the same group share their prior, so equal seeds give
    /// them identical input draws.
    pub sampling_group: &'static str,
}

pub const BUILTINS: &[BuiltinInfo] = &[
    BuiltinInfo {
        name: "cart2polar_rad",
        description: "Cartesian position [km] to range [km] and bearing atan2(y, x) [rad]",
        n_u: 2,
        n_y: 2,
        variants: &["km-rad"],
        sampling_group: "cart2polar",
    },
    BuiltinInfo {
        name: "cart2polar_deg",
        description: "Cartesian position [km] to range [km] and bearing atan2(y, x) [deg]",
        n_u: 2,
        n_y: 2,
        variants: &["km-deg"],
        sampling_group: "cart2polar",
    },
    BuiltinInfo {
        name: "bot",
        description: "Bearings-only tracking: bearing atan2(x, y) of a 4-D target state",
        n_u: 4,
        n_y: 1,
        variants: &["rad"],
        sampling_group: "tracking",
    },
    BuiltinInfo {
        name: "gmti",
        description: "GMTI radar: range, bearing and range rate from a sensor at [1000, 1000, 1000] m",
        n_u: 4,
        n_y: 3,
        variants: &["m-rad-mps", "km-deg-kmh"],
        sampling_group: "tracking",
    },
    BuiltinInfo {
        name: "rdcos",
        description: "Range and direction cosine x/r of a 4-D target state",
        n_u: 4,
        n_y: 2,
        variants: &["m", "km"],
        sampling_group: "tracking",
    },
];

pub fn builtin_info(name: &str) -> Result<&'static BuiltinInfo> {
    BUILTINS
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| MonError::UnknownModel(name.to_string()))
}

fn cart2polar_prior(alpha: f64) -> Result<GaussianPrior> {
    GaussianPrior::diagonal(&[1.0, 10.0], &[alpha, 100.0 * alpha])
}

fn tracking_prior(alpha: f64) -> Result<GaussianPrior> {
    GaussianPrior::diagonal(&[500.0, 500.0, 5.0, 8.7], &[1e3 * alpha, 1e3 * alpha, alpha, alpha])
}

fn cart2polar(bearing_factor: f64) -> VectorMap {
    Arc::new(move |u: &DVector<f64>| {
        let (x, y) = (u[0], u[1]);
        let bearing = if bearing_factor == 1.0 {
            y.atan2(x)
        } else {
            y.atan2(x) * bearing_factor
        };
        DVector::from_vec(vec![x.hypot(y), bearing])
    })
}

fn bot() -> VectorMap {
    Arc::new(|x: &DVector<f64>| DVector::from_element(1, x[0].atan2(x[1])))
}

fn gmti() -> VectorMap {
    let [sx, sy, sz] = GMTI_SENSOR;
    Arc::new(move |x: &DVector<f64>| {
        let dx = x[0] - sx;
        let dy = x[1] - sy;
        let range = (dx * dx + dy * dy + sz * sz).sqrt();
        let bearing = dx.atan2(dy);
        let range_rate = (dx * x[2] + dy * x[3]) / range;
        DVector::from_vec(vec![range, bearing, range_rate])
    })
}

fn rdcos() -> VectorMap {
    Arc::new(|x: &DVector<f64>| {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        DVector::from_vec(vec![r, x[0] / r])
    })
}

/// Builds a catalog model with its prior covariance scaled by `alpha`.
/// `variant` selects the output units (`None` for the default).
pub fn builtin_model(name: &str, alpha: f64, variant: Option<&str>) -> Result<StochasticModel> {
    let info = builtin_info(name)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(MonError::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let variant = variant.unwrap_or(info.variants[0]);
    if !info.variants.contains(&variant) {
        return Err(MonError::UnknownVariant {
            model: name.to_string(),
            variant: variant.to_string(),
        });
    }
    let model = match name {
        "cart2polar_rad" => StochasticModel::noiseless(name, 2, cart2polar(1.0), cart2polar_prior(alpha)?)?
            .with_outputs(&[("range", "km"), ("bearing", "rad")])?,
        "cart2polar_deg" => StochasticModel::noiseless(name, 2, cart2polar(180.0 / PI), cart2polar_prior(alpha)?)?
            .with_outputs(&[("range", "km"), ("bearing", "deg")])?,
        "bot" => {
            StochasticModel::noiseless(name, 1, bot(), tracking_prior(alpha)?)?.with_outputs(&[("bearing", "rad")])?
        }
        "gmti" => StochasticModel::noiseless(name, 3, gmti(), tracking_prior(alpha)?)?.with_outputs(&[
            ("range", "m"),
            ("bearing", "rad"),
            ("range_rate", "m/s"),
        ])?,
        "rdcos" => StochasticModel::noiseless(name, 2, rdcos(), tracking_prior(alpha)?)?
            .with_outputs(&[("range", "m"), ("direction_cosine", "-")])?,
        _ => unreachable!("catalog lookup succeeded"),
    };
    match (name, variant) {
        ("gmti", "km-deg-kmh") => {
            let change = UnitChange::output_multipliers(4, &[1e-3, 180.0 / PI, 3.6], 0)?;
            apply_unit_change(&model, &change)?.with_outputs(&[
                ("range", "km"),
                ("bearing", "deg"),
                ("range_rate", "km/h"),
            ])
        }
        ("rdcos", "km") => {
            let change = UnitChange::output_multipliers(4, &[1e-3, 1.0], 0)?;
            apply_unit_change(&model, &change)?.with_outputs(&[("range", "km"), ("direction_cosine", "-")])
        }
        _ => Ok(model),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(values: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(values)
    }

    #[test]
    fn cart2polar_at_prior_mean() {
        let none = DVector::zeros(0);
        let rad = builtin_model("cart2polar_rad", 1.0, None).unwrap();
        let y = rad.output(&at(&[1.0, 10.0]), &none);
        assert!((y[0] - 101f64.sqrt()).abs() < 1e-12);
        assert!((y[0] - 10.0499).abs() < 1e-4);
        assert!((y[1] - 1.4711).abs() < 1e-4);
        let deg = builtin_model("cart2polar_deg", 1.0, None).unwrap();
        let y = deg.output(&at(&[1.0, 10.0]), &none);
        assert!((y[1] - 84.289).abs() < 1e-3);
    }

    #[test]
    fn gmti_range_at_state_mean() {
        let m = builtin_model("gmti", 1.0, None).unwrap();
        let y = m.output(&at(&[500.0, 500.0, 5.0, 8.7]), &DVector::zeros(0));
        assert!((y[0] - 1224.745).abs() < 1e-3);
        // atan2(x − s_x, y − s_y) = atan2(−500, −500)
        assert!((y[1] + 3.0 * PI / 4.0).abs() < 1e-12);
        assert!((y[2] - (-500.0 * 5.0 - 500.0 * 8.7) / y[0]).abs() < 1e-12);
    }

    #[test]
    fn bot_uses_x_then_y() {
        let m = builtin_model("bot", 1.0, None).unwrap();
        let y = m.output(&at(&[1.0, 0.0, 0.0, 0.0]), &DVector::zeros(0));
        assert!((y[0] - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn builtin_errors() {
        assert!(matches!(
            builtin_model("nope", 1.0, None),
            Err(MonError::UnknownModel(_))
        ));
        assert!(matches!(
            builtin_model("bot", 0.0, None),
            Err(MonError::InvalidParameter(_))
        ));
        assert!(matches!(
            builtin_model("bot", -1.0, None),
            Err(MonError::InvalidParameter(_))
        ));
        assert!(matches!(
            builtin_model("gmti", 1.0, Some("furlongs")),
            Err(MonError::UnknownVariant { .. })
        ));
    }

    #[test]
    fn identity_change_is_bitwise_neutral() {
        let m = builtin_model("gmti", 1.0, None).unwrap();
        let same = apply_unit_change(&m, &UnitChange::identity(4, 3, 0)).unwrap();
        let none = DVector::zeros(0);
        for u in [at(&[500.0, 500.0, 5.0, 8.7]), at(&[431.25, 617.5, -3.0, 12.0])] {
            assert_eq!(m.output(&u, &none), same.output(&u, &none));
        }
        assert_eq!(m.prior_u(), same.prior_u());
    }

    #[test]
    fn degree_variant_matches_output_scaling() {
        let rad = builtin_model("cart2polar_rad", 1.0, None).unwrap();
        let deg = builtin_model("cart2polar_deg", 1.0, None).unwrap();
        let change = UnitChange::output_multipliers(2, &[1.0, 180.0 / PI], 0).unwrap();
        let scaled = apply_unit_change(&rad, &change).unwrap();
        let none = DVector::zeros(0);
        for u in [at(&[1.0, 10.0]), at(&[-0.3, 4.0]), at(&[2.5, 17.0])] {
            let a = scaled.output(&u, &none);
            let b = deg.output(&u, &none);
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() <= 1e-12 * b[i].abs());
            }
        }
    }

    #[test]
    fn gmti_km_deg_kmh_variant() {
        let si = builtin_model("gmti", 1.0, None).unwrap();
        let km = builtin_model("gmti", 1.0, Some("km-deg-kmh")).unwrap();
        let none = DVector::zeros(0);
        let u = at(&[480.0, 530.0, 4.0, 9.0]);
        let a = si.output(&u, &none);
        let b = km.output(&u, &none);
        assert!((b[0] - a[0] / 1000.0).abs() < 1e-12);
        assert!((b[1] - a[1].to_degrees()).abs() < 1e-10);
        assert!((b[2] - a[2] * 3.6).abs() < 1e-12);
        assert_eq!(km.outputs()[2].unit, "km/h");
    }

    #[test]
    fn unit_change_rejects_non_pd_scale() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = UnitChange::new(
            bad,
            DVector::zeros(2),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::zeros(0, 0),
        );
        assert!(matches!(r, Err(MonError::NotPositiveDefinite(_))));
        assert!(UnitChange::output_multipliers(2, &[1.0, -3.0], 0).is_err());
    }

    #[test]
    fn base_change_scales() {
        let est = MomentEstimates::analytic_noiseless(
            at(&[0.0]),
            at(&[0.0, 0.0]),
            DMatrix::identity(1, 1),
            DMatrix::from_diagonal(&at(&[4.0, 9.0])),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        let c = base_unit_change(&est).unwrap();
        assert_eq!(c.s_y(), &DMatrix::from_diagonal(&at(&[2.0, 3.0])));
        let est = MomentEstimates::analytic_noiseless(
            at(&[0.0]),
            at(&[0.0, 0.0]),
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        assert_eq!(base_unit_change(&est).unwrap().s_y(), &DMatrix::identity(2, 2));
        let est = MomentEstimates::analytic_noiseless(
            at(&[0.0]),
            at(&[0.0, 0.0]),
            DMatrix::identity(1, 1),
            DMatrix::from_diagonal(&at(&[1.0, 0.0])),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        assert!(matches!(base_unit_change(&est), Err(MonError::DegenerateOutput(1))));
    }

    #[test]
    fn noise_prior_must_be_centered() {
        let r = StochasticModel::additive(
            "biased",
            1,
            Arc::new(|u: &DVector<f64>| u.clone()),
            GaussianPrior::diagonal(&[0.0], &[1.0]).unwrap(),
            GaussianPrior::diagonal(&[0.5], &[1.0]).unwrap(),
        );
        assert!(matches!(r, Err(MonError::InvalidParameter(_))));
    }

    #[test]
    fn custom_gamma_is_centered() {
        let m = StochasticModel::multiplicative_with_gamma(
            "squared-noise",
            1,
            Arc::new(|u: &DVector<f64>| u.clone()),
            Arc::new(|u: &DVector<f64>| DMatrix::from_element(1, 1, u[0])),
            Arc::new(|v: &DVector<f64>| v.map(|x| x * x)),
            1,
            GaussianPrior::diagonal(&[0.0], &[1.0]).unwrap(),
            GaussianPrior::diagonal(&[0.0], &[1.0]).unwrap(),
        )
        .unwrap();
        // E[v²] = 1, so γ(0) ≈ −1 after centering
        let e = m.evaluate(&at(&[1.0]), &at(&[0.0]));
        assert!((e.gamma.unwrap()[0] + 1.0).abs() < 0.02);
    }

    #[test]
    fn shape_errors_are_caught_at_construction() {
        let r = StochasticModel::noiseless(
            "wrong",
            2,
            Arc::new(|u: &DVector<f64>| u.clone()),
            GaussianPrior::diagonal(&[0.0], &[1.0]).unwrap(),
        );
        assert!(matches!(r, Err(MonError::DimensionMismatch(_))));
    }
}
