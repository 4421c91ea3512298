//! Measures of nonlinearity (MoN) for stochastic transformations
//! `y = g(u, v)`.
//!
//! The crate estimates the covariance blocks of a transformation by seeded
//! Monte Carlo ([`moments`]), computes the original MSE-based MoN and the
//! unitless normalized weighted MoN from them ([`mon`]), ships the tracking
//! measurement models used to study both ([`models`]), and runs
//! reproducible parameter sweeps that write CSV ([`bench`]).

pub mod bench;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod models;
pub mod moments;
pub mod mon;

pub use error::{MonError, Result};
pub use models::{apply_unit_change, base_unit_change, builtin_model, NoiseForm, StochasticModel, UnitChange};
pub use moments::{estimate_moments, GaussianPrior, MomentAccumulator, MomentEstimates};
pub use mon::{
    best_linear_fit, compute_mon, mon_additive, mon_multiplicative, mon_upper_bound, weight_diag, weight_family,
    weight_full, weight_identity, weight_legacy, LinearFit, MonKind, MonResult, OffDiagonal, WeightMatrix,
    WeightProvenance,
};
