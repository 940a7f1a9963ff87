//! Estimation of regression-functional parameters (treatment effects,
//! marginal effects, shifted-population means) with Neyman orthogonal
//! scores. Nuisance functions are fitted by Bregman-divergence representer
//! regression and (optionally reweighted or TMLE-fluctuated) outcome
//! regression, with cross-fitting and plain influence-function standard
//! errors on top.
//!
//! The crate is organized around the estimation pipeline:
//!
//! - [`data`], [`basis`], [`fitted`]: observations, feature expansions, and
//!   fitted functions (shared currency of all fits);
//! - [`bregman`]: the convex generator family and pointwise divergence;
//! - [`functional`]: target functionals `m(W, gamma)` and their oracle
//!   representers;
//! - [`optimize`]: deterministic quasi-Newton minimization;
//! - [`riesz`]: representer regression (closed-form least squares and the
//!   generic Bregman risk) plus balancing diagnostics;
//! - [`outcome`]: outcome regression, variance-weighted refits, TMLE;
//! - [`estimator`]: orthogonal scores, cross-fitting, standard errors;
//! - [`simulate`]: synthetic DGPs and the exact enumeration oracle.

pub mod basis;
pub mod bregman;
pub mod data;
pub mod error;
pub mod estimator;
pub mod fitted;
pub mod functional;
pub mod linalg;
pub mod optimize;
pub mod outcome;
pub mod riesz;
pub mod simulate;

pub use basis::{BasisKind, BasisSpec};
pub use bregman::{ConvexGenerator, FeasibleIntegrand};
pub use data::{Dataset, Role, TreatmentKind};
pub use error::{Error, Result};
pub use estimator::{
    estimate_crossfit, estimate_full_sample, orthogonal_score, solve_theta, standard_error,
    CrossFitPlan, Estimate, EstimateDiagnostics, EstimatorConfig, MethodInfo, Z_95,
};
pub use fitted::{FittedFunction, Link};
pub use functional::{DgpTruth, FnRegression, FunctionalKind, RegressionFn, TargetFunctional};
pub use optimize::{
    gradient_check, minimize, FnObjective, Objective, Ridged, SolveReport, SolverSettings,
};
pub use outcome::{
    fit_outcome_ls, fit_outcome_weighted, iterative_fit, tmle_fluctuate, GammaHat,
    IterativeConfig, IterativeTrace, OutcomeFit,
};
pub use riesz::{
    balance_residual, fit_riesz_bregman, fit_riesz_ls_closed_form, weight_diagnostics,
    BregmanRisk, RieszFit, RieszModel, WeightDiagnostics,
};
pub use simulate::{
    ame_enumeration, ate_enumeration, att_enumeration, covshift_enumeration,
    gauss_hermite_normal, AmeGaussianParams, AteLogisticParams, CovShiftGaussianParams, DgpSpec,
    EnumeratedDistribution, SupportPoint,
};
