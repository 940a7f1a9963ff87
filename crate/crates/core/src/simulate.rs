//! Synthetic data-generating processes with known ground truth, plus an
//! exact discrete-enumeration oracle for population-level checks.
//!
//! Sampled DGPs are seed-deterministic. The enumerated distribution computes
//! every expectation as an exact weighted sum (outcome noise has two-point
//! support; continuous treatments are represented by Gauss-Hermite nodes, so
//! polynomial integrands are integrated exactly), which is what lets
//! equivalence and orthogonality properties be tested at 1e-10 tolerances.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Role};
use crate::error::{Error, Result};
use crate::functional::{DgpTruth, FunctionalKind, RegressionFn, TargetFunctional};

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

// ---------------------------------------------------------------------------
// Parameter sets
// ---------------------------------------------------------------------------

/// Binary-treatment DGP: `z ~ U[-1,1]^q`, logistic propensity, linear
/// outcome with constant treatment effect `tau` and Gaussian noise.
/// Propensities stay inside `[0.05, 0.95]` at the default coefficients.
#[derive(Debug, Clone)]
pub struct AteLogisticParams {
    pub q: usize,
    pub tau: f64,
    pub propensity_intercept: f64,
    pub propensity_coefs: Vec<f64>,
    pub outcome_intercept: f64,
    pub outcome_coefs: Vec<f64>,
    /// Coefficient on `z1^2`; nonzero makes the linear outcome basis
    /// misspecified while leaving the true effect at `tau`.
    pub outcome_quadratic: f64,
    pub noise_sd: f64,
}

impl Default for AteLogisticParams {
    fn default() -> Self {
        Self {
            q: 5,
            tau: 1.0,
            propensity_intercept: 0.0,
            propensity_coefs: vec![0.8, -0.5, 0.0, 0.0, 0.0],
            outcome_intercept: 0.0,
            outcome_coefs: vec![1.0, 1.0, 0.0, 0.0, 0.0],
            outcome_quadratic: 0.0,
            noise_sd: 1.0,
        }
    }
}

impl AteLogisticParams {
    fn gamma0(&self, d: f64, z: ArrayView1<'_, f64>) -> f64 {
        let lin: f64 = self
            .outcome_coefs
            .iter()
            .zip(z.iter())
            .map(|(b, zv)| b * zv)
            .sum();
        self.outcome_intercept + self.tau * d + lin + self.outcome_quadratic * z[0] * z[0]
    }

    fn propensity(&self, z: ArrayView1<'_, f64>) -> f64 {
        let lin: f64 = self
            .propensity_coefs
            .iter()
            .zip(z.iter())
            .map(|(b, zv)| b * zv)
            .sum();
        logistic(self.propensity_intercept + lin)
    }
}

/// Continuous-treatment DGP: `d = treat_coef z1 + eps`, Gaussian `eps`, so
/// the negative conditional-density score is linear in `(d, z1)` and a
/// linear representer model is well-specified.
#[derive(Debug, Clone)]
pub struct AmeGaussianParams {
    pub q: usize,
    pub tau: f64,
    /// Coefficient on `d^2` in the outcome.
    pub curvature: f64,
    pub outcome_coefs: Vec<f64>,
    pub treat_coef: f64,
    pub treat_sd: f64,
    pub noise_sd: f64,
}

impl Default for AmeGaussianParams {
    fn default() -> Self {
        Self {
            q: 2,
            tau: 1.0,
            curvature: 0.5,
            outcome_coefs: vec![1.0, 0.5],
            treat_coef: 0.5,
            treat_sd: 0.7,
            noise_sd: 1.0,
        }
    }
}

impl AmeGaussianParams {
    fn gamma0(&self, d: f64, z: ArrayView1<'_, f64>) -> f64 {
        let lin: f64 = self
            .outcome_coefs
            .iter()
            .zip(z.iter())
            .map(|(b, zv)| b * zv)
            .sum();
        self.tau * d + self.curvature * d * d + lin
    }
}

/// Two-sample covariate-shift DGP: source `z ~ N(0, I)`, target
/// `z ~ N(shift, I)`, linear outcome observed on source rows only. The true
/// density ratio is `exp(shift' z - ||shift||^2 / 2)` — log-linear in `z`.
#[derive(Debug, Clone)]
pub struct CovShiftGaussianParams {
    pub q: usize,
    pub shift: Vec<f64>,
    pub outcome_intercept: f64,
    pub outcome_coefs: Vec<f64>,
    pub noise_sd: f64,
}

impl Default for CovShiftGaussianParams {
    fn default() -> Self {
        Self {
            q: 2,
            shift: vec![0.3, 0.0],
            outcome_intercept: 0.5,
            outcome_coefs: vec![1.0, 0.5],
            noise_sd: 0.5,
        }
    }
}

impl CovShiftGaussianParams {
    fn gamma0(&self, z: ArrayView1<'_, f64>) -> f64 {
        self.outcome_intercept
            + self
                .outcome_coefs
                .iter()
                .zip(z.iter())
                .map(|(b, zv)| b * zv)
                .sum::<f64>()
    }

    fn ratio(&self, z: ArrayView1<'_, f64>) -> f64 {
        let dot: f64 = self.shift.iter().zip(z.iter()).map(|(m, zv)| m * zv).sum();
        let norm2: f64 = self.shift.iter().map(|m| m * m).sum();
        (dot - 0.5 * norm2).exp()
    }
}

// ---------------------------------------------------------------------------
// DgpSpec
// ---------------------------------------------------------------------------

/// A data-generating process plus its seed. Every kind exposes the true
/// parameter in closed form or by exact enumeration.
#[derive(Debug, Clone)]
pub enum DgpSpec {
    AteLogistic { params: AteLogisticParams, seed: u64 },
    AttLogistic { params: AteLogisticParams, seed: u64 },
    AmeGaussian { params: AmeGaussianParams, seed: u64 },
    CovShiftGaussian { params: CovShiftGaussianParams, seed: u64 },
    DiscreteEnumerable { dist: EnumeratedDistribution, seed: u64 },
}

impl DgpSpec {
    pub fn ate_logistic(seed: u64) -> Self {
        Self::AteLogistic {
            params: AteLogisticParams::default(),
            seed,
        }
    }

    pub fn att_logistic(seed: u64) -> Self {
        Self::AttLogistic {
            params: AteLogisticParams::default(),
            seed,
        }
    }

    pub fn ame_gaussian(seed: u64) -> Self {
        Self::AmeGaussian {
            params: AmeGaussianParams::default(),
            seed,
        }
    }

    pub fn covshift_gaussian(seed: u64) -> Self {
        Self::CovShiftGaussian {
            params: CovShiftGaussianParams::default(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::AteLogistic { seed, .. }
            | Self::AttLogistic { seed, .. }
            | Self::AmeGaussian { seed, .. }
            | Self::CovShiftGaussian { seed, .. }
            | Self::DiscreteEnumerable { seed, .. } => *seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            Self::AteLogistic { seed: s, .. }
            | Self::AttLogistic { seed: s, .. }
            | Self::AmeGaussian { seed: s, .. }
            | Self::CovShiftGaussian { seed: s, .. }
            | Self::DiscreteEnumerable { seed: s, .. } => *s = seed,
        }
        out
    }

    /// The functional this DGP is built to identify.
    pub fn functional_kind(&self) -> FunctionalKind {
        match self {
            Self::AteLogistic { .. } => FunctionalKind::Ate,
            Self::AttLogistic { .. } => FunctionalKind::Att,
            Self::AmeGaussian { .. } => FunctionalKind::Ame,
            Self::CovShiftGaussian { .. } => FunctionalKind::CovShiftMean,
            Self::DiscreteEnumerable { dist, .. } => dist.functional_kind,
        }
    }

    /// The true target parameter.
    pub fn true_theta(&self) -> f64 {
        match self {
            // constant-effect outcome: both the ATE and the ATT equal tau
            Self::AteLogistic { params, .. } | Self::AttLogistic { params, .. } => params.tau,
            // E[d gamma0/dd] = tau + 2 c E[D]; E[D] = treat_coef E[z1] = 0
            Self::AmeGaussian { params, .. } => params.tau,
            Self::CovShiftGaussian { params, .. } => {
                params.outcome_intercept
                    + params
                        .outcome_coefs
                        .iter()
                        .zip(params.shift.iter())
                        .map(|(b, m)| b * m)
                        .sum::<f64>()
            }
            Self::DiscreteEnumerable { dist, .. } => dist.theta0,
        }
    }

    /// True components for oracle representers and population checks.
    pub fn truth(&self) -> DgpTruth {
        match self {
            Self::AteLogistic { params, .. } | Self::AttLogistic { params, .. } => {
                let p = params.clone();
                let p2 = params.clone();
                // marginal treated probability: E[pi0(Z)] over the uniform cube,
                // computed by midpoint quadrature on the two active coordinates
                let treated = uniform_expectation_2d(|a, b| {
                    logistic(
                        p2.propensity_intercept
                            + p2.propensity_coefs[0] * a
                            + p2.propensity_coefs.get(1).copied().unwrap_or(0.0) * b,
                    )
                });
                DgpTruth {
                    propensity: Some(Arc::new(move |z| p.propensity(z))),
                    treated_fraction: Some(treated),
                    ..Default::default()
                }
            }
            Self::AmeGaussian { params, .. } => {
                let a = params.treat_coef;
                let s2 = params.treat_sd * params.treat_sd;
                DgpTruth {
                    // d/dd log f(d|z) for Gaussian d | z: -(d - a z1)/sd^2
                    treatment_density_score: Some(Arc::new(move |d, z: ArrayView1<'_, f64>| {
                        -(d - a * z[0]) / s2
                    })),
                    ..Default::default()
                }
            }
            Self::CovShiftGaussian { params, .. } => {
                let p = params.clone();
                DgpTruth {
                    density_ratio: Some(Arc::new(move |z| p.ratio(z))),
                    ..Default::default()
                }
            }
            Self::DiscreteEnumerable { dist, .. } => dist.truth.clone(),
        }
    }

    /// True regression function.
    pub fn gamma0(&self) -> Arc<dyn Fn(f64, ArrayView1<'_, f64>) -> f64 + Send + Sync> {
        match self {
            Self::AteLogistic { params, .. } | Self::AttLogistic { params, .. } => {
                let p = params.clone();
                Arc::new(move |d, z| p.gamma0(d, z))
            }
            Self::AmeGaussian { params, .. } => {
                let p = params.clone();
                Arc::new(move |d, z| p.gamma0(d, z))
            }
            Self::CovShiftGaussian { params, .. } => {
                let p = params.clone();
                Arc::new(move |_d, z| p.gamma0(z))
            }
            Self::DiscreteEnumerable { dist, .. } => dist.gamma0.clone(),
        }
    }

    /// Draw `n` observations (per sample role for the two-sample kinds).
    /// Deterministic given the stored seed; binary kinds retry with a
    /// derived seed until both arms are present.
    pub fn sample(&self, n: usize) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidData("sample size must be positive".into()));
        }
        match self {
            Self::AteLogistic { params, seed } | Self::AttLogistic { params, seed } => {
                for attempt in 0..100 {
                    let ds = sample_ate(params, seed.wrapping_add(attempt * 0x9e37_79b9), n)?;
                    if ds.treated_count() > 0 && ds.treated_count() < n {
                        return Ok(ds);
                    }
                }
                Err(Error::Degenerate(
                    "could not draw both treatment arms; propensities too extreme".into(),
                ))
            }
            Self::AmeGaussian { params, seed } => sample_ame(params, *seed, n),
            Self::CovShiftGaussian { params, seed } => sample_covshift(params, *seed, n),
            Self::DiscreteEnumerable { dist, seed } => {
                for attempt in 0..100 {
                    let ds = dist.sample(seed.wrapping_add(attempt * 0x9e37_79b9), n)?;
                    let binary_ok = !dist.binary_treatment
                        || (ds.d().iter().any(|&v| v == 1.0) && ds.d().iter().any(|&v| v == 0.0));
                    if binary_ok {
                        return Ok(ds);
                    }
                }
                Err(Error::Degenerate(
                    "could not draw both treatment arms from the enumerated support".into(),
                ))
            }
        }
    }
}

/// Midpoint-rule expectation of `f(z1, z2)` over `U[-1,1]^2`; exact enough
/// (1e-10) for the smooth logistic integrands it is used on.
fn uniform_expectation_2d(f: impl Fn(f64, f64) -> f64) -> f64 {
    let m = 400;
    let step = 2.0 / m as f64;
    let mut acc = 0.0;
    for i in 0..m {
        let a = -1.0 + (i as f64 + 0.5) * step;
        for j in 0..m {
            let b = -1.0 + (j as f64 + 0.5) * step;
            acc += f(a, b);
        }
    }
    acc / (m * m) as f64
}

fn sample_ate(params: &AteLogisticParams, seed: u64, n: usize) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut y = Array1::zeros(n);
    let mut d = Array1::zeros(n);
    let mut z = Array2::zeros((n, params.q));
    for i in 0..n {
        for j in 0..params.q {
            z[(i, j)] = rng.random_range(-1.0..1.0);
        }
        let pi = params.propensity(z.row(i));
        d[i] = if rng.random_range(0.0..1.0) < pi { 1.0 } else { 0.0 };
        y[i] = params.gamma0(d[i], z.row(i)) + params.noise_sd * normal.sample(&mut rng);
    }
    Dataset::from_parts(y, d, z)
}

fn sample_ame(params: &AmeGaussianParams, seed: u64, n: usize) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut y = Array1::zeros(n);
    let mut d = Array1::zeros(n);
    let mut z = Array2::zeros((n, params.q));
    for i in 0..n {
        for j in 0..params.q {
            z[(i, j)] = rng.random_range(-1.0..1.0);
        }
        d[i] = params.treat_coef * z[(i, 0)] + params.treat_sd * normal.sample(&mut rng);
        y[i] = params.gamma0(d[i], z.row(i)) + params.noise_sd * normal.sample(&mut rng);
    }
    Dataset::from_parts(y, d, z)
}

fn sample_covshift(params: &CovShiftGaussianParams, seed: u64, n: usize) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let total = 2 * n;
    let mut y: Vec<Option<f64>> = Vec::with_capacity(total);
    let d = Array1::zeros(total);
    let mut z = Array2::zeros((total, params.q));
    let mut roles = Vec::with_capacity(total);
    for i in 0..total {
        let target = i >= n;
        for j in 0..params.q {
            let shift = if target { params.shift[j] } else { 0.0 };
            z[(i, j)] = shift + normal.sample(&mut rng);
        }
        if target {
            y.push(None);
            roles.push(Role::Target);
        } else {
            y.push(Some(
                params.gamma0(z.row(i)) + params.noise_sd * normal.sample(&mut rng),
            ));
            roles.push(Role::Source);
        }
    }
    Dataset::new(y, d, z, Some(roles))
}

// ---------------------------------------------------------------------------
// Exact enumeration
// ---------------------------------------------------------------------------

/// One support atom: a `(d, z)` point with a two-point outcome distribution
/// `y = y_mean +- y_sd` (each with probability 1/2).
#[derive(Debug, Clone)]
pub struct SupportPoint {
    pub d: f64,
    pub z: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
    /// Probability under the (source) distribution.
    pub prob: f64,
    /// Probability under the target distribution, for two-sample problems.
    pub target_prob: Option<f64>,
}

/// A fully enumerated distribution: every expectation is an exact weighted
/// sum, no sampling. Carries the true components so tests can build oracle
/// representers and the true regression function.
#[derive(Clone)]
pub struct EnumeratedDistribution {
    points: Vec<SupportPoint>,
    q: usize,
    has_target: bool,
    binary_treatment: bool,
    functional_kind: FunctionalKind,
    truth: DgpTruth,
    gamma0: Arc<dyn Fn(f64, ArrayView1<'_, f64>) -> f64 + Send + Sync>,
    gamma0_dderiv: Arc<dyn Fn(f64, ArrayView1<'_, f64>) -> f64 + Send + Sync>,
    theta0: f64,
}

impl std::fmt::Debug for EnumeratedDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnumeratedDistribution")
            .field("points", &self.points.len())
            .field("q", &self.q)
            .field("functional", &self.functional_kind)
            .field("theta0", &self.theta0)
            .finish()
    }
}

impl EnumeratedDistribution {
    /// Validates probabilities (nonnegative, summing to one within 1e-14 on
    /// each present measure) and freezes `theta0` by exact enumeration.
    pub fn new(
        points: Vec<SupportPoint>,
        functional_kind: FunctionalKind,
        truth: DgpTruth,
        gamma0: Arc<dyn Fn(f64, ArrayView1<'_, f64>) -> f64 + Send + Sync>,
        gamma0_dderiv: Arc<dyn Fn(f64, ArrayView1<'_, f64>) -> f64 + Send + Sync>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidData("enumeration needs support points".into()));
        }
        let q = points[0].z.len();
        if points.iter().any(|p| p.z.len() != q) {
            return Err(Error::DimensionMismatch(
                "support points have inconsistent covariate arity".into(),
            ));
        }
        let has_target = points[0].target_prob.is_some();
        if points.iter().any(|p| p.target_prob.is_some() != has_target) {
            return Err(Error::InvalidData(
                "target probabilities must be present on all points or none".into(),
            ));
        }
        let total: f64 = points.iter().map(|p| p.prob).sum();
        if (total - 1.0).abs() > 1e-14 || points.iter().any(|p| p.prob < 0.0) {
            return Err(Error::InvalidData(format!(
                "source probabilities sum to {total}, expected 1"
            )));
        }
        if has_target {
            let tt: f64 = points.iter().filter_map(|p| p.target_prob).sum();
            if (tt - 1.0).abs() > 1e-14 {
                return Err(Error::InvalidData(format!(
                    "target probabilities sum to {tt}, expected 1"
                )));
            }
        }
        let binary_treatment = points.iter().all(|p| p.d == 0.0 || p.d == 1.0);
        let mut dist = Self {
            points,
            q,
            has_target,
            binary_treatment,
            functional_kind,
            truth,
            gamma0,
            gamma0_dderiv,
            theta0: f64::NAN,
        };
        let functional = dist.functional()?;
        let theta0 = dist.population_m(&functional, &*dist.gamma0_regression())?;
        dist.theta0 = theta0;
        Ok(dist)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn truth(&self) -> &DgpTruth {
        &self.truth
    }

    pub fn functional_kind(&self) -> FunctionalKind {
        self.functional_kind
    }

    /// Population treated probability `E[1(D = 1)]`.
    pub fn treated_prob(&self) -> f64 {
        self.points
            .iter()
            .filter(|p| p.d == 1.0)
            .map(|p| p.prob)
            .sum()
    }

    /// The functional with population metadata (ATT uses the population
    /// treated probability).
    pub fn functional(&self) -> Result<TargetFunctional> {
        Ok(match self.functional_kind {
            FunctionalKind::Ate => TargetFunctional::Ate,
            FunctionalKind::Att => TargetFunctional::att(self.treated_prob())?,
            FunctionalKind::Ame => TargetFunctional::Ame,
            FunctionalKind::CovShiftMean => TargetFunctional::CovShiftMean,
        })
    }

    /// The true regression function as a `RegressionFn`.
    pub fn gamma0_regression(&self) -> Box<dyn RegressionFn + '_> {
        let v = self.gamma0.clone();
        let g = self.gamma0_dderiv.clone();
        Box::new(crate::functional::FnRegression {
            value: move |d, z: ArrayView1<'_, f64>| v(d, z),
            deriv: move |d, z: ArrayView1<'_, f64>| g(d, z),
        })
    }

    pub fn gamma0_at(&self, d: f64, z: ArrayView1<'_, f64>) -> f64 {
        (self.gamma0)(d, z)
    }

    /// Exact population expectation of an integrand over `(d, z, y)`.
    pub fn population_risk(&self, integrand: impl Fn(f64, ArrayView1<'_, f64>, f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for p in &self.points {
            let z = ArrayView1::from(p.z.as_slice());
            let up = integrand(p.d, z, p.y_mean + p.y_sd);
            let dn = integrand(p.d, z, p.y_mean - p.y_sd);
            acc += p.prob * 0.5 * (up + dn);
        }
        acc
    }

    /// Exact expectation of a function of `(d, z)` under the source measure.
    pub fn expectation_x(&self, f: impl Fn(f64, ArrayView1<'_, f64>) -> f64) -> f64 {
        self.points
            .iter()
            .map(|p| p.prob * f(p.d, ArrayView1::from(p.z.as_slice())))
            .sum()
    }

    /// Exact expectation under the target measure.
    pub fn target_expectation_x(
        &self,
        f: impl Fn(f64, ArrayView1<'_, f64>) -> f64,
    ) -> Result<f64> {
        if !self.has_target {
            return Err(Error::InvalidData(
                "enumeration has no target distribution".into(),
            ));
        }
        Ok(self
            .points
            .iter()
            .map(|p| p.target_prob.unwrap_or(0.0) * f(p.d, ArrayView1::from(p.z.as_slice())))
            .sum())
    }

    /// Population mean of `m(W, gamma)` for this distribution's functional.
    pub fn population_m(
        &self,
        functional: &TargetFunctional,
        gamma: &dyn RegressionFn,
    ) -> Result<f64> {
        match functional {
            TargetFunctional::Ate => {
                let mut acc = 0.0;
                for p in &self.points {
                    let z = ArrayView1::from(p.z.as_slice());
                    acc += p.prob * (gamma.value(1.0, z)? - gamma.value(0.0, z)?);
                }
                Ok(acc)
            }
            TargetFunctional::Att { treated_prob } => {
                let mut acc = 0.0;
                for p in &self.points {
                    if p.d == 1.0 {
                        let z = ArrayView1::from(p.z.as_slice());
                        acc += p.prob * (gamma.value(1.0, z)? - gamma.value(0.0, z)?)
                            / treated_prob;
                    }
                }
                Ok(acc)
            }
            TargetFunctional::Ame => {
                let mut acc = 0.0;
                for p in &self.points {
                    let z = ArrayView1::from(p.z.as_slice());
                    acc += p.prob * gamma.d_deriv(p.d, z)?;
                }
                Ok(acc)
            }
            TargetFunctional::CovShiftMean => {
                if !self.has_target {
                    return Err(Error::InvalidData(
                        "covariate-shift functional needs a target distribution".into(),
                    ));
                }
                let mut acc = 0.0;
                for p in &self.points {
                    let z = ArrayView1::from(p.z.as_slice());
                    acc += p.target_prob.unwrap_or(0.0) * gamma.value(p.d, z)?;
                }
                Ok(acc)
            }
        }
    }

    /// Population mean of the orthogonal score
    /// `m(W, gamma) + alpha(X) (Y - gamma(X)) - theta` (for covariate shift,
    /// the residual term averages under the source measure and the `m`-term
    /// under the target measure).
    pub fn population_score_mean(
        &self,
        functional: &TargetFunctional,
        gamma: &dyn RegressionFn,
        alpha: &dyn Fn(f64, ArrayView1<'_, f64>) -> f64,
        theta: f64,
    ) -> Result<f64> {
        let m_mean = self.population_m(functional, gamma)?;
        let mut resid = 0.0;
        for p in &self.points {
            let z = ArrayView1::from(p.z.as_slice());
            // E[Y - gamma | d, z] = y_mean - gamma: noise enters linearly
            resid += p.prob * alpha(p.d, z) * (p.y_mean - gamma.value(p.d, z)?);
        }
        Ok(m_mean + resid - theta)
    }

    /// Draw `n` rows from the enumeration (plus `n` target rows when the
    /// distribution is two-sample). Deterministic given the seed.
    pub fn sample(&self, seed: u64, n: usize) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |probs: &dyn Fn(&SupportPoint) -> f64, rng: &mut ChaCha8Rng| -> usize {
            let u: f64 = rng.random_range(0.0..1.0);
            let mut cum = 0.0;
            for (k, p) in self.points.iter().enumerate() {
                cum += probs(p);
                if u < cum {
                    return k;
                }
            }
            self.points.len() - 1
        };

        let total = if self.has_target { 2 * n } else { n };
        let mut y: Vec<Option<f64>> = Vec::with_capacity(total);
        let mut d = Array1::zeros(total);
        let mut z = Array2::zeros((total, self.q));
        let mut roles = Vec::with_capacity(total);
        for i in 0..n {
            let k = draw(&|p| p.prob, &mut rng);
            let pt = &self.points[k];
            let flip: bool = rng.random_range(0.0..1.0) < 0.5;
            y.push(Some(pt.y_mean + if flip { pt.y_sd } else { -pt.y_sd }));
            d[i] = pt.d;
            for (j, &zv) in pt.z.iter().enumerate() {
                z[(i, j)] = zv;
            }
            roles.push(Role::Source);
        }
        if self.has_target {
            for i in n..total {
                let k = draw(&|p| p.target_prob.unwrap_or(0.0), &mut rng);
                let pt = &self.points[k];
                y.push(None);
                d[i] = pt.d;
                for (j, &zv) in pt.z.iter().enumerate() {
                    z[(i, j)] = zv;
                }
                roles.push(Role::Target);
            }
        }
        Dataset::new(y, d, z, if self.has_target { Some(roles) } else { None })
    }
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature
// ---------------------------------------------------------------------------

fn hermite(m: usize, x: f64) -> (f64, f64) {
    // physicists' recurrence; returns (H_m(x), H_{m-1}(x))
    let mut hm1 = 0.0; // H_{-1}
    let mut h = 1.0; // H_0
    for k in 0..m {
        let next = 2.0 * x * h - 2.0 * k as f64 * hm1;
        hm1 = h;
        h = next;
    }
    (h, hm1)
}

/// Nodes and weights for `N(0,1)` expectations: `E[f(eps)] ~ sum_i w_i f(x_i)`,
/// exact for polynomials up to degree `2m - 1`. Roots of the Hermite
/// polynomial are located by sign changes on a fine grid and polished by
/// bisection; weights use the standard closed form and are normalized to sum
/// to one.
pub fn gauss_hermite_normal(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1 && m <= 24, "node count out of supported range");
    let bound = (2.0 * m as f64 + 2.0).sqrt();
    let grid = 200 * m;
    let mut roots = Vec::with_capacity(m);
    let mut prev_x = -bound;
    let mut prev_h = hermite(m, prev_x).0;
    for i in 1..=grid {
        let x = -bound + 2.0 * bound * i as f64 / grid as f64;
        let h = hermite(m, x).0;
        if h == 0.0 {
            roots.push(x);
        } else if prev_h != 0.0 && prev_h.signum() != h.signum() {
            let (mut lo, mut hi) = (prev_x, x);
            let mut flo = prev_h;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = hermite(m, mid).0;
                if fm == 0.0 || (hi - lo) < 1e-16 {
                    lo = mid;
                    break;
                }
                if flo.signum() != fm.signum() {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev_x = x;
        prev_h = h;
    }
    assert_eq!(roots.len(), m, "root search lost a Hermite root");

    // w_i = 2^(m-1) m! sqrt(pi) / (m H_{m-1}(x_i))^2 * m  — written below in
    // the standard form w_i = 2^(m-1) m! sqrt(pi) / (m^2 H_{m-1}(x_i)^2)
    let mut fact = 1.0;
    for k in 1..=m {
        fact *= k as f64;
    }
    let lead = 2.0f64.powi(m as i32 - 1) * fact * std::f64::consts::PI.sqrt() / (m * m) as f64;
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for &r in &roots {
        let (_, hm1) = hermite(m, r);
        nodes.push(std::f64::consts::SQRT_2 * r);
        weights.push(lead / (hm1 * hm1) / std::f64::consts::PI.sqrt());
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    (nodes, weights)
}

// ---------------------------------------------------------------------------
// Stock enumerations used by the property and acceptance tests
// ---------------------------------------------------------------------------

/// Binary-treatment enumeration: three covariate levels, logistic
/// propensity, constant effect, arm-homoskedastic two-point noise.
pub fn ate_enumeration() -> EnumeratedDistribution {
    enumeration_for_binary(FunctionalKind::Ate)
}

/// Same support as [`ate_enumeration`] but targeting the treated mean.
pub fn att_enumeration() -> EnumeratedDistribution {
    enumeration_for_binary(FunctionalKind::Att)
}

fn enumeration_for_binary(kind: FunctionalKind) -> EnumeratedDistribution {
    let zs = [-1.0, 0.0, 1.0];
    let pz = [0.3, 0.4, 0.3];
    let b0 = 0.2;
    let b1 = 0.8;
    let tau = 1.0;
    let slope = 0.7;
    let sd = 0.7;
    let mut points = Vec::new();
    for (z, p) in zs.iter().zip(pz.iter()) {
        let pi = logistic(b0 + b1 * z);
        for d in [1.0, 0.0] {
            points.push(SupportPoint {
                d,
                z: vec![*z],
                y_mean: tau * d + slope * z,
                y_sd: sd,
                prob: p * if d == 1.0 { pi } else { 1.0 - pi },
                target_prob: None,
            });
        }
    }
    // exact renormalization against accumulated rounding
    let total: f64 = points.iter().map(|p| p.prob).sum();
    for p in &mut points {
        p.prob /= total;
    }
    let truth = DgpTruth {
        propensity: Some(Arc::new(move |z: ArrayView1<'_, f64>| {
            logistic(b0 + b1 * z[0])
        })),
        treated_fraction: None, // set below from the enumeration itself
        ..Default::default()
    };
    let mut dist = EnumeratedDistribution::new(
        points,
        kind,
        truth,
        Arc::new(move |d, z: ArrayView1<'_, f64>| tau * d + slope * z[0]),
        Arc::new(move |_d, _z| tau),
    )
    .expect("valid enumeration");
    dist.truth.treated_fraction = Some(dist.treated_prob());
    dist
}

/// Continuous-treatment enumeration: discrete covariate levels crossed with
/// Gauss-Hermite nodes for the treatment noise, so every polynomial moment
/// is exact and the density-score representer has a closed form.
pub fn ame_enumeration() -> EnumeratedDistribution {
    let zs = [-0.6, 0.0, 0.9];
    let pz = [0.3, 0.4, 0.3];
    let a = 0.5; // d = a z + eps
    let sd_d = 0.7;
    let tau = 1.0;
    let curv = 0.5;
    let bz = 0.8;
    let sd_y = 0.5;
    let (nodes, weights) = gauss_hermite_normal(8);
    let mut points = Vec::new();
    for (z, p) in zs.iter().zip(pz.iter()) {
        for (x, w) in nodes.iter().zip(weights.iter()) {
            let d = a * z + sd_d * x;
            points.push(SupportPoint {
                d,
                z: vec![*z],
                y_mean: tau * d + curv * d * d + bz * z,
                y_sd: sd_y,
                prob: p * w,
                target_prob: None,
            });
        }
    }
    let total: f64 = points.iter().map(|p| p.prob).sum();
    for p in &mut points {
        p.prob /= total;
    }
    let truth = DgpTruth {
        treatment_density_score: Some(Arc::new(move |d, z: ArrayView1<'_, f64>| {
            -(d - a * z[0]) / (sd_d * sd_d)
        })),
        ..Default::default()
    };
    EnumeratedDistribution::new(
        points,
        FunctionalKind::Ame,
        truth,
        Arc::new(move |d, z: ArrayView1<'_, f64>| tau * d + curv * d * d + bz * z[0]),
        Arc::new(move |d, _z| tau + 2.0 * curv * d),
    )
    .expect("valid enumeration")
}

/// Two-sample enumeration with a known pointwise density ratio.
pub fn covshift_enumeration() -> EnumeratedDistribution {
    let zs = [-1.0, 0.0, 1.0];
    let p_src = [0.4, 0.35, 0.25];
    let p_tgt = [0.25, 0.35, 0.4];
    let b0 = 0.5;
    let b1 = 1.0;
    let sd = 0.5;
    let mut points = Vec::new();
    for k in 0..zs.len() {
        points.push(SupportPoint {
            d: 0.0,
            z: vec![zs[k]],
            y_mean: b0 + b1 * zs[k],
            y_sd: sd,
            prob: p_src[k],
            target_prob: Some(p_tgt[k]),
        });
    }
    let ratios: Vec<f64> = (0..zs.len()).map(|k| p_tgt[k] / p_src[k]).collect();
    let zs_owned = zs.to_vec();
    let truth = DgpTruth {
        density_ratio: Some(Arc::new(move |z: ArrayView1<'_, f64>| {
            let k = zs_owned
                .iter()
                .position(|&s| (s - z[0]).abs() < 1e-12)
                .expect("ratio queried off the support");
            ratios[k]
        })),
        ..Default::default()
    };
    EnumeratedDistribution::new(
        points,
        FunctionalKind::CovShiftMean,
        truth,
        Arc::new(move |_d, z: ArrayView1<'_, f64>| b0 + b1 * z[0]),
        Arc::new(|_d, _z| 0.0),
    )
    .expect("valid enumeration")
}
