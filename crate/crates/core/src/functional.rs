//! Target functionals `m(W, gamma)` and their oracle Riesz representers.
//!
//! Each functional turns a candidate regression function into a per-row
//! score whose mean identifies the parameter. The representer is the
//! square-integrable function with `E[m(W, gamma)] = E[alpha0(X) gamma(X)]`
//! for every gamma; the closed forms here come from the true
//! data-generating components and are used only by simulations and tests.

use std::sync::Arc;

use ndarray::{Array1, ArrayView1};

use crate::basis::BasisSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fitted::FittedFunction;

/// Evaluation interface the functionals need from a regression function:
/// counterfactual values and, for marginal effects, a treatment derivative.
pub trait RegressionFn {
    fn value(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<f64>;
    fn d_deriv(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<f64>;
}

impl RegressionFn for FittedFunction {
    fn value(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<f64> {
        FittedFunction::value(self, d, z)
    }
    fn d_deriv(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<f64> {
        FittedFunction::d_deriv(self, d, z)
    }
}

/// Closure-backed regression function for tests and population oracles.
pub struct FnRegression<F, G>
where
    F: Fn(f64, ArrayView1<'_, f64>) -> f64,
    G: Fn(f64, ArrayView1<'_, f64>) -> f64,
{
    pub value: F,
    pub deriv: G,
}

impl<F, G> RegressionFn for FnRegression<F, G>
where
    F: Fn(f64, ArrayView1<'_, f64>) -> f64,
    G: Fn(f64, ArrayView1<'_, f64>) -> f64,
{
    fn value(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<f64> {
        Ok((self.value)(d, z))
    }
    fn d_deriv(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<f64> {
        Ok((self.deriv)(d, z))
    }
}

/// CLI-facing functional tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionalKind {
    Ate,
    Att,
    Ame,
    #[serde(rename = "covshift")]
    CovShiftMean,
}

impl FunctionalKind {
    pub fn parse_token(token: &str) -> Result<Self> {
        match token {
            "ate" => Ok(Self::Ate),
            "att" => Ok(Self::Att),
            "ame" => Ok(Self::Ame),
            "covshift" => Ok(Self::CovShiftMean),
            other => Err(Error::InvalidData(format!(
                "unknown functional '{other}' (expected ate | att | ame | covshift)"
            ))),
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            Self::Ate => "ate",
            Self::Att => "att",
            Self::Ame => "ame",
            Self::CovShiftMean => "covshift",
        }
    }
}

/// A target functional with the metadata its score needs.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetFunctional {
    /// Average treatment effect of a binary treatment.
    Ate,
    /// Effect on the treated; carries the treated fraction, frozen before
    /// any nuisance fitting.
    Att { treated_prob: f64 },
    /// Average marginal effect of a scalar continuous treatment.
    Ame,
    /// Mean outcome under the target covariate distribution.
    CovShiftMean,
}

impl TargetFunctional {
    pub fn att(treated_prob: f64) -> Result<Self> {
        if !(treated_prob > 0.0 && treated_prob < 1.0) {
            return Err(Error::InvalidData(format!(
                "treated fraction must be in (0,1), got {treated_prob}"
            )));
        }
        Ok(Self::Att { treated_prob })
    }

    /// Build a functional for a dataset, freezing data-derived metadata
    /// (the ATT treated fraction) from the full sample.
    pub fn for_dataset(kind: FunctionalKind, data: &Dataset) -> Result<Self> {
        let f = match kind {
            FunctionalKind::Ate => Self::Ate,
            FunctionalKind::Att => Self::att(data.treated_fraction())?,
            FunctionalKind::Ame => Self::Ame,
            FunctionalKind::CovShiftMean => Self::CovShiftMean,
        };
        f.validate(data)?;
        Ok(f)
    }

    pub fn kind(&self) -> FunctionalKind {
        match self {
            Self::Ate => FunctionalKind::Ate,
            Self::Att { .. } => FunctionalKind::Att,
            Self::Ame => FunctionalKind::Ame,
            Self::CovShiftMean => FunctionalKind::CovShiftMean,
        }
    }

    /// Check dataset prerequisites: arms for binary effects, continuous
    /// treatment for marginal effects, role tags for covariate shift.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        match self {
            Self::Ate | Self::Att { .. } => {
                if !data.is_binary() {
                    return Err(Error::InvalidData(
                        "treatment-effect functionals need a binary treatment with both arms"
                            .into(),
                    ));
                }
            }
            Self::Ame => {
                if data.is_binary() {
                    return Err(Error::InvalidData(
                        "marginal effects need a continuous scalar treatment".into(),
                    ));
                }
            }
            Self::CovShiftMean => {
                if !data.has_roles()
                    || data.target_rows().is_empty()
                    || data.source_rows().is_empty()
                {
                    return Err(Error::InvalidData(
                        "covariate-shift mean needs role-tagged rows with both source and target"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Rows whose `m`-terms enter the estimating equation: target rows for
    /// covariate shift, all rows otherwise.
    pub fn scored_rows(&self, data: &Dataset) -> Vec<usize> {
        match self {
            Self::CovShiftMean => data.target_rows(),
            _ => (0..data.n()).collect(),
        }
    }

    /// Per-row `m(W_i, gamma)` over the scored rows.
    pub fn m_apply(&self, data: &Dataset, gamma: &dyn RegressionFn) -> Result<Vec<f64>> {
        self.validate(data)?;
        let rows = self.scored_rows(data);
        let mut out = Vec::with_capacity(rows.len());
        for i in rows {
            out.push(self.m_row(data, i, gamma)?);
        }
        Ok(out)
    }

    /// `m(W_i, gamma)` for a single row.
    pub fn m_row(&self, data: &Dataset, i: usize, gamma: &dyn RegressionFn) -> Result<f64> {
        let z = data.z_row(i);
        match self {
            Self::Ate => Ok(gamma.value(1.0, z)? - gamma.value(0.0, z)?),
            Self::Att { treated_prob } => {
                if data.d()[i] == 0.0 {
                    Ok(0.0)
                } else {
                    Ok((gamma.value(1.0, z)? - gamma.value(0.0, z)?) / treated_prob)
                }
            }
            Self::Ame => gamma.d_deriv(data.d()[i], z),
            Self::CovShiftMean => gamma.value(data.d()[i], z),
        }
    }

    /// Empirical mean of `m` applied to each basis coordinate: the linear
    /// term of the feasible Bregman risk and the right-hand side of the
    /// covariate-balancing conditions. Averages over target rows for the
    /// covariate-shift mean, over all rows otherwise.
    pub fn m_apply_basis(&self, data: &Dataset, basis: &BasisSpec) -> Result<Array1<f64>> {
        self.validate(data)?;
        let p = basis.p();
        let mut acc = Array1::<f64>::zeros(p);
        let rows = self.scored_rows(data);
        let denom = rows.len() as f64;
        let mut buf = vec![0.0; p];
        let mut buf2 = vec![0.0; p];
        for i in rows {
            let z = data.z_row(i);
            match self {
                Self::Ate => {
                    basis.eval_into(1.0, z, &mut buf)?;
                    basis.eval_into(0.0, z, &mut buf2)?;
                    for j in 0..p {
                        acc[j] += buf[j] - buf2[j];
                    }
                }
                Self::Att { treated_prob } => {
                    if data.d()[i] == 1.0 {
                        basis.eval_into(1.0, z, &mut buf)?;
                        basis.eval_into(0.0, z, &mut buf2)?;
                        for j in 0..p {
                            acc[j] += (buf[j] - buf2[j]) / treated_prob;
                        }
                    }
                }
                Self::Ame => {
                    basis.d_deriv_into(data.d()[i], z, &mut buf)?;
                    for j in 0..p {
                        acc[j] += buf[j];
                    }
                }
                Self::CovShiftMean => {
                    basis.eval_into(data.d()[i], z, &mut buf)?;
                    for j in 0..p {
                        acc[j] += buf[j];
                    }
                }
            }
        }
        Ok(acc / denom)
    }

    /// The true representer evaluated on every row; available only in
    /// simulations where the generating components are known. Never used by
    /// the estimators themselves.
    pub fn oracle_representer(&self, truth: &DgpTruth, data: &Dataset) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(data.n());
        for i in 0..data.n() {
            let z = data.z_row(i);
            let d = data.d()[i];
            let v = match self {
                Self::Ate => {
                    let pi = truth.propensity_at(z)?;
                    if d == 1.0 {
                        1.0 / pi
                    } else {
                        -1.0 / (1.0 - pi)
                    }
                }
                Self::Att { .. } => {
                    let p = truth.treated_fraction.ok_or_else(|| {
                        Error::InvalidData("oracle representer needs the treated fraction".into())
                    })?;
                    let pi = truth.propensity_at(z)?;
                    if d == 1.0 {
                        1.0 / p
                    } else {
                        -(pi / (1.0 - pi)) / p
                    }
                }
                Self::Ame => {
                    let score = truth.treatment_density_score.as_ref().ok_or_else(|| {
                        Error::InvalidData(
                            "oracle representer needs the treatment density score".into(),
                        )
                    })?;
                    -score(d, z)
                }
                Self::CovShiftMean => {
                    let ratio = truth.density_ratio.as_ref().ok_or_else(|| {
                        Error::InvalidData("oracle representer needs the density ratio".into())
                    })?;
                    ratio(z)
                }
            };
            out.push(v);
        }
        Ok(out)
    }
}

/// True data-generating components a simulation exposes so tests can build
/// oracle representers and population-level checks.
#[derive(Clone, Default)]
pub struct DgpTruth {
    pub propensity: Option<Arc<dyn Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync>>,
    pub treated_fraction: Option<f64>,
    /// `d/dd log f(d | z)` of the treatment's conditional density.
    pub treatment_density_score: Option<Arc<dyn Fn(f64, ArrayView1<'_, f64>) -> f64 + Send + Sync>>,
    /// Target-over-source covariate density ratio.
    pub density_ratio: Option<Arc<dyn Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync>>,
}

impl std::fmt::Debug for DgpTruth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DgpTruth")
            .field("propensity", &self.propensity.is_some())
            .field("treated_fraction", &self.treated_fraction)
            .field(
                "treatment_density_score",
                &self.treatment_density_score.is_some(),
            )
            .field("density_ratio", &self.density_ratio.is_some())
            .finish()
    }
}

impl DgpTruth {
    fn propensity_at(&self, z: ArrayView1<'_, f64>) -> Result<f64> {
        let f = self
            .propensity
            .as_ref()
            .ok_or_else(|| Error::InvalidData("oracle representer needs the propensity".into()))?;
        let pi = f(z);
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::Overlap(format!(
                "true propensity {pi} outside (0,1)"
            )));
        }
        Ok(pi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Role;
    use crate::fitted::Link;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn binary_data() -> Dataset {
        Dataset::from_parts(
            array![1.0, 0.0, 2.0, 1.0],
            array![1.0, 0.0, 1.0, 0.0],
            array![[0.5], [-1.0], [2.0], [0.0]],
        )
        .unwrap()
    }

    fn gamma_d() -> FittedFunction {
        // gamma(d, z) = d over features (1, d, z)
        let basis = BasisSpec::raw_plus_intercept(1, true).unwrap();
        FittedFunction::new(array![0.0, 1.0, 0.0], basis, Link::Identity).unwrap()
    }

    #[test]
    fn ate_of_pure_treatment_function_is_one() {
        let ds = binary_data();
        let m = TargetFunctional::Ate.m_apply(&ds, &gamma_d()).unwrap();
        assert!(m.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn att_scales_treated_rows_by_inverse_fraction() {
        let ds = binary_data();
        let f = TargetFunctional::att(0.5).unwrap();
        let m = f.m_apply(&ds, &gamma_d()).unwrap();
        assert_eq!(m, vec![2.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn ame_of_linear_function_is_slope() {
        let ds = Dataset::from_parts(
            array![0.0, 0.0, 0.0],
            array![0.3, -0.7, 1.4],
            array![[1.0], [2.0], [3.0]],
        )
        .unwrap();
        // gamma = 3 d + z
        let basis = BasisSpec::raw_plus_intercept(1, true).unwrap();
        let gamma = FittedFunction::new(array![0.0, 3.0, 1.0], basis, Link::Identity).unwrap();
        let m = TargetFunctional::Ame.m_apply(&ds, &gamma).unwrap();
        assert!(m.iter().all(|&v| (v - 3.0).abs() < 1e-14));
    }

    #[test]
    fn ame_rejects_split_basis() {
        let ds = Dataset::from_parts(
            array![0.0, 0.0],
            array![0.3, -0.7],
            array![[1.0], [2.0]],
        )
        .unwrap();
        let basis = BasisSpec::treatment_split(1, 1).unwrap();
        let gamma =
            FittedFunction::new(Array1::zeros(basis.p()), basis, Link::Identity).unwrap();
        assert!(TargetFunctional::Ame.m_apply(&ds, &gamma).is_err());
    }

    #[test]
    fn ate_split_intercept_basis_means() {
        let ds = binary_data();
        let basis = BasisSpec::treatment_split(1, 0).unwrap(); // phi(z) = (1)
        let m = TargetFunctional::Ate.m_apply_basis(&ds, &basis).unwrap();
        assert_relative_eq!(m[0], 1.0);
        assert_relative_eq!(m[1], -1.0);
    }

    #[test]
    fn covshift_means_over_target_rows() {
        let ds = Dataset::new(
            vec![Some(1.0), None, None, Some(0.0)],
            array![0.0, 0.0, 0.0, 0.0],
            array![[1.0], [2.0], [4.0], [-1.0]],
            Some(vec![Role::Source, Role::Target, Role::Target, Role::Source]),
        )
        .unwrap();
        let basis = BasisSpec::raw_plus_intercept(1, false).unwrap();
        let m = TargetFunctional::CovShiftMean.m_apply_basis(&ds, &basis).unwrap();
        assert_relative_eq!(m[0], 1.0);
        assert_relative_eq!(m[1], 3.0);
    }

    #[test]
    fn ame_zero_for_covariate_only_monomials() {
        let ds = Dataset::from_parts(
            array![0.0, 0.0],
            array![0.5, 1.5],
            array![[2.0], [3.0]],
        )
        .unwrap();
        // coords {1, d, z, dz, d^2, z^2}: z^2 is last
        let basis = BasisSpec::polynomial(1, 2, true).unwrap();
        let m = TargetFunctional::Ame.m_apply_basis(&ds, &basis).unwrap();
        assert_relative_eq!(m[5], 0.0);
        assert_relative_eq!(m[2], 0.0);
        assert_relative_eq!(m[1], 1.0);
    }

    #[test]
    fn oracle_representers_match_hand_values() {
        let ds = binary_data();
        let truth = DgpTruth {
            propensity: Some(Arc::new(|_| 0.5)),
            treated_fraction: Some(0.5),
            ..Default::default()
        };
        let ate = TargetFunctional::Ate.oracle_representer(&truth, &ds).unwrap();
        assert_eq!(ate, vec![2.0, -2.0, 2.0, -2.0]);
        let att = TargetFunctional::att(0.5)
            .unwrap()
            .oracle_representer(&truth, &ds)
            .unwrap();
        assert_eq!(att, vec![2.0, -2.0, 2.0, -2.0]);
    }

    #[test]
    fn oracle_rejects_overlap_violation() {
        let ds = binary_data();
        let truth = DgpTruth {
            propensity: Some(Arc::new(|z: ArrayView1<'_, f64>| if z[0] > 1.0 { 1.0 } else { 0.5 })),
            ..Default::default()
        };
        assert!(matches!(
            TargetFunctional::Ate.oracle_representer(&truth, &ds),
            Err(Error::Overlap(_))
        ));
    }

    #[test]
    fn unit_density_ratio_gives_ones() {
        let ds = Dataset::new(
            vec![Some(1.0), None],
            array![0.0, 0.0],
            array![[1.0], [2.0]],
            Some(vec![Role::Source, Role::Target]),
        )
        .unwrap();
        let truth = DgpTruth {
            density_ratio: Some(Arc::new(|_| 1.0)),
            ..Default::default()
        };
        let r = TargetFunctional::CovShiftMean
            .oracle_representer(&truth, &ds)
            .unwrap();
        assert_eq!(r, vec![1.0, 1.0]);
    }

    #[test]
    fn m_apply_is_linear_in_gamma() {
        let ds = binary_data();
        let basis = BasisSpec::treatment_split(1, 1).unwrap();
        let b1 = array![0.5, 1.0, -0.25, 2.0];
        let b2 = array![-1.0, 0.5, 0.75, 0.0];
        let f1 = FittedFunction::new(b1.clone(), basis.clone(), Link::Identity).unwrap();
        let f2 = FittedFunction::new(b2.clone(), basis.clone(), Link::Identity).unwrap();
        let fsum = FittedFunction::new(&b1 + &b2, basis, Link::Identity).unwrap();
        for f in [TargetFunctional::Ate, TargetFunctional::att(0.5).unwrap()] {
            let m1 = f.m_apply(&ds, &f1).unwrap();
            let m2 = f.m_apply(&ds, &f2).unwrap();
            let ms = f.m_apply(&ds, &fsum).unwrap();
            for i in 0..ds.n() {
                assert_relative_eq!(ms[i], m1[i] + m2[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn m_apply_basis_matches_unit_coefficient_means() {
        let ds = binary_data();
        let basis = BasisSpec::treatment_split(1, 1).unwrap();
        let f = TargetFunctional::Ate;
        let mb = f.m_apply_basis(&ds, &basis).unwrap();
        for j in 0..basis.p() {
            let mut beta = Array1::zeros(basis.p());
            beta[j] = 1.0;
            let coord =
                FittedFunction::new(beta, basis.clone(), Link::Identity).unwrap();
            let rows = f.m_apply(&ds, &coord).unwrap();
            let mean = rows.iter().sum::<f64>() / rows.len() as f64;
            assert_relative_eq!(mb[j], mean, epsilon = 1e-14);
        }
    }
}
