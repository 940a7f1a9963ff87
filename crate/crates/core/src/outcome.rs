//! Outcome-regression fitting: plain least squares, inverse-propensity
//! variance-weighted least squares, the TMLE fluctuation along a fitted
//! representer, and the alternation that reweights each side by the other's
//! current fit.

use ndarray::{Array1, Array2};

use crate::basis::BasisSpec;
use crate::bregman::ConvexGenerator;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fitted::{FittedFunction, Link};
use crate::functional::{RegressionFn, TargetFunctional};
use crate::linalg::solve_spd;
use crate::optimize::SolverSettings;
use crate::riesz::{fit_riesz_bregman, RieszFit, RieszModel};

/// Inverse propensities beyond this are treated as an overlap failure.
const MAX_INVERSE_PROPENSITY: f64 = 1e12;

/// An outcome regression, possibly shifted along fitted representer
/// directions by TMLE fluctuations: `gamma(x) = base(x) + sum_k eps_k a_k(x)`.
#[derive(Debug, Clone)]
pub struct GammaHat {
    pub base: FittedFunction,
    pub fluctuations: Vec<(f64, FittedFunction)>,
}

impl GammaHat {
    pub fn plain(base: FittedFunction) -> Self {
        Self {
            base,
            fluctuations: Vec::new(),
        }
    }
}

impl RegressionFn for GammaHat {
    fn value(&self, d: f64, z: ndarray::ArrayView1<'_, f64>) -> Result<f64> {
        let mut v = self.base.value(d, z)?;
        for (eps, dir) in &self.fluctuations {
            v += eps * dir.value(d, z)?;
        }
        Ok(v)
    }
    fn d_deriv(&self, d: f64, z: ndarray::ArrayView1<'_, f64>) -> Result<f64> {
        let mut v = self.base.d_deriv(d, z)?;
        for (eps, dir) in &self.fluctuations {
            v += eps * dir.d_deriv(d, z)?;
        }
        Ok(v)
    }
}

/// A fitted outcome regression with per-row residuals.
#[derive(Debug, Clone)]
pub struct OutcomeFit {
    pub gamma: GammaHat,
    /// `y_i - gamma(x_i)` on rows carrying outcomes, `0` elsewhere.
    pub residuals: Array1<f64>,
    /// Weights used by the weighted fit (`None` for plain least squares).
    pub weights: Option<Array1<f64>>,
    /// Fluctuation coefficient of the most recent TMLE update.
    pub tmle_eps: Option<f64>,
    pub gram_jittered: bool,
}

fn residuals_for(data: &Dataset, gamma: &GammaHat) -> Result<Array1<f64>> {
    let mut r = Array1::zeros(data.n());
    for i in 0..data.n() {
        if let Some(y) = data.outcome(i) {
            r[i] = y - gamma.value(data.d()[i], data.z_row(i))?;
        }
    }
    Ok(r)
}

fn weighted_normal_equations(
    data: &Dataset,
    basis: &BasisSpec,
    rows: &[usize],
    weight: impl Fn(usize) -> f64,
) -> Result<(Array1<f64>, bool)> {
    let p = basis.p();
    let n = rows.len() as f64;
    let mut gram = Array2::<f64>::zeros((p, p));
    let mut rhs = Array1::<f64>::zeros(p);
    let mut buf = vec![0.0; p];
    for &i in rows {
        let w = weight(i) / n;
        basis.eval_into(data.d()[i], data.z_row(i), &mut buf)?;
        let y = data
            .outcome(i)
            .ok_or_else(|| Error::InvalidData(format!("row {i} lacks an outcome")))?;
        for a in 0..p {
            rhs[a] += w * buf[a] * y;
            for b in a..p {
                gram[(a, b)] += w * buf[a] * buf[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let sol = solve_spd(gram.view(), rhs.view())?;
    Ok((sol.x, sol.jittered))
}

/// Least-squares outcome regression over the rows carrying outcomes.
pub fn fit_outcome_ls(data: &Dataset, basis: &BasisSpec) -> Result<OutcomeFit> {
    let rows = data.source_rows();
    if rows.is_empty() {
        return Err(Error::InvalidData("no rows with outcomes to fit".into()));
    }
    let (beta, jittered) = weighted_normal_equations(data, basis, &rows, |_| 1.0)?;
    let gamma = GammaHat::plain(FittedFunction::new(beta, basis.clone(), Link::Identity)?);
    let residuals = residuals_for(data, &gamma)?;
    Ok(OutcomeFit {
        gamma,
        residuals,
        weights: None,
        tmle_eps: None,
        gram_jittered: jittered,
    })
}

/// Inverse-propensity variance-weighted least squares: row `i` enters with
/// weight `(1/pi)(1/pi - 1)` when treated and the mirrored control form
/// otherwise, where the per-arm inverse propensities come from the fitted
/// logistic representer. With a constant propensity of 1/2 every weight is
/// 2 and the fit reduces to plain least squares.
pub fn fit_outcome_weighted(
    data: &Dataset,
    basis: &BasisSpec,
    propensity: &FittedFunction,
) -> Result<OutcomeFit> {
    if !data.is_binary() {
        return Err(Error::InvalidData(
            "weighted outcome regression needs a binary treatment".into(),
        ));
    }
    if propensity.link != Link::InversePropensityLogistic {
        return Err(Error::Unsupported(
            "weighted outcome regression needs an inverse-propensity fit".into(),
        ));
    }
    let rows = data.source_rows();
    let mut w = Array1::zeros(data.n());
    for &i in &rows {
        let r = propensity.arm_inverse_propensity(data.d()[i], data.z_row(i))?;
        if r >= MAX_INVERSE_PROPENSITY {
            return Err(Error::Overlap(format!(
                "propensity within 1e-12 of a boundary on row {i}"
            )));
        }
        w[i] = r * (r - 1.0);
    }
    let (beta, jittered) = weighted_normal_equations(data, basis, &rows, |i| w[i])?;
    let gamma = GammaHat::plain(FittedFunction::new(beta, basis.clone(), Link::Identity)?);
    let residuals = residuals_for(data, &gamma)?;
    Ok(OutcomeFit {
        gamma,
        residuals,
        weights: Some(w),
        tmle_eps: None,
        gram_jittered: jittered,
    })
}

/// One-dimensional targeted update of the outcome fit along the fitted
/// representer: `eps = sum a res / sum a^2`, `gamma' = gamma + eps a`. The
/// update zeroes the representer-weighted residual sum by construction, and
/// applying it twice leaves the fit unchanged.
pub fn tmle_fluctuate(data: &Dataset, fit: &OutcomeFit, riesz: &RieszFit) -> Result<OutcomeFit> {
    let rows = data.source_rows();
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in &rows {
        let a = riesz.alpha_rows[i];
        num += a * fit.residuals[i];
        den += a * a;
    }
    if den <= 0.0 {
        return Err(Error::Degenerate(
            "representer is identically zero; no fluctuation direction".into(),
        ));
    }
    let eps = num / den;
    let direction = riesz.representer()?;
    let mut gamma = fit.gamma.clone();
    gamma.fluctuations.push((eps, direction));
    let residuals = residuals_for(data, &gamma)?;
    Ok(OutcomeFit {
        gamma,
        residuals,
        weights: fit.weights.clone(),
        tmle_eps: Some(eps),
        gram_jittered: fit.gram_jittered,
    })
}

/// Settings for the alternating weighted-fit loop.
#[derive(Debug, Clone)]
pub struct IterativeConfig {
    /// Representer model; must expose per-arm inverse propensities
    /// (`InvPropensityLogistic`) because the outcome step reweights by them.
    pub model: RieszModel,
    pub generator: ConvexGenerator,
    pub ridge: f64,
    pub solver: SolverSettings,
    /// Number of alternation rounds `T >= 1`.
    pub rounds: usize,
}

/// Per-round objective values logged by the alternation. The loop carries
/// no convergence guarantee, so these are monitoring output only.
#[derive(Debug, Clone, Default)]
pub struct IterativeTrace {
    pub riesz_objectives: Vec<f64>,
    pub outcome_objectives: Vec<f64>,
    pub score_variances: Vec<f64>,
    pub degenerate_weight_rounds: Vec<usize>,
}

/// Alternate representer and outcome fits: round `t` reweights the
/// representer risk by the squared residuals of round `t-1`'s outcome fit,
/// then refits the outcome under the new inverse-propensity weights.
/// Returns the round-`T` fits.
pub fn iterative_fit(
    data: &Dataset,
    functional: &TargetFunctional,
    gamma_basis: &BasisSpec,
    cfg: &IterativeConfig,
) -> Result<(OutcomeFit, RieszFit, IterativeTrace)> {
    if cfg.rounds == 0 {
        return Err(Error::InvalidData("iterative fit needs at least one round".into()));
    }
    if !matches!(cfg.model, RieszModel::InvPropensityLogistic { .. }) {
        return Err(Error::Unsupported(
            "the alternating algorithm needs the inverse-propensity model \
             (the outcome step reweights by fitted propensities)"
                .into(),
        ));
    }
    let mut outcome = fit_outcome_ls(data, gamma_basis)?;
    let mut trace = IterativeTrace::default();
    let mut riesz = None;

    for round in 1..=cfg.rounds {
        let sq: Array1<f64> = outcome.residuals.mapv(|r| r * r);
        let max_w = sq.iter().fold(0.0f64, |m, &v| m.max(v));
        let weights = if max_w <= 1e-12 {
            // noiseless outcome: squared residuals vanish, the weighted
            // risk is degenerate; fall back to the unweighted fit
            log::warn!("round {round}: residual weights vanished, fitting unweighted");
            trace.degenerate_weight_rounds.push(round);
            None
        } else {
            Some(sq)
        };
        let fit = fit_riesz_bregman(
            data,
            functional,
            &cfg.model,
            cfg.generator,
            weights.as_ref(),
            cfg.ridge,
            cfg.solver,
        )?;
        trace.riesz_objectives.push(fit.report.objective);

        let propensity = fit.representer()?;
        outcome = fit_outcome_weighted(data, gamma_basis, &propensity)?;
        let wls_obj: f64 = {
            let rows = data.source_rows();
            let w = outcome.weights.as_ref().expect("weighted fit");
            rows.iter()
                .map(|&i| w[i] * outcome.residuals[i] * outcome.residuals[i])
                .sum::<f64>()
                / rows.len() as f64
        };
        trace.outcome_objectives.push(wls_obj);

        // monitored orthogonal-score variance at this round's fits
        let m_rows = functional.m_apply(data, &outcome.gamma)?;
        let scored = functional.scored_rows(data);
        let mut vals = Vec::with_capacity(scored.len());
        for (k, &i) in scored.iter().enumerate() {
            vals.push(m_rows[k] + fit.alpha_rows[i] * outcome.residuals[i]);
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (vals.len().saturating_sub(1)) as f64;
        trace.score_variances.push(var);

        riesz = Some(fit);
    }
    Ok((outcome, riesz.expect("at least one round"), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{AteLogisticParams, DgpSpec};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::array;

    #[test]
    fn interpolates_noiseless_outcomes() {
        let spec = DgpSpec::AteLogistic {
            params: AteLogisticParams {
                noise_sd: 0.0,
                ..Default::default()
            },
            seed: 2,
        };
        let ds = spec.sample(80).unwrap();
        let basis = BasisSpec::treatment_split(ds.q(), 1).unwrap();
        let fit = fit_outcome_ls(&ds, &basis).unwrap();
        for i in 0..ds.n() {
            assert_abs_diff_eq!(fit.residuals[i], 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn intercept_only_fit_is_the_mean() {
        let ds = Dataset::from_parts(
            array![1.0, 2.0, 3.0],
            array![1.0, 0.0, 1.0],
            array![[0.0], [0.0], [0.0]],
        )
        .unwrap();
        let basis = BasisSpec::polynomial(1, 0, false).unwrap();
        let fit = fit_outcome_ls(&ds, &basis).unwrap();
        let v = fit.gamma.value(1.0, array![0.0].view()).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let ds = DgpSpec::ate_logistic(6).sample(300).unwrap();
        let basis = BasisSpec::treatment_split(ds.q(), 1).unwrap();
        let fit = fit_outcome_ls(&ds, &basis).unwrap();
        let mut dot = vec![0.0; basis.p()];
        for i in 0..ds.n() {
            let phi = basis.eval(ds.d()[i], ds.z_row(i)).unwrap();
            for j in 0..basis.p() {
                dot[j] += phi[j] * fit.residuals[i] / ds.n() as f64;
            }
        }
        for (j, v) in dot.iter().enumerate() {
            assert!(v.abs() <= 1e-8, "column {j}: residual projection {v}");
        }
    }

    fn constant_propensity_half(q: usize) -> FittedFunction {
        let basis = BasisSpec::raw_plus_intercept(q, false).unwrap();
        FittedFunction::new(
            Array1::zeros(basis.p()),
            basis,
            Link::InversePropensityLogistic,
        )
        .unwrap()
    }

    #[test]
    fn constant_weights_reduce_to_plain_ls() {
        let ds = DgpSpec::ate_logistic(8).sample(120).unwrap();
        let basis = BasisSpec::treatment_split(ds.q(), 1).unwrap();
        let plain = fit_outcome_ls(&ds, &basis).unwrap();
        let weighted =
            fit_outcome_weighted(&ds, &basis, &constant_propensity_half(ds.q())).unwrap();
        // pi = 1/2 everywhere: weight 2 on every row
        for w in weighted.weights.as_ref().unwrap().iter() {
            assert_relative_eq!(*w, 2.0, epsilon = 1e-12);
        }
        for (a, b) in plain
            .gamma
            .base
            .beta
            .iter()
            .zip(weighted.gamma.base.beta.iter())
        {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn noiseless_outcome_fits_exactly_under_any_weights() {
        let spec = DgpSpec::AteLogistic {
            params: AteLogisticParams {
                noise_sd: 0.0,
                ..Default::default()
            },
            seed: 12,
        };
        let ds = spec.sample(100).unwrap();
        let basis = BasisSpec::treatment_split(ds.q(), 1).unwrap();
        // an arbitrary (non-constant) propensity model
        let zb = BasisSpec::raw_plus_intercept(ds.q(), false).unwrap();
        let mut beta = Array1::zeros(zb.p());
        beta[1] = 0.7;
        let pi = FittedFunction::new(beta, zb, Link::InversePropensityLogistic).unwrap();
        let fit = fit_outcome_weighted(&ds, &basis, &pi).unwrap();
        for i in 0..ds.n() {
            assert_abs_diff_eq!(fit.residuals[i], 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn boundary_propensity_rejected() {
        let ds = DgpSpec::ate_logistic(3).sample(50).unwrap();
        let basis = BasisSpec::treatment_split(ds.q(), 1).unwrap();
        let zb = BasisSpec::raw_plus_intercept(ds.q(), false).unwrap();
        let mut beta = Array1::zeros(zb.p());
        beta[0] = 100.0; // saturates the cap: r0 = 1 + e^36 > 1e12
        let pi = FittedFunction::new(beta, zb, Link::InversePropensityLogistic).unwrap();
        assert!(matches!(
            fit_outcome_weighted(&ds, &basis, &pi),
            Err(Error::Overlap(_))
        ));
    }

    fn unit_representer(ds: &Dataset) -> RieszFit {
        let basis = BasisSpec::polynomial(ds.q(), 0, false).unwrap();
        let model = RieszModel::LinearInBasis { basis };
        let beta = array![1.0];
        RieszFit {
            alpha_rows: Array1::ones(ds.n()),
            report: crate::optimize::SolveReport {
                beta: beta.clone(),
                grad_norm: 0.0,
                iterations: 0,
                converged: true,
                objective: 0.0,
            },
            beta,
            model,
            generator: ConvexGenerator::Ls,
            weights: None,
            degenerate_weights: false,
            saturation_count: 0,
            gram_jittered: false,
        }
    }

    #[test]
    fn fluctuation_solves_hand_example() {
        // two rows, alpha = (1,1), residuals (1,3): eps = 4/2 = 2
        let ds = Dataset::from_parts(
            array![1.0, 3.0],
            array![1.0, 0.0],
            array![[0.0], [0.0]],
        )
        .unwrap();
        let basis = BasisSpec::polynomial(1, 0, false).unwrap();
        let zero_gamma = GammaHat::plain(
            FittedFunction::new(array![0.0], basis, Link::Identity).unwrap(),
        );
        let residuals = residuals_for(&ds, &zero_gamma).unwrap();
        let fit0 = OutcomeFit {
            gamma: zero_gamma,
            residuals,
            weights: None,
            tmle_eps: None,
            gram_jittered: false,
        };
        let riesz = unit_representer(&ds);
        let fit1 = tmle_fluctuate(&ds, &fit0, &riesz).unwrap();
        assert_relative_eq!(fit1.tmle_eps.unwrap(), 2.0);
        // score equation holds
        let score: f64 = (0..2).map(|i| riesz.alpha_rows[i] * fit1.residuals[i]).sum();
        assert_abs_diff_eq!(score, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fluctuation_is_idempotent_and_scale_invariant() {
        let ds = DgpSpec::ate_logistic(21).sample(150).unwrap();
        let basis = BasisSpec::treatment_split(ds.q(), 1).unwrap();
        let fit0 = fit_outcome_ls(&ds, &basis).unwrap();
        let riesz = crate::riesz::fit_riesz_ls_closed_form(
            &ds,
            &TargetFunctional::Ate,
            &BasisSpec::treatment_split(ds.q(), 0).unwrap(),
            0.0,
        )
        .unwrap();
        let fit1 = tmle_fluctuate(&ds, &fit0, &riesz).unwrap();
        let fit2 = tmle_fluctuate(&ds, &fit1, &riesz).unwrap();
        assert_abs_diff_eq!(fit2.tmle_eps.unwrap(), 0.0, epsilon = 1e-12);

        // scaling the representer by c rescales eps by 1/c, same gamma'
        let mut scaled = riesz.clone();
        scaled.alpha_rows *= 4.0;
        scaled.beta *= 4.0;
        let fit1s = tmle_fluctuate(&ds, &fit0, &scaled).unwrap();
        assert_relative_eq!(
            fit1s.tmle_eps.unwrap(),
            fit1.tmle_eps.unwrap() / 4.0,
            epsilon = 1e-12
        );
        for i in 0..ds.n() {
            assert_relative_eq!(fit1s.residuals[i], fit1.residuals[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_representer_rejected() {
        let ds = DgpSpec::ate_logistic(4).sample(30).unwrap();
        let basis = BasisSpec::treatment_split(ds.q(), 1).unwrap();
        let fit0 = fit_outcome_ls(&ds, &basis).unwrap();
        let mut riesz = unit_representer(&ds);
        riesz.alpha_rows = Array1::zeros(ds.n());
        assert!(matches!(
            tmle_fluctuate(&ds, &fit0, &riesz),
            Err(Error::Degenerate(_))
        ));
    }

    fn iterative_config(ds: &Dataset, rounds: usize) -> IterativeConfig {
        IterativeConfig {
            model: RieszModel::InvPropensityLogistic {
                basis: BasisSpec::raw_plus_intercept(ds.q(), false).unwrap(),
            },
            generator: ConvexGenerator::Kl,
            ridge: 0.0,
            solver: SolverSettings::default(),
            rounds,
        }
    }

    #[test]
    fn single_round_matches_two_step() {
        let ds = DgpSpec::ate_logistic(33).sample(400).unwrap();
        let gamma_basis = BasisSpec::treatment_split(ds.q(), 1).unwrap();
        let cfg = iterative_config(&ds, 1);
        let (_, riesz_iter, trace) =
            iterative_fit(&ds, &TargetFunctional::Ate, &gamma_basis, &cfg).unwrap();

        // the two-step procedure: unweighted LS outcome, then the weighted
        // representer fit at those residuals
        let gamma0 = fit_outcome_ls(&ds, &gamma_basis).unwrap();
        let w = gamma0.residuals.mapv(|r| r * r);
        let direct = fit_riesz_bregman(
            &ds,
            &TargetFunctional::Ate,
            &cfg.model,
            cfg.generator,
            Some(&w),
            0.0,
            cfg.solver,
        )
        .unwrap();
        for (a, b) in riesz_iter.beta.iter().zip(direct.beta.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
        assert_eq!(trace.riesz_objectives.len(), 1);
    }

    #[test]
    fn noiseless_outcome_falls_back_to_unweighted() {
        let spec = DgpSpec::AteLogistic {
            params: AteLogisticParams {
                noise_sd: 0.0,
                ..Default::default()
            },
            seed: 3,
        };
        let ds = spec.sample(200).unwrap();
        let gamma_basis = BasisSpec::treatment_split(ds.q(), 1).unwrap();
        let cfg = iterative_config(&ds, 1);
        let (_, riesz, trace) =
            iterative_fit(&ds, &TargetFunctional::Ate, &gamma_basis, &cfg).unwrap();
        assert_eq!(trace.degenerate_weight_rounds, vec![1]);
        assert!(riesz.weights.is_none());
        assert!(riesz.report.converged);
    }

    #[test]
    fn two_rounds_log_objectives() {
        let ds = DgpSpec::ate_logistic(44).sample(300).unwrap();
        let gamma_basis = BasisSpec::treatment_split(ds.q(), 1).unwrap();
        let cfg = iterative_config(&ds, 2);
        let (outcome, riesz, trace) =
            iterative_fit(&ds, &TargetFunctional::Ate, &gamma_basis, &cfg).unwrap();
        assert_eq!(trace.riesz_objectives.len(), 2);
        assert_eq!(trace.outcome_objectives.len(), 2);
        assert_eq!(trace.score_variances.len(), 2);
        assert!(riesz.report.converged);
        assert!(outcome.weights.is_some());
    }

    #[test]
    fn iterative_rejects_linear_model() {
        let ds = DgpSpec::ate_logistic(5).sample(60).unwrap();
        let gamma_basis = BasisSpec::treatment_split(ds.q(), 1).unwrap();
        let cfg = IterativeConfig {
            model: RieszModel::LinearInBasis {
                basis: BasisSpec::treatment_split(ds.q(), 1).unwrap(),
            },
            generator: ConvexGenerator::Ls,
            ridge: 0.0,
            solver: SolverSettings::default(),
            rounds: 1,
        };
        assert!(matches!(
            iterative_fit(&ds, &TargetFunctional::Ate, &gamma_basis, &cfg),
            Err(Error::Unsupported(_))
        ));
    }
}
