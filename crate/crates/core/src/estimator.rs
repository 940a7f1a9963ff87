//! Assemble the orthogonal score, solve the estimating equation, cross-fit
//! the nuisances, and report the point estimate with a plain
//! influence-function standard error.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::BasisSpec;
use crate::bregman::ConvexGenerator;
use crate::data::{Dataset, Role};
use crate::error::{Error, Result};
use crate::functional::{FunctionalKind, RegressionFn, TargetFunctional};
use crate::optimize::SolverSettings;
use crate::outcome::{
    fit_outcome_ls, iterative_fit, tmle_fluctuate, GammaHat, IterativeConfig, OutcomeFit,
};
use crate::riesz::{
    balance_residual, fit_riesz_bregman, fit_riesz_ls_closed_form, RieszFit, RieszModel,
};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

/// Everything the estimators need to know about how to fit nuisances.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub functional: FunctionalKind,
    pub gamma_basis: BasisSpec,
    pub riesz_model: RieszModel,
    pub generator: ConvexGenerator,
    /// Reweight the representer risk by squared outcome residuals.
    pub weighted: bool,
    pub ridge: f64,
    pub tmle: bool,
    /// Alternation rounds; 0 fits each nuisance once.
    pub iterations: usize,
    pub solver: SolverSettings,
}

/// Method descriptor carried on every estimate (serializable provenance).
#[derive(Debug, Clone, serde::Serialize)]
pub struct MethodInfo {
    pub functional: String,
    pub riesz_model: String,
    pub loss: String,
    pub weighted: bool,
    pub tmle: bool,
    pub iterations: usize,
    pub ridge: f64,
    pub folds: usize,
    pub seed: Option<u64>,
}

/// Secondary numbers reported alongside the point estimate.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EstimateDiagnostics {
    /// Plug-in estimate `(1/n) sum m(W_i, gamma_hat)` at the final outcome fit.
    pub theta_plugin: f64,
    /// Plug-in at the TMLE-updated fit, when TMLE ran.
    pub theta_tmle_plugin: Option<f64>,
    /// Orthogonal-score estimate at the pre-TMLE outcome fit.
    pub theta_initial: Option<f64>,
    /// Sup-norm of the representer's balance residual on its own basis
    /// (max over folds for cross-fitting).
    pub balance_sup_norm: Option<f64>,
    pub tmle_eps: Vec<f64>,
    pub saturation_count: usize,
    pub degenerate_weights: bool,
    pub gram_jittered: bool,
    pub warnings: Vec<String>,
}

/// Point estimate with inference and per-row scores.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub theta_hat: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    /// Per-row orthogonal scores at `theta_hat` (mean zero by construction).
    pub scores: Vec<f64>,
    pub method: MethodInfo,
    pub diagnostics: EstimateDiagnostics,
}

// ---------------------------------------------------------------------------
// Score assembly
// ---------------------------------------------------------------------------

/// Per-row orthogonal score `m(W_i, gamma) + alpha_i (y_i - gamma(x_i)) - theta`.
///
/// For the two-sample covariate-shift functional the score is fused: source
/// rows carry the rescaled residual term, target rows the rescaled
/// `m`-term, so the pooled mean is the estimating equation.
pub fn orthogonal_score(
    functional: &TargetFunctional,
    data: &Dataset,
    gamma: &dyn RegressionFn,
    alpha_rows: &Array1<f64>,
    theta: f64,
) -> Result<Vec<f64>> {
    if alpha_rows.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "representer rows ({}) do not match data rows ({})",
            alpha_rows.len(),
            data.n()
        )));
    }
    let n = data.n() as f64;
    let mut scores = vec![0.0; data.n()];
    if functional.kind() == FunctionalKind::CovShiftMean {
        let n_s = data.source_rows().len() as f64;
        let n_t = data.target_rows().len() as f64;
        for i in 0..data.n() {
            let z = data.z_row(i);
            let d = data.d()[i];
            scores[i] = match data.role(i) {
                Role::Source => {
                    let resid = data.outcome(i).ok_or_else(|| {
                        Error::InvalidData(format!("source row {i} lacks an outcome"))
                    })? - gamma.value(d, z)?;
                    (n / n_s) * alpha_rows[i] * resid
                }
                Role::Target => (n / n_t) * (gamma.value(d, z)? - theta),
            };
        }
    } else {
        for i in 0..data.n() {
            let m = functional.m_row(data, i, gamma)?;
            let resid = data
                .outcome(i)
                .ok_or_else(|| Error::InvalidData(format!("row {i} lacks an outcome")))?
                - gamma.value(data.d()[i], data.z_row(i))?;
            scores[i] = m + alpha_rows[i] * resid - theta;
        }
    }
    Ok(scores)
}

/// The `theta` solving the empirical estimating equation for the given
/// nuisances (the scores at this value have mean zero).
pub fn solve_theta(
    functional: &TargetFunctional,
    data: &Dataset,
    gamma: &dyn RegressionFn,
    alpha_rows: &Array1<f64>,
) -> Result<f64> {
    let scores = orthogonal_score(functional, data, gamma, alpha_rows, 0.0)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Influence-function standard error: sample standard deviation of the
/// scores (denominator `n - 1`) over the square root of `n`.
pub fn standard_error(scores: &[f64]) -> Result<f64> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InvalidData("standard error needs n >= 2".into()));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
    Ok((var / n as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Nuisance fitting shared by the full-sample and cross-fit paths
// ---------------------------------------------------------------------------

struct Nuisances {
    outcome: OutcomeFit,
    riesz: RieszFit,
    theta_initial: Option<f64>,
    tmle_eps: Option<f64>,
    warnings: Vec<String>,
}

/// Fit outcome and representer on `train`. When `fluctuate_on` is given,
/// the TMLE step solves its epsilon on those rows (the held-out fold)
/// instead of the training rows.
fn fit_nuisances(
    train: &Dataset,
    config: &EstimatorConfig,
    functional: &TargetFunctional,
    fluctuate_on: Option<&Dataset>,
) -> Result<Nuisances> {
    let mut warnings = Vec::new();

    let (outcome0, riesz) = if config.iterations > 0 {
        let cfg = IterativeConfig {
            model: config.riesz_model.clone(),
            generator: config.generator,
            ridge: config.ridge,
            solver: config.solver,
            rounds: config.iterations,
        };
        let (o, r, trace) = iterative_fit(train, functional, &config.gamma_basis, &cfg)?;
        if !trace.degenerate_weight_rounds.is_empty() {
            warnings.push(format!(
                "residual weights vanished in rounds {:?}; representer fit unweighted",
                trace.degenerate_weight_rounds
            ));
        }
        (o, r)
    } else {
        let outcome = fit_outcome_ls(train, &config.gamma_basis)?;
        let riesz = match (&config.riesz_model, &config.generator, config.weighted) {
            (RieszModel::LinearInBasis { basis }, ConvexGenerator::Ls, false) => {
                fit_riesz_ls_closed_form(train, functional, basis, config.ridge)?
            }
            _ => {
                let weights = if config.weighted {
                    Some(outcome.residuals.mapv(|r| r * r))
                } else {
                    None
                };
                fit_riesz_bregman(
                    train,
                    functional,
                    &config.riesz_model,
                    config.generator,
                    weights.as_ref(),
                    config.ridge,
                    config.solver,
                )?
            }
        };
        (outcome, riesz)
    };
    if !riesz.report.converged {
        warnings.push(format!(
            "representer solve stopped unconverged (gradient norm {:.3e})",
            riesz.report.grad_norm
        ));
    }
    if riesz.degenerate_weights {
        warnings.push("representer fit skipped: all residual weights were zero".into());
    }

    let mut tmle_eps = None;
    let mut theta_initial = None;
    let outcome = if config.tmle {
        match fluctuate_on {
            None => {
                theta_initial = Some(solve_theta(
                    functional,
                    train,
                    &outcome0.gamma,
                    &riesz.alpha_rows,
                )?);
                let updated = tmle_fluctuate(train, &outcome0, &riesz)?;
                tmle_eps = updated.tmle_eps;
                updated
            }
            Some(fold) => {
                // out-of-fold nuisances, epsilon solved on the fold rows
                let rep = riesz.representer()?;
                let mut alpha_fold = Array1::zeros(fold.n());
                for i in 0..fold.n() {
                    alpha_fold[i] = rep.value(fold.d()[i], fold.z_row(i))?;
                }
                theta_initial = Some(solve_theta(
                    functional,
                    fold,
                    &outcome0.gamma,
                    &alpha_fold,
                )?);
                let mut shadow = outcome0.clone();
                shadow.residuals = {
                    let mut r = Array1::zeros(fold.n());
                    for i in 0..fold.n() {
                        if let Some(y) = fold.outcome(i) {
                            r[i] = y - outcome0.gamma.value(fold.d()[i], fold.z_row(i))?;
                        }
                    }
                    r
                };
                let mut shadow_riesz = riesz.clone();
                shadow_riesz.alpha_rows = alpha_fold;
                let updated = tmle_fluctuate(fold, &shadow, &shadow_riesz)?;
                tmle_eps = updated.tmle_eps;
                OutcomeFit {
                    residuals: outcome0.residuals.clone(),
                    gamma: updated.gamma,
                    weights: outcome0.weights.clone(),
                    tmle_eps: updated.tmle_eps,
                    gram_jittered: outcome0.gram_jittered,
                }
            }
        }
    } else {
        outcome0
    };

    Ok(Nuisances {
        outcome,
        riesz,
        theta_initial,
        tmle_eps,
        warnings,
    })
}

fn method_info(config: &EstimatorConfig, folds: usize, seed: Option<u64>) -> MethodInfo {
    MethodInfo {
        functional: config.functional.token().to_string(),
        riesz_model: config.riesz_model.token().to_string(),
        loss: config.generator.token(),
        weighted: config.weighted,
        tmle: config.tmle,
        iterations: config.iterations,
        ridge: config.ridge,
        folds,
        seed,
    }
}

fn plugin_theta(
    functional: &TargetFunctional,
    data: &Dataset,
    gamma: &GammaHat,
) -> Result<f64> {
    let m = functional.m_apply(data, gamma)?;
    Ok(m.iter().sum::<f64>() / m.len() as f64)
}

/// Estimate on the full sample: nuisances and the estimating equation share
/// all rows.
pub fn estimate_full_sample(data: &Dataset, config: &EstimatorConfig) -> Result<Estimate> {
    let functional = TargetFunctional::for_dataset(config.functional, data)?;
    let nuis = fit_nuisances(data, config, &functional, None)?;

    let theta_hat = solve_theta(&functional, data, &nuis.outcome.gamma, &nuis.riesz.alpha_rows)?;
    let scores = orthogonal_score(
        &functional,
        data,
        &nuis.outcome.gamma,
        &nuis.riesz.alpha_rows,
        theta_hat,
    )?;
    let se = standard_error(&scores)?;

    let balance = balance_residual(&nuis.riesz, data, &functional, nuis.riesz.model.basis())?;
    let theta_plugin = plugin_theta(&functional, data, &nuis.outcome.gamma)?;

    let diagnostics = EstimateDiagnostics {
        theta_plugin,
        theta_tmle_plugin: config.tmle.then_some(theta_plugin),
        theta_initial: nuis.theta_initial,
        balance_sup_norm: Some(balance.iter().fold(0.0f64, |m, v| m.max(v.abs()))),
        tmle_eps: nuis.tmle_eps.into_iter().collect(),
        saturation_count: nuis.riesz.saturation_count,
        degenerate_weights: nuis.riesz.degenerate_weights,
        gram_jittered: nuis.riesz.gram_jittered || nuis.outcome.gram_jittered,
        warnings: nuis.warnings,
    };
    Ok(Estimate {
        theta_hat,
        se,
        ci95: (theta_hat - Z_95 * se, theta_hat + Z_95 * se),
        scores,
        method: method_info(config, 1, None),
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// Cross-fitting
// ---------------------------------------------------------------------------

/// Fold assignment for cross-fitting. Stratified by treatment arm for
/// binary data and by sample role for two-sample data, so every fold (and
/// hence every training complement) keeps both groups.
#[derive(Debug, Clone)]
pub struct CrossFitPlan {
    pub k: usize,
    /// Fold index per row.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl CrossFitPlan {
    pub fn stratified(data: &Dataset, k: usize, seed: u64) -> Result<Self> {
        if k < 2 || k > data.n() {
            return Err(Error::InvalidData(format!(
                "fold count must lie in [2, n], got {k}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let strata: Vec<Vec<usize>> = if data.has_roles() {
            let mut src = data.source_rows();
            let mut tgt = data.target_rows();
            src.shuffle(&mut rng);
            tgt.shuffle(&mut rng);
            vec![src, tgt]
        } else if data.is_binary() {
            let mut treated: Vec<usize> =
                (0..data.n()).filter(|&i| data.d()[i] == 1.0).collect();
            let mut control: Vec<usize> =
                (0..data.n()).filter(|&i| data.d()[i] == 0.0).collect();
            treated.shuffle(&mut rng);
            control.shuffle(&mut rng);
            vec![treated, control]
        } else {
            let mut all: Vec<usize> = (0..data.n()).collect();
            all.shuffle(&mut rng);
            vec![all]
        };
        let mut assignment = vec![0usize; data.n()];
        for stratum in strata {
            for (pos, row) in stratum.into_iter().enumerate() {
                assignment[row] = pos % k;
            }
        }
        Ok(Self {
            k,
            assignment,
            seed,
        })
    }

    pub fn from_assignment(assignment: Vec<usize>, k: usize, seed: u64) -> Result<Self> {
        if assignment.iter().any(|&f| f >= k) {
            return Err(Error::InvalidData("fold index out of range".into()));
        }
        Ok(Self {
            k,
            assignment,
            seed,
        })
    }

    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn complement_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    /// Every fold must be nonempty; binary-treatment folds need both arms
    /// and role-tagged folds both roles (stratified assignment guarantees
    /// this whenever the group sizes allow).
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.assignment.len() != data.n() {
            return Err(Error::DimensionMismatch(format!(
                "plan covers {} rows, data has {}",
                self.assignment.len(),
                data.n()
            )));
        }
        for fold in 0..self.k {
            let rows = self.fold_rows(fold);
            if rows.is_empty() {
                return Err(Error::InvalidData(format!("fold {fold} is empty")));
            }
            if data.is_binary() && !data.has_roles() {
                let treated = rows.iter().any(|&i| data.d()[i] == 1.0);
                let control = rows.iter().any(|&i| data.d()[i] == 0.0);
                if !(treated && control) {
                    return Err(Error::InvalidData(format!(
                        "fold {fold} lacks a treatment arm; use stratified folds"
                    )));
                }
            }
            if data.has_roles() {
                let src = rows.iter().any(|&i| data.role(i) == Role::Source);
                let tgt = rows.iter().any(|&i| data.role(i) == Role::Target);
                if !(src && tgt) {
                    return Err(Error::InvalidData(format!(
                        "fold {fold} lacks a sample role; use stratified folds"
                    )));
                }
            }
        }
        Ok(())
    }
}

struct FoldPieces {
    rows: Vec<usize>,
    m_vals: Vec<f64>,
    resid: Vec<f64>,
    alpha: Vec<f64>,
    gamma_vals: Vec<f64>,
    theta_initial: Option<f64>,
    tmle_eps: Option<f64>,
    balance_sup: f64,
    saturation: usize,
    degenerate: bool,
    jittered: bool,
    warnings: Vec<String>,
}

/// Cross-fit estimate: nuisances for each fold are fit on its complement,
/// the pooled scores solve one estimating equation. Deterministic given the
/// plan; folds are processed in parallel and merged by index.
pub fn estimate_crossfit(
    data: &Dataset,
    config: &EstimatorConfig,
    plan: &CrossFitPlan,
) -> Result<Estimate> {
    if plan.k < 2 {
        return Err(Error::InvalidData("cross-fitting needs K >= 2".into()));
    }
    plan.validate(data)?;
    let functional = TargetFunctional::for_dataset(config.functional, data)?;

    let fold_results: Vec<Result<FoldPieces>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| -> Result<FoldPieces> {
            let train = data.subset(&plan.complement_rows(fold))?;
            let rows = plan.fold_rows(fold);
            let held = data.subset(&rows)?;
            let nuis = fit_nuisances(&train, config, &functional, Some(&held))?;

            let rep = nuis.riesz.representer()?;
            let mut alpha = Vec::with_capacity(rows.len());
            let mut resid = Vec::with_capacity(rows.len());
            let mut m_vals = Vec::with_capacity(rows.len());
            let mut gamma_vals = Vec::with_capacity(rows.len());
            for i in 0..held.n() {
                let d = held.d()[i];
                let z = held.z_row(i);
                alpha.push(rep.value(d, z)?);
                let g = nuis.outcome.gamma.value(d, z)?;
                gamma_vals.push(g);
                resid.push(held.outcome(i).map(|y| y - g).unwrap_or(0.0));
                m_vals.push(match functional.kind() {
                    FunctionalKind::CovShiftMean => 0.0,
                    _ => functional.m_row(&held, i, &nuis.outcome.gamma)?,
                });
            }
            let balance = balance_residual(
                &nuis.riesz,
                &train,
                &functional,
                nuis.riesz.model.basis(),
            )?;
            Ok(FoldPieces {
                rows,
                m_vals,
                resid,
                alpha,
                gamma_vals,
                theta_initial: nuis.theta_initial,
                tmle_eps: nuis.tmle_eps,
                balance_sup: balance.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                saturation: nuis.riesz.saturation_count,
                degenerate: nuis.riesz.degenerate_weights,
                jittered: nuis.riesz.gram_jittered || nuis.outcome.gram_jittered,
                warnings: nuis.warnings,
            })
        })
        .collect();

    let mut pieces = Vec::with_capacity(plan.k);
    for r in fold_results {
        pieces.push(r?);
    }

    // pool per-row quantities in original row order
    let n = data.n();
    let mut alpha_rows = Array1::zeros(n);
    let mut m_rows = vec![0.0; n];
    let mut resid_rows = vec![0.0; n];
    let mut gamma_rows = vec![0.0; n];
    for fp in &pieces {
        for (k, &i) in fp.rows.iter().enumerate() {
            alpha_rows[i] = fp.alpha[k];
            m_rows[i] = fp.m_vals[k];
            resid_rows[i] = fp.resid[k];
            gamma_rows[i] = fp.gamma_vals[k];
        }
    }

    let (theta_hat, scores) = if functional.kind() == FunctionalKind::CovShiftMean {
        let src = data.source_rows();
        let tgt = data.target_rows();
        let mean_m =
            tgt.iter().map(|&i| gamma_rows[i]).sum::<f64>() / tgt.len() as f64;
        let mean_r = src
            .iter()
            .map(|&i| alpha_rows[i] * resid_rows[i])
            .sum::<f64>()
            / src.len() as f64;
        let theta = mean_m + mean_r;
        let nf = n as f64;
        let mut scores = vec![0.0; n];
        for &i in &src {
            scores[i] = (nf / src.len() as f64) * alpha_rows[i] * resid_rows[i];
        }
        for &i in &tgt {
            scores[i] = (nf / tgt.len() as f64) * (gamma_rows[i] - theta);
        }
        (theta, scores)
    } else {
        let theta = (0..n)
            .map(|i| m_rows[i] + alpha_rows[i] * resid_rows[i])
            .sum::<f64>()
            / n as f64;
        let scores = (0..n)
            .map(|i| m_rows[i] + alpha_rows[i] * resid_rows[i] - theta)
            .collect();
        (theta, scores)
    };
    let se = standard_error(&scores)?;

    let theta_plugin = {
        let scored = functional.scored_rows(data);
        match functional.kind() {
            FunctionalKind::CovShiftMean => {
                scored.iter().map(|&i| gamma_rows[i]).sum::<f64>() / scored.len() as f64
            }
            _ => scored.iter().map(|&i| m_rows[i]).sum::<f64>() / scored.len() as f64,
        }
    };
    let theta_initial = {
        let vals: Vec<f64> = pieces.iter().filter_map(|p| p.theta_initial).collect();
        if vals.is_empty() {
            None
        } else {
            // fold-weighted mean of the per-fold initial estimates
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    let diagnostics = EstimateDiagnostics {
        theta_plugin,
        theta_tmle_plugin: config.tmle.then_some(theta_plugin),
        theta_initial,
        balance_sup_norm: Some(
            pieces
                .iter()
                .map(|p| p.balance_sup)
                .fold(0.0f64, f64::max),
        ),
        tmle_eps: pieces.iter().filter_map(|p| p.tmle_eps).collect(),
        saturation_count: pieces.iter().map(|p| p.saturation).sum(),
        degenerate_weights: pieces.iter().any(|p| p.degenerate),
        gram_jittered: pieces.iter().any(|p| p.jittered),
        warnings: pieces.iter().flat_map(|p| p.warnings.clone()).collect(),
    };
    Ok(Estimate {
        theta_hat,
        se,
        ci95: (theta_hat - Z_95 * se, theta_hat + Z_95 * se),
        scores,
        method: method_info(config, plan.k, Some(plan.seed)),
        diagnostics,
    })
}

/// Convenience view of a fitted function for score assembly from raw parts
/// (test and diagnostic use).
pub fn gamma_from_fitted(f: crate::fitted::FittedFunction) -> GammaHat {
    GammaHat::plain(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitted::{FittedFunction, Link};
    use crate::simulate::DgpSpec;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::array;

    fn default_config(ds: &Dataset) -> EstimatorConfig {
        EstimatorConfig {
            functional: FunctionalKind::Ate,
            gamma_basis: BasisSpec::treatment_split(ds.q(), 1).unwrap(),
            riesz_model: RieszModel::LinearInBasis {
                basis: BasisSpec::treatment_split(ds.q(), 1).unwrap(),
            },
            generator: ConvexGenerator::Ls,
            weighted: false,
            ridge: 0.0,
            tmle: false,
            iterations: 0,
            solver: SolverSettings::default(),
        }
    }

    #[test]
    fn single_row_aipw_hand_value() {
        // pi = 1/2, gamma = 0, one treated row with y = 1: score at theta=0 is 2
        let ds = Dataset::from_parts(
            array![1.0, 0.0],
            array![1.0, 0.0],
            array![[0.0], [0.0]],
        )
        .unwrap();
        let basis = BasisSpec::raw_plus_intercept(1, true).unwrap();
        let gamma = gamma_from_fitted(
            FittedFunction::new(Array1::zeros(basis.p()), basis, Link::Identity).unwrap(),
        );
        let alpha = array![2.0, -2.0];
        let scores = orthogonal_score(&TargetFunctional::Ate, &ds, &gamma, &alpha, 0.0).unwrap();
        assert_relative_eq!(scores[0], 2.0);
    }

    #[test]
    fn scores_mean_zero_at_solved_theta() {
        let ds = DgpSpec::ate_logistic(3).sample(200).unwrap();
        let est = estimate_full_sample(&ds, &default_config(&ds)).unwrap();
        let mean = est.scores.iter().sum::<f64>() / est.scores.len() as f64;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert!(est.se > 0.0);
        assert_relative_eq!(est.ci95.1 - est.theta_hat, Z_95 * est.se, epsilon = 1e-12);
    }

    #[test]
    fn zero_representer_reduces_to_plugin() {
        let ds = DgpSpec::ate_logistic(5).sample(100).unwrap();
        let cfg = default_config(&ds);
        let functional = TargetFunctional::Ate;
        let outcome = fit_outcome_ls(&ds, &cfg.gamma_basis).unwrap();
        let alpha = Array1::zeros(ds.n());
        let theta = solve_theta(&functional, &ds, &outcome.gamma, &alpha).unwrap();
        let m = functional.m_apply(&ds, &outcome.gamma).unwrap();
        let plugin = m.iter().sum::<f64>() / m.len() as f64;
        assert_relative_eq!(theta, plugin, epsilon = 1e-12);
    }

    #[test]
    fn zero_gamma_reduces_to_pure_weighting() {
        let ds = DgpSpec::ate_logistic(7).sample(100).unwrap();
        let basis = BasisSpec::raw_plus_intercept(ds.q(), true).unwrap();
        let gamma = gamma_from_fitted(
            FittedFunction::new(Array1::zeros(basis.p()), basis, Link::Identity).unwrap(),
        );
        let fit = fit_riesz_ls_closed_form(
            &ds,
            &TargetFunctional::Ate,
            &BasisSpec::treatment_split(ds.q(), 1).unwrap(),
            0.0,
        )
        .unwrap();
        let theta = solve_theta(&TargetFunctional::Ate, &ds, &gamma, &fit.alpha_rows).unwrap();
        let direct: f64 = (0..ds.n())
            .map(|i| fit.alpha_rows[i] * ds.outcome(i).unwrap())
            .sum::<f64>()
            / ds.n() as f64;
        assert_relative_eq!(theta, direct, epsilon = 1e-12);
    }

    #[test]
    fn standard_error_hand_values() {
        assert_abs_diff_eq!(standard_error(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        // scores (-1, 1): sample sd sqrt(2), se = sqrt(2)/sqrt(2) = 1
        assert_relative_eq!(standard_error(&[-1.0, 1.0]).unwrap(), 1.0);
        let base = vec![-1.0, 0.5, 2.0, -0.75];
        let doubled: Vec<f64> = base.iter().chain(base.iter()).copied().collect();
        let ratio = standard_error(&base).unwrap() / standard_error(&doubled).unwrap();
        // doubling divides the se by sqrt(2) up to the (n-1) correction:
        // the exact ratio is sqrt((2n-1)/(n-1)), here sqrt(7/3)
        let n = base.len() as f64;
        assert_relative_eq!(
            ratio,
            ((2.0 * n - 1.0) / (n - 1.0)).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn tmle_plugin_matches_orthogonal_estimate_full_sample() {
        let ds = DgpSpec::ate_logistic(13).sample(400).unwrap();
        let mut cfg = default_config(&ds);
        cfg.tmle = true;
        let est = estimate_full_sample(&ds, &cfg).unwrap();
        // after fluctuation the residual term is zero, so the orthogonal
        // estimate equals the plug-in at the updated fit
        assert_relative_eq!(
            est.theta_hat,
            est.diagnostics.theta_tmle_plugin.unwrap(),
            epsilon = 1e-10
        );
        // least-squares representer on its own basis: the initial
        // orthogonal estimate already coincides
        assert_relative_eq!(
            est.theta_hat,
            est.diagnostics.theta_initial.unwrap(),
            epsilon = 1e-8
        );
        assert_eq!(est.diagnostics.tmle_eps.len(), 1);
    }

    #[test]
    fn duplicated_half_samples_make_crossfit_equal_full_sample() {
        let half = DgpSpec::ate_logistic(19).sample(60).unwrap();
        let rows: Vec<usize> = (0..half.n()).collect();
        let mut both = rows.clone();
        both.extend(rows.iter().map(|&i| i));
        let ds = {
            // duplicate by subsetting twice
            let dup_rows: Vec<usize> = both;
            half.subset(&dup_rows).unwrap()
        };
        let cfg = default_config(&ds);
        let assignment: Vec<usize> = (0..ds.n()).map(|i| usize::from(i >= half.n())).collect();
        let plan = CrossFitPlan::from_assignment(assignment, 2, 0).unwrap();
        let cf = estimate_crossfit(&ds, &cfg, &plan).unwrap();
        let full = estimate_full_sample(&ds, &cfg).unwrap();
        assert_relative_eq!(cf.theta_hat, full.theta_hat, epsilon = 1e-10);
    }

    #[test]
    fn crossfit_deterministic_given_seed() {
        let ds = DgpSpec::ate_logistic(23).sample(150).unwrap();
        let cfg = default_config(&ds);
        let plan = CrossFitPlan::stratified(&ds, 5, 99).unwrap();
        let a = estimate_crossfit(&ds, &cfg, &plan).unwrap();
        let b = estimate_crossfit(&ds, &cfg, &plan).unwrap();
        assert_eq!(a.theta_hat.to_bits(), b.theta_hat.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
        let plan2 = CrossFitPlan::stratified(&ds, 5, 100).unwrap();
        let c = estimate_crossfit(&ds, &cfg, &plan2).unwrap();
        assert_ne!(a.theta_hat.to_bits(), c.theta_hat.to_bits());
    }

    #[test]
    fn leave_one_out_smoke_on_continuous_treatment() {
        let ds = DgpSpec::ame_gaussian(31).sample(20).unwrap();
        let mut cfg = default_config(&ds);
        cfg.functional = FunctionalKind::Ame;
        cfg.gamma_basis = BasisSpec::polynomial(ds.q(), 2, true).unwrap();
        cfg.riesz_model = RieszModel::LinearInBasis {
            basis: BasisSpec::raw_plus_intercept(ds.q(), true).unwrap(),
        };
        let plan = CrossFitPlan::stratified(&ds, ds.n(), 7).unwrap();
        let est = estimate_crossfit(&ds, &cfg, &plan).unwrap();
        assert!(est.theta_hat.is_finite());
        assert!(est.se.is_finite());
    }

    #[test]
    fn unstratified_one_arm_fold_rejected() {
        let ds = DgpSpec::ate_logistic(37).sample(40).unwrap();
        // an adversarial plan: fold 0 gets only treated rows (if possible)
        let mut assignment = vec![1usize; ds.n()];
        for i in 0..ds.n() {
            if ds.d()[i] == 1.0 {
                assignment[i] = 0;
            }
        }
        let plan = CrossFitPlan::from_assignment(assignment, 2, 0).unwrap();
        let cfg = default_config(&ds);
        let err = estimate_crossfit(&ds, &cfg, &plan).unwrap_err();
        assert!(err.to_string().contains("stratified"), "{err}");
    }

    #[test]
    fn stratified_folds_partition_and_balance() {
        let ds = DgpSpec::ate_logistic(41).sample(103).unwrap();
        let plan = CrossFitPlan::stratified(&ds, 5, 3).unwrap();
        plan.validate(&ds).unwrap();
        let mut seen = vec![false; ds.n()];
        for f in 0..5 {
            for i in plan.fold_rows(f) {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn covshift_estimate_recovers_shifted_mean() {
        let spec = DgpSpec::covshift_gaussian(51);
        let ds = spec.sample(3000).unwrap();
        let cfg = EstimatorConfig {
            functional: FunctionalKind::CovShiftMean,
            gamma_basis: BasisSpec::raw_plus_intercept(ds.q(), false).unwrap(),
            riesz_model: RieszModel::PositiveRatio {
                basis: BasisSpec::raw_plus_intercept(ds.q(), false).unwrap(),
            },
            generator: ConvexGenerator::Kl,
            weighted: false,
            ridge: 0.0,
            tmle: false,
            iterations: 0,
            solver: SolverSettings::default(),
        };
        let est = estimate_full_sample(&ds, &cfg).unwrap();
        let theta0 = spec.true_theta();
        assert!(
            (est.theta_hat - theta0).abs() <= 4.0 * est.se,
            "theta {} vs {} (se {})",
            est.theta_hat,
            theta0,
            est.se
        );
    }
}
