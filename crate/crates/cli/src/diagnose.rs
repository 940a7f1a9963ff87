//! The diagnostic suite behind `debias diagnose`: gradient checks on every
//! fitted risk, the convex-generator property battery, balancing residuals,
//! and the enumeration-oracle equivalence of the feasible propensity
//! objective. Failures are report rows, not errors.

use anyhow::Result;
use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use debias_core::{
    ate_enumeration, balance_residual, fit_riesz_bregman, fit_riesz_ls_closed_form,
    gradient_check, BasisSpec, BregmanRisk, ConvexGenerator, DgpSpec, Objective, RieszModel,
    SolverSettings, TargetFunctional,
};

/// One check: its measured value against the threshold it must stay under.
#[derive(Debug, Clone, Serialize)]
pub struct DiagRow {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
}

impl DiagRow {
    fn bounded(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            pass: measured.is_finite() && measured <= threshold,
            measured,
            threshold,
        }
    }
}

/// Gradient-vs-finite-differences row for any objective; exposed so tests
/// can feed it a deliberately broken gradient.
pub fn gradient_row(
    name: &str,
    objective: &dyn Objective,
    seed: u64,
    points: usize,
    threshold: f64,
) -> DiagRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let beta = Array1::from_iter((0..objective.dim()).map(|_| rng.random_range(-0.5..0.5)));
        match gradient_check(objective, beta.view(), 1e-5) {
            Ok(err) => worst = worst.max(err),
            Err(_) => worst = f64::INFINITY,
        }
    }
    DiagRow::bounded(format!("gradient-check/{name}"), worst, threshold)
}

fn generator_rows(rows: &mut Vec<DiagRow>, seed: u64) {
    let gens = [
        ConvexGenerator::Ls,
        ConvexGenerator::Kl,
        ConvexGenerator::Entropy,
        ConvexGenerator::PowerDiv { b: 0.5 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fn sample_point(rng: &mut ChaCha8Rng, gen: &ConvexGenerator, side: bool) -> f64 {
        let mag = 10.0f64.powf(rng.random_range(-2.0..1.5));
        match gen {
            ConvexGenerator::Ls | ConvexGenerator::Kl => {
                if side {
                    mag
                } else {
                    -mag
                }
            }
            ConvexGenerator::Entropy => {
                if side {
                    1.0 + mag
                } else {
                    -1.0 - mag
                }
            }
            ConvexGenerator::PowerDiv { .. } => mag,
        }
    }

    let (mut min_breg, mut max_identity, mut max_fd, mut max_ls, mut max_feas) =
        (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for gen in &gens {
        for _ in 0..10_000 {
            let side = rng.random_range(0.0..1.0) < 0.5;
            let a0 = sample_point(&mut rng, gen, side);
            let a = sample_point(&mut rng, gen, side);
            let br = gen.bregman_pointwise(a0, a).unwrap();
            min_breg = min_breg.min(br);
            max_identity = max_identity.max(gen.bregman_pointwise(a, a).unwrap().abs());
            if *gen == ConvexGenerator::Ls {
                max_ls = max_ls.max((br - (a0 - a) * (a0 - a)).abs());
            }
            let fi = gen.feasible_integrand(a).unwrap();
            let lhs = br - gen.g_eval(a0).unwrap();
            max_feas = max_feas.max((lhs - (fi.selfterm - fi.linkterm * a0)).abs() / (1.0 + lhs.abs()));
        }
        for _ in 0..200 {
            let side = rng.random_range(0.0..1.0) < 0.5;
            let u = sample_point(&mut rng, gen, side);
            let h = 1e-6 * (1.0 + u.abs());
            if gen.contains(u - h) && gen.contains(u + h) {
                let fd = (gen.g_eval(u + h).unwrap() - gen.g_eval(u - h).unwrap()) / (2.0 * h);
                let an = gen.g_deriv(u).unwrap();
                max_fd = max_fd.max((an - fd).abs() / (1.0 + an.abs()));
            }
        }
    }
    rows.push(DiagRow::bounded("bregman/nonnegativity", -min_breg, 1e-12));
    rows.push(DiagRow::bounded("bregman/identity-of-indiscernibles", max_identity, 1e-14));
    rows.push(DiagRow::bounded("bregman/derivative-consistency", max_fd, 1e-7));
    rows.push(DiagRow::bounded("bregman/ls-is-squared-error", max_ls, 1e-12));
    rows.push(DiagRow::bounded("bregman/feasibility-identity", max_feas, 1e-10));
}

fn theorem1_row(rows: &mut Vec<DiagRow>) {
    let dist = ate_enumeration();
    let truth = dist.truth().clone();
    let pi0 = truth.propensity.unwrap();
    let logistic = |u: f64| 1.0 / (1.0 + (-u).exp());
    let alpha_at = |t: f64, d: f64, z: ArrayView1<'_, f64>| {
        let pi = logistic(0.2 + t * z[0]);
        if d == 1.0 {
            1.0 / pi
        } else {
            -1.0 / (1.0 - pi)
        }
    };
    let grid: Vec<f64> = (0..201).map(|i| -1.0 + 3.0 * i as f64 / 200.0).collect();
    let mut oracle = Vec::new();
    let mut feasible = Vec::new();
    for &t in &grid {
        oracle.push(dist.population_risk(|d, z, y| {
            let a0 = if d == 1.0 {
                1.0 / pi0(z)
            } else {
                -1.0 / (1.0 - pi0(z))
            };
            ((a0 - alpha_at(t, d, z)) * (y - dist.gamma0_at(d, z))).powi(2)
        }));
        feasible.push(dist.population_risk(|d, z, y| {
            let pi = logistic(0.2 + t * z[0]);
            let a = alpha_at(t, d, z);
            (-2.0 * (1.0 / pi + 1.0 / (1.0 - pi)) + a * a)
                * (y - dist.gamma0_at(d, z)).powi(2)
        }));
    }
    let diffs: Vec<f64> = oracle.iter().zip(&feasible).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let dev = diffs.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    let argmin = |v: &[f64]| {
        v.iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
    };
    let mut row = DiagRow::bounded("enumeration/feasible-objective-offset", dev, 1e-10);
    row.pass = row.pass && argmin(&oracle) == argmin(&feasible);
    rows.push(row);
}

/// Run the full suite. All rows pass on a healthy build.
pub fn run_all(seed: u64) -> Result<Vec<DiagRow>> {
    let mut rows = Vec::new();

    generator_rows(&mut rows, seed ^ 0xb5e5_1234);
    theorem1_row(&mut rows);

    // gradient checks over the fitted risks
    let binary = DgpSpec::ate_logistic(seed).sample(300)?;
    let cov = DgpSpec::covshift_gaussian(seed.wrapping_add(1)).sample(300)?;
    let split = BasisSpec::treatment_split(binary.q(), 1)?;
    let zb = BasisSpec::raw_plus_intercept(binary.q(), false)?;
    let cb = BasisSpec::raw_plus_intercept(cov.q(), false)?;
    let cases: Vec<(&str, &debias_core::Dataset, TargetFunctional, RieszModel, ConvexGenerator)> = vec![
        (
            "linear+ls/ate",
            &binary,
            TargetFunctional::Ate,
            RieszModel::LinearInBasis { basis: split.clone() },
            ConvexGenerator::Ls,
        ),
        (
            "logit-inv+kl/ate",
            &binary,
            TargetFunctional::Ate,
            RieszModel::InvPropensityLogistic { basis: zb.clone() },
            ConvexGenerator::Kl,
        ),
        (
            "logit-inv+entropy/ate",
            &binary,
            TargetFunctional::Ate,
            RieszModel::InvPropensityLogistic { basis: zb.clone() },
            ConvexGenerator::Entropy,
        ),
        (
            "ratio+ls/covshift",
            &cov,
            TargetFunctional::CovShiftMean,
            RieszModel::PositiveRatio { basis: cb.clone() },
            ConvexGenerator::Ls,
        ),
        (
            "ratio+kl/covshift",
            &cov,
            TargetFunctional::CovShiftMean,
            RieszModel::PositiveRatio { basis: cb.clone() },
            ConvexGenerator::Kl,
        ),
        (
            "ratio+power/covshift",
            &cov,
            TargetFunctional::CovShiftMean,
            RieszModel::PositiveRatio { basis: cb },
            ConvexGenerator::PowerDiv { b: 0.5 },
        ),
    ];
    for (name, data, functional, model, gen) in cases {
        let risk = BregmanRisk::new(data, &functional, &model, gen, None)?;
        rows.push(gradient_row(name, &risk, seed.wrapping_add(7), 20, 1e-6));
    }

    // balancing residuals
    let functional = TargetFunctional::Ate;
    let ls_fit = fit_riesz_ls_closed_form(&binary, &functional, &split, 0.0)?;
    let res = balance_residual(&ls_fit, &binary, &functional, &split)?;
    rows.push(DiagRow::bounded(
        "balance/linear+ls own basis",
        res.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        1e-8,
    ));
    let ent_fit = fit_riesz_bregman(
        &binary,
        &functional,
        &RieszModel::InvPropensityLogistic { basis: zb.clone() },
        ConvexGenerator::Entropy,
        None,
        0.0,
        SolverSettings::default(),
    )?;
    let res = balance_residual(&ent_fit, &binary, &functional, &zb)?;
    rows.push(DiagRow::bounded(
        "balance/logit-inv+entropy treated-vs-control",
        res.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        1e-6,
    ));

    Ok(rows)
}

pub fn format_table(rows: &[DiagRow]) -> String {
    let mut out = String::new();
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(10).max(10);
    out.push_str(&format!(
        "{:<width$}  {:>12}  {:>12}  result\n",
        "check", "measured", "threshold"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>12.3e}  {:>12.1e}  {}\n",
            r.name,
            r.measured,
            r.threshold,
            if r.pass { "pass" } else { "FAIL" }
        ));
    }
    out
}
