//! Command implementations. Each returns the machine-readable record it
//! wrote so tests can assert on it directly.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};

use debias_core::{
    estimate_crossfit, estimate_full_sample, CrossFitPlan, Dataset, Estimate, EstimatorConfig,
    FunctionalKind, SolverSettings,
};

use crate::config::{load_dataset, parse_basis, parse_dgp, parse_riesz_model, ResolvedConfig};
use crate::diagnose;

fn estimator_config(cfg: &ResolvedConfig, data: &Dataset) -> Result<EstimatorConfig> {
    let q = data.q();
    Ok(EstimatorConfig {
        functional: FunctionalKind::parse_token(&cfg.functional)?,
        gamma_basis: parse_basis(&cfg.gamma_basis, q)?,
        riesz_model: parse_riesz_model(&cfg.riesz_model, parse_basis(&cfg.riesz_basis, q)?)?,
        generator: debias_core::ConvexGenerator::parse_token(&cfg.loss)?,
        weighted: cfg.weighted,
        ridge: cfg.ridge,
        tmle: cfg.tmle,
        iterations: cfg.iterations,
        solver: SolverSettings {
            tol: cfg.tol,
            max_iter: cfg.max_iter,
        },
    })
}

fn run_one_estimate(cfg: &ResolvedConfig, data: &Dataset) -> Result<Estimate> {
    let config = estimator_config(cfg, data)?;
    if cfg.crossfit >= 2 {
        let plan = CrossFitPlan::stratified(data, cfg.crossfit, cfg.seed)?;
        Ok(estimate_crossfit(data, &config, &plan)?)
    } else {
        Ok(estimate_full_sample(data, &config)?)
    }
}

fn estimate_record(cfg: &ResolvedConfig, est: &Estimate) -> Value {
    json!({
        "theta_hat": est.theta_hat,
        "se": est.se,
        "ci95": [est.ci95.0, est.ci95.1],
        "method": est.method,
        "diagnostics": est.diagnostics,
        "config": cfg,
    })
}

fn write_output(path: Option<&String>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(Path::new(p), content)
                .with_context(|| format!("cannot write output file {p}"))?;
        }
        None => println!("{content}"),
    }
    Ok(())
}

/// `estimate`: fit on a dataset (file or simulated), write the JSON record
/// and optionally a per-row score CSV.
pub fn run_estimate(cfg: &ResolvedConfig) -> Result<Value> {
    let data = load_dataset(cfg)?;
    let est = run_one_estimate(cfg, &data)?;
    let record = estimate_record(cfg, &est);
    write_output(cfg.out.as_ref(), &serde_json::to_string_pretty(&record)?)?;
    if let Some(path) = &cfg.scores_out {
        let mut w = csv::Writer::from_path(path)
            .with_context(|| format!("cannot write scores file {path}"))?;
        w.write_record(["row", "psi"])?;
        for (i, s) in est.scores.iter().enumerate() {
            w.write_record([i.to_string(), s.to_string()])?;
        }
        w.flush()?;
    }
    Ok(record)
}

/// `simulate`: draw a dataset from a DGP and write it as CSV.
pub fn run_simulate(cfg: &ResolvedConfig) -> Result<()> {
    let Some(tok) = &cfg.dgp else {
        bail!("simulate needs a dgp");
    };
    let data = parse_dgp(tok, cfg.seed)?.sample(cfg.n)?;
    match &cfg.out {
        Some(path) => data.to_csv_path(path)?,
        None => {
            let mut buf = Vec::new();
            data.to_csv_writer(&mut buf)?;
            std::io::stdout().write_all(&buf)?;
        }
    }
    Ok(())
}

/// One Monte Carlo replication result.
#[derive(Debug, Clone)]
pub struct Replication {
    pub rep: usize,
    pub outcome: std::result::Result<(f64, f64, bool), String>,
}

/// `montecarlo`: replicate simulate-and-estimate, write per-replication
/// rows plus a summary (bias, RMSE, empirical coverage). Failed
/// replications are recorded and skipped in the summary. Replications run
/// concurrently with derived seeds; output order is by replication index.
pub fn run_montecarlo(cfg: &ResolvedConfig) -> Result<String> {
    let Some(tok) = &cfg.dgp else {
        bail!("montecarlo needs a dgp");
    };
    let theta0 = parse_dgp(tok, cfg.seed)?.true_theta();

    let run_rep = |rep: usize| -> Replication {
        let rep_cfg = ResolvedConfig {
            seed: cfg.seed.wrapping_add(rep as u64),
            ..cfg.clone()
        };
        let outcome = (|| -> Result<(f64, f64, bool)> {
            let data = load_dataset(&rep_cfg)?;
            let est = run_one_estimate(&rep_cfg, &data)?;
            let covered = est.ci95.0 <= theta0 && theta0 <= est.ci95.1;
            Ok((est.theta_hat, est.se, covered))
        })()
        .map_err(|e| format!("{e:#}"));
        Replication { rep, outcome }
    };

    let mut reps: Vec<Replication> = if cfg.jobs == 1 {
        (0..cfg.reps).map(run_rep).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs) // 0 = one thread per core
            .build()?;
        pool.install(|| (0..cfg.reps).into_par_iter().map(run_rep).collect())
    };
    reps.sort_by_key(|r| r.rep);

    let mut csv = String::from("kind,rep,theta_hat,se,covered\n");
    let mut ok = Vec::new();
    let mut failures = 0usize;
    for r in &reps {
        match &r.outcome {
            Ok((theta, se, covered)) => {
                csv.push_str(&format!(
                    "rep,{},{},{},{}\n",
                    r.rep,
                    theta,
                    se,
                    u8::from(*covered)
                ));
                ok.push((*theta, *covered));
            }
            Err(msg) => {
                eprintln!("replication {} failed: {msg}", r.rep);
                csv.push_str(&format!("error,{},,,\n", r.rep));
                failures += 1;
            }
        }
    }
    if !ok.is_empty() {
        let n = ok.len() as f64;
        let bias = ok.iter().map(|(t, _)| t - theta0).sum::<f64>() / n;
        let rmse = (ok.iter().map(|(t, _)| (t - theta0) * (t - theta0)).sum::<f64>() / n).sqrt();
        let coverage = ok.iter().filter(|(_, c)| *c).count() as f64 / n;
        csv.push_str(&format!("summary,{},{bias},{rmse},{coverage}\n", ok.len()));
    }
    csv.push_str(&format!("failures,{failures},,,\n"));

    write_output(cfg.out.as_ref(), csv.trim_end())?;
    Ok(csv)
}

/// `diagnose`: run the check suite and print the table. Check failures are
/// rows in the report, not process errors.
pub fn run_diagnose(cfg: &ResolvedConfig) -> Result<Vec<diagnose::DiagRow>> {
    let rows = diagnose::run_all(cfg.seed)?;
    let table = diagnose::format_table(&rows);
    match &cfg.out {
        Some(path) => std::fs::write(path, serde_json::to_string_pretty(&rows)?)?,
        None => {}
    }
    println!("{table}");
    Ok(rows)
}
