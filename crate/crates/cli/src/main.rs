use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use debias_cli::config::{resolve, FileConfig};
use debias_cli::run;

/// Debiased estimation of regression functionals: treatment effects,
/// marginal effects, and shifted-population means.
#[derive(Parser)]
#[command(name = "debias", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a target parameter from a CSV file or a simulated dataset.
    Estimate(CommonArgs),
    /// Draw a synthetic dataset and write it as CSV.
    Simulate(CommonArgs),
    /// Replicate simulate-and-estimate; report bias, RMSE, and coverage.
    Montecarlo(CommonArgs),
    /// Run the numerical check suite and print a pass/fail table.
    Diagnose(CommonArgs),
}

/// Flat key-value options; a config file supplies defaults, flags win.
#[derive(Args)]
struct CommonArgs {
    /// Config file (flat TOML key-value pairs, same names as the flags).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV (columns y, d, z1..zq, optional role).
    #[arg(long)]
    data: Option<String>,
    /// Synthetic DGP kind (e.g. ate-logistic, covshift-gaussian).
    #[arg(long)]
    dgp: Option<String>,
    /// Sample size (per role for two-sample DGPs).
    #[arg(long)]
    n: Option<usize>,
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Target functional: ate | att | ame | covshift.
    #[arg(long)]
    functional: Option<String>,
    /// Representer model: linear | logit-inv | ratio.
    #[arg(long = "riesz-model")]
    riesz_model: Option<String>,
    /// Representer basis: split[:K] | poly:K | zpoly:K | raw | zraw.
    #[arg(long = "riesz-basis")]
    riesz_basis: Option<String>,
    /// Loss: ls | kl | entropy | power:<b>.
    #[arg(long)]
    loss: Option<String>,
    /// Reweight the representer risk by squared outcome residuals.
    #[arg(long, value_parser = parse_on_off)]
    weighted: Option<bool>,
    /// Outcome basis (same grammar as --riesz-basis).
    #[arg(long = "gamma-basis")]
    gamma_basis: Option<String>,
    /// Apply the TMLE fluctuation to the outcome fit.
    #[arg(long, value_parser = parse_on_off)]
    tmle: Option<bool>,
    /// Alternation rounds for the doubly weighted fit (0 = none).
    #[arg(long)]
    iterations: Option<usize>,
    /// Cross-fitting folds (< 2 = full sample).
    #[arg(long)]
    crossfit: Option<usize>,
    /// Ridge penalty on representer coefficients.
    #[arg(long)]
    ridge: Option<f64>,
    /// Solver gradient tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Solver iteration cap (0 = dimension-scaled default).
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Monte Carlo replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads for replications (default: DEBIAS_JOBS or all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output path (JSON or CSV depending on the command; stdout if unset).
    #[arg(long)]
    out: Option<String>,
    /// Per-row score CSV path (estimate only).
    #[arg(long = "scores-out")]
    scores_out: Option<String>,
}

fn parse_on_off(v: &str) -> Result<bool, String> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(format!("expected on|off, got '{other}'")),
    }
}

impl CommonArgs {
    fn layers(&self) -> anyhow::Result<FileConfig> {
        let base = match &self.config {
            Some(path) => FileConfig::from_path(path)?,
            None => FileConfig::default(),
        };
        let flags = FileConfig {
            data: self.data.clone(),
            dgp: self.dgp.clone(),
            n: self.n,
            seed: self.seed,
            functional: self.functional.clone(),
            riesz_model: self.riesz_model.clone(),
            riesz_basis: self.riesz_basis.clone(),
            loss: self.loss.clone(),
            weighted: self.weighted,
            gamma_basis: self.gamma_basis.clone(),
            tmle: self.tmle,
            iterations: self.iterations,
            crossfit: self.crossfit,
            ridge: self.ridge,
            tol: self.tol,
            max_iter: self.max_iter,
            reps: self.reps,
            jobs: self.jobs,
            out: self.out.clone(),
            scores_out: self.scores_out.clone(),
        };
        Ok(base.merged_with(&flags))
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Estimate(args) => {
            let cfg = resolve("estimate", &args.layers()?)?;
            run::run_estimate(&cfg)?;
        }
        Command::Simulate(args) => {
            let cfg = resolve("simulate", &args.layers()?)?;
            run::run_simulate(&cfg)?;
        }
        Command::Montecarlo(args) => {
            let cfg = resolve("montecarlo", &args.layers()?)?;
            run::run_montecarlo(&cfg)?;
        }
        Command::Diagnose(args) => {
            let cfg = resolve("diagnose", &args.layers()?)?;
            run::run_diagnose(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = json!({ "error": format!("{e:#}") });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
