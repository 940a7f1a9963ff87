//! Run configuration: a flat key-value file (TOML syntax) merged with
//! command-line overrides; flags win. The fully resolved configuration is
//! embedded in every output record for provenance.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use debias_core::{BasisSpec, ConvexGenerator, Dataset, DgpSpec, FunctionalKind, RieszModel};

/// Raw configuration layer: every field optional so the file, the flags,
/// and the defaults can be merged in that order.
#[derive(Debug, Clone, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<String>,
    pub dgp: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub functional: Option<String>,
    pub riesz_model: Option<String>,
    pub riesz_basis: Option<String>,
    pub loss: Option<String>,
    pub weighted: Option<bool>,
    pub gamma_basis: Option<String>,
    pub tmle: Option<bool>,
    pub iterations: Option<usize>,
    pub crossfit: Option<usize>,
    pub ridge: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub reps: Option<usize>,
    pub jobs: Option<usize>,
    pub out: Option<String>,
    pub scores_out: Option<String>,
}

impl FileConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        // toml reports line/column positions in its error display
        toml::from_str(text).context("config parse error")
    }

    /// Overlay `other` on top of `self` (set fields in `other` win).
    pub fn merged_with(&self, other: &FileConfig) -> FileConfig {
        macro_rules! pick {
            ($field:ident) => {
                other.$field.clone().or_else(|| self.$field.clone())
            };
        }
        FileConfig {
            data: pick!(data),
            dgp: pick!(dgp),
            n: pick!(n),
            seed: pick!(seed),
            functional: pick!(functional),
            riesz_model: pick!(riesz_model),
            riesz_basis: pick!(riesz_basis),
            loss: pick!(loss),
            weighted: pick!(weighted),
            gamma_basis: pick!(gamma_basis),
            tmle: pick!(tmle),
            iterations: pick!(iterations),
            crossfit: pick!(crossfit),
            ridge: pick!(ridge),
            tol: pick!(tol),
            max_iter: pick!(max_iter),
            reps: pick!(reps),
            jobs: pick!(jobs),
            out: pick!(out),
            scores_out: pick!(scores_out),
        }
    }
}

/// Fully resolved configuration: what actually ran.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResolvedConfig {
    pub command: String,
    pub data: Option<String>,
    pub dgp: Option<String>,
    pub n: usize,
    pub seed: u64,
    pub functional: String,
    pub riesz_model: String,
    pub riesz_basis: String,
    pub loss: String,
    pub weighted: bool,
    pub gamma_basis: String,
    pub tmle: bool,
    pub iterations: usize,
    pub crossfit: usize,
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub reps: usize,
    pub jobs: usize,
    pub out: Option<String>,
    pub scores_out: Option<String>,
}

impl ResolvedConfig {
    /// Canonical flat serialization; parsing it back resolves to the same
    /// configuration.
    pub fn to_canonical_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

pub fn default_jobs() -> usize {
    std::env::var("DEBIAS_JOBS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

/// Merge layers and fill defaults. `command` controls which fields are
/// required; incompatible (model, loss) pairs are rejected here, before
/// any data is touched.
pub fn resolve(command: &str, cfg: &FileConfig) -> Result<ResolvedConfig> {
    if let Some(path) = &cfg.data {
        if !Path::new(path).exists() {
            bail!("data file '{path}' does not exist");
        }
        if cfg.dgp.is_some() {
            bail!("set either 'data' or 'dgp', not both");
        }
    }
    let needs_input = matches!(command, "estimate" | "montecarlo" | "simulate");
    if needs_input && cfg.data.is_none() && cfg.dgp.is_none() {
        bail!("'{command}' needs a 'data' path or a 'dgp' kind");
    }
    if command == "montecarlo" && cfg.dgp.is_none() {
        bail!("'montecarlo' needs a 'dgp' kind (coverage requires the true parameter)");
    }
    if command == "simulate" && cfg.dgp.is_none() {
        bail!("'simulate' needs a 'dgp' kind");
    }

    let seed = match cfg.seed {
        Some(s) => s,
        None if matches!(command, "diagnose") => 0,
        None => bail!("'seed' is required (all randomness flows from it)"),
    };

    let dgp_kind = cfg.dgp.clone();
    if let Some(tok) = &dgp_kind {
        parse_dgp(tok, seed)?; // validate the token early
    }

    let functional = match &cfg.functional {
        Some(f) => {
            FunctionalKind::parse_token(f)?;
            f.clone()
        }
        None => match &dgp_kind {
            Some(tok) => parse_dgp(tok, seed)?.functional_kind().token().to_string(),
            None => "ate".to_string(),
        },
    };
    let fk = FunctionalKind::parse_token(&functional)?;

    let riesz_model = cfg.riesz_model.clone().unwrap_or_else(|| "linear".into());
    if !matches!(riesz_model.as_str(), "linear" | "logit-inv" | "ratio") {
        bail!("unknown riesz model '{riesz_model}' (expected linear | logit-inv | ratio)");
    }
    let loss = cfg.loss.clone().unwrap_or_else(|| match riesz_model.as_str() {
        "logit-inv" => "kl".into(),
        _ => "ls".into(),
    });
    ConvexGenerator::parse_token(&loss)?;
    let pair_ok = match riesz_model.as_str() {
        "linear" => loss == "ls",
        "logit-inv" => matches!(loss.as_str(), "kl" | "entropy"),
        "ratio" => loss == "ls" || loss == "kl" || loss.starts_with("power:"),
        _ => false,
    };
    if !pair_ok {
        bail!(
            "(riesz model {riesz_model}, loss {loss}) is not a supported pair; supported: \
             linear x {{ls}}, logit-inv x {{kl, entropy}}, ratio x {{ls, kl, power:<b>}}"
        );
    }

    let riesz_basis = cfg.riesz_basis.clone().unwrap_or_else(|| {
        match (riesz_model.as_str(), fk) {
            ("linear", FunctionalKind::Ate | FunctionalKind::Att) => "split:1".into(),
            ("linear", FunctionalKind::Ame) => "raw".into(),
            _ => "zraw".into(),
        }
    });
    let gamma_basis = cfg.gamma_basis.clone().unwrap_or_else(|| match fk {
        FunctionalKind::Ate | FunctionalKind::Att => "split:1".into(),
        FunctionalKind::Ame => "poly:2".into(),
        FunctionalKind::CovShiftMean => "zraw".into(),
    });
    // validate the basis grammar early with a placeholder arity
    parse_basis(&riesz_basis, 1)?;
    parse_basis(&gamma_basis, 1)?;

    let reps = cfg.reps.unwrap_or(100);
    if command == "montecarlo" && reps == 0 {
        bail!("'reps' must be at least 1");
    }

    Ok(ResolvedConfig {
        command: command.to_string(),
        data: cfg.data.clone(),
        dgp: dgp_kind,
        n: cfg.n.unwrap_or(1000),
        seed,
        functional,
        riesz_model,
        riesz_basis,
        loss,
        weighted: cfg.weighted.unwrap_or(false),
        gamma_basis,
        tmle: cfg.tmle.unwrap_or(false),
        iterations: cfg.iterations.unwrap_or(0),
        crossfit: cfg.crossfit.unwrap_or(5),
        ridge: cfg.ridge.unwrap_or(0.0),
        tol: cfg.tol.unwrap_or(1e-10),
        max_iter: cfg.max_iter.unwrap_or(0),
        reps,
        jobs: cfg.jobs.unwrap_or_else(default_jobs),
        out: cfg.out.clone(),
        scores_out: cfg.scores_out.clone(),
    })
}

/// Basis grammar: `split[:K]` (treatment-split over a degree-K covariate
/// polynomial), `poly:K` (degree-K interactions in treatment and
/// covariates), `zpoly:K` (covariates only), `raw` (intercept, treatment,
/// covariates), `zraw` (intercept and covariates).
pub fn parse_basis(token: &str, q: usize) -> Result<BasisSpec> {
    let spec = if token == "split" {
        BasisSpec::treatment_split(q, 1)
    } else if let Some(k) = token.strip_prefix("split:") {
        BasisSpec::treatment_split(q, k.parse().context("split degree")?)
    } else if let Some(k) = token.strip_prefix("poly:") {
        BasisSpec::polynomial(q, k.parse().context("poly degree")?, true)
    } else if let Some(k) = token.strip_prefix("zpoly:") {
        BasisSpec::polynomial(q, k.parse().context("zpoly degree")?, false)
    } else if token == "raw" {
        BasisSpec::raw_plus_intercept(q, true)
    } else if token == "zraw" {
        BasisSpec::raw_plus_intercept(q, false)
    } else {
        bail!(
            "unknown basis '{token}' (expected split[:K] | poly:K | zpoly:K | raw | zraw)"
        );
    };
    Ok(spec?)
}

pub fn parse_riesz_model(token: &str, basis: BasisSpec) -> Result<RieszModel> {
    Ok(match token {
        "linear" => RieszModel::LinearInBasis { basis },
        "logit-inv" => RieszModel::InvPropensityLogistic { basis },
        "ratio" => RieszModel::PositiveRatio { basis },
        other => bail!("unknown riesz model '{other}'"),
    })
}

/// DGP tokens: `ate-logistic`, `att-logistic`, `ame-gaussian`,
/// `covshift-gaussian`, `covshift-gaussian-flat` (zero shift),
/// `discrete-ate` (samples the enumerated binary distribution).
pub fn parse_dgp(token: &str, seed: u64) -> Result<DgpSpec> {
    Ok(match token {
        "ate-logistic" => DgpSpec::ate_logistic(seed),
        "att-logistic" => DgpSpec::att_logistic(seed),
        "ame-gaussian" => DgpSpec::ame_gaussian(seed),
        "covshift-gaussian" => DgpSpec::covshift_gaussian(seed),
        "covshift-gaussian-flat" => DgpSpec::CovShiftGaussian {
            params: debias_core::CovShiftGaussianParams {
                shift: vec![0.0, 0.0],
                ..Default::default()
            },
            seed,
        },
        "discrete-ate" => DgpSpec::DiscreteEnumerable {
            dist: debias_core::ate_enumeration(),
            seed,
        },
        other => bail!(
            "unknown dgp '{other}' (expected ate-logistic | att-logistic | ame-gaussian | \
             covshift-gaussian | covshift-gaussian-flat | discrete-ate)"
        ),
    })
}

/// Load the dataset a resolved config points at (CSV file or simulation).
pub fn load_dataset(cfg: &ResolvedConfig) -> Result<Dataset> {
    if let Some(path) = &cfg.data {
        Ok(Dataset::from_csv_path(path)?)
    } else if let Some(tok) = &cfg.dgp {
        Ok(parse_dgp(tok, cfg.seed)?.sample(cfg.n)?)
    } else {
        bail!("no data source configured");
    }
}
