//! Convex generators and the pointwise Bregman machinery.
//!
//! A generator `g` induces the divergence
//! `BR(a0 | a) = g(a0) - g(a) - g'(a) (a0 - a)` and the feasible risk
//! integrand `-g(a) + g'(a) a - m(g'(a))`, which differ by a term that does
//! not depend on `a`. Squared loss recovers least-squares representer
//! regression, the KL generator the unnormalized-KL / constrained-MLE
//! objectives, the entropy generator tailored balancing losses, and the
//! power-divergence family robust density-ratio losses.

use crate::error::{Error, Result};

/// The convex function family. Domains:
/// - `Ls`: all reals;
/// - `Kl` (signed `|u| ln|u| - |u|`): reals excluding 0, convex on each
///   sign branch; the positive branch `u ln u - u` is the ratio form;
/// - `Entropy` (`(|u|-1) ln(|u|-1) - |u|`): `u < -1` or `u > 1`;
/// - `PowerDiv { b }` (`(u^(1+b) - u)/b`): positive reals, `0 < b <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvexGenerator {
    Ls,
    Kl,
    Entropy,
    PowerDiv { b: f64 },
}

/// The two pieces of the feasible risk at one point: the term in the
/// observed argument and the term the target functional is applied to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibleIntegrand {
    /// `-g(a) + g'(a) a`.
    pub selfterm: f64,
    /// `g'(a)`; the caller applies the functional `m` to this.
    pub linkterm: f64,
}

impl ConvexGenerator {
    /// Power-divergence generator; convex only for `0 < b <= 1`.
    pub fn power_div(b: f64) -> Result<Self> {
        if !(b > 0.0 && b <= 1.0) {
            return Err(Error::InvalidData(format!(
                "power divergence needs 0 < b <= 1, got {b}"
            )));
        }
        Ok(Self::PowerDiv { b })
    }

    /// Parse the CLI token: `ls` | `kl` | `entropy` | `power:<b>`.
    pub fn parse_token(token: &str) -> Result<Self> {
        match token {
            "ls" => Ok(Self::Ls),
            "kl" => Ok(Self::Kl),
            "entropy" => Ok(Self::Entropy),
            other => {
                if let Some(b) = other.strip_prefix("power:") {
                    let b: f64 = b.parse().map_err(|_| {
                        Error::InvalidData(format!("cannot parse exponent in '{other}'"))
                    })?;
                    Self::power_div(b)
                } else {
                    Err(Error::InvalidData(format!(
                        "unknown loss '{other}' (expected ls | kl | entropy | power:<b>)"
                    )))
                }
            }
        }
    }

    pub fn token(&self) -> String {
        match self {
            Self::Ls => "ls".into(),
            Self::Kl => "kl".into(),
            Self::Entropy => "entropy".into(),
            Self::PowerDiv { b } => format!("power:{b}"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ls => "least-squares",
            Self::Kl => "kl",
            Self::Entropy => "entropy",
            Self::PowerDiv { .. } => "power-divergence",
        }
    }

    fn domain_str(&self) -> &'static str {
        match self {
            Self::Ls => "(-inf, inf)",
            Self::Kl => "u != 0",
            Self::Entropy => "u < -1 or u > 1",
            Self::PowerDiv { .. } => "u > 0",
        }
    }

    /// Whether `u` lies in the generator's domain.
    pub fn contains(&self, u: f64) -> bool {
        u.is_finite()
            && match self {
                Self::Ls => true,
                Self::Kl => u != 0.0,
                Self::Entropy => u.abs() > 1.0,
                Self::PowerDiv { .. } => u > 0.0,
            }
    }

    fn check(&self, u: f64) -> Result<()> {
        if self.contains(u) {
            Ok(())
        } else {
            Err(Error::Domain {
                generator: self.name(),
                value: u,
                domain: self.domain_str(),
            })
        }
    }

    /// `g(u)`. Domain errors are raised, never clamped.
    pub fn g_eval(&self, u: f64) -> Result<f64> {
        self.check(u)?;
        Ok(match self {
            Self::Ls => (u - 1.0) * (u - 1.0),
            Self::Kl => u.abs() * u.abs().ln() - u.abs(),
            Self::Entropy => {
                let t = u.abs() - 1.0;
                t * t.ln() - u.abs()
            }
            Self::PowerDiv { b } => (u.powf(1.0 + b) - u) / b,
        })
    }

    /// `g'(u)`.
    pub fn g_deriv(&self, u: f64) -> Result<f64> {
        self.check(u)?;
        Ok(match self {
            Self::Ls => 2.0 * (u - 1.0),
            Self::Kl => {
                if u > 0.0 {
                    u.ln()
                } else {
                    -(-u).ln()
                }
            }
            Self::Entropy => {
                if u > 1.0 {
                    (u - 1.0).ln()
                } else {
                    -(-u - 1.0).ln()
                }
            }
            Self::PowerDiv { b } => ((1.0 + b) * u.powf(*b) - 1.0) / b,
        })
    }

    /// `g''(u)`; strictly positive on each convex branch.
    pub fn g_deriv2(&self, u: f64) -> Result<f64> {
        self.check(u)?;
        Ok(match self {
            Self::Ls => 2.0,
            Self::Kl => 1.0 / u.abs(),
            Self::Entropy => 1.0 / (u.abs() - 1.0),
            Self::PowerDiv { b } => (1.0 + b) * u.powf(b - 1.0),
        })
    }

    /// Pointwise Bregman divergence `g(a0) - g(a) - g'(a)(a0 - a)`.
    ///
    /// Nonnegative, and zero only at `a0 = a`, whenever both arguments lie
    /// on the same convex branch of the domain.
    pub fn bregman_pointwise(&self, a0: f64, a: f64) -> Result<f64> {
        Ok(self.g_eval(a0)? - self.g_eval(a)? - self.g_deriv(a)? * (a0 - a))
    }

    /// The feasible-risk integrand pieces at `a`.
    pub fn feasible_integrand(&self, a: f64) -> Result<FeasibleIntegrand> {
        let g = self.g_eval(a)?;
        let dg = self.g_deriv(a)?;
        Ok(FeasibleIntegrand {
            selfterm: -g + dg * a,
            linkterm: dg,
        })
    }
}
