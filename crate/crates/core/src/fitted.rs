//! Fitted functions: a coefficient vector, a basis, and a link mapping the
//! linear predictor into the function's range.

use ndarray::{Array1, ArrayView1};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};

/// Linear predictors beyond this magnitude saturate the logistic link
/// (propensities within double precision of 0 or 1).
pub const LOGISTIC_CAP: f64 = 36.0;
/// Exponent cap for the positive-ratio link.
pub const EXP_CAP: f64 = 30.0;

pub(crate) fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else if u < -30.0 {
        u.exp()
    } else {
        u.exp().ln_1p()
    }
}

/// Link applied to the linear predictor `u = beta' phi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// `f = u`.
    Identity,
    /// Signed inverse-propensity representer from a logistic propensity over
    /// `z`: `+1/pi(z)` at `d = 1`, `-1/(1-pi(z))` at `d = 0`. Each arm's
    /// inverse propensity lies in `(1, inf)`.
    InversePropensityLogistic,
    /// `f = 1 + softplus(u)`, range `(1, inf)`.
    SoftplusPlusOne,
    /// `f = softplus(u) + 1e-12`, range `(0, inf)`.
    SoftplusPositive,
    /// `f = exp(u)`, range `(0, inf)`; the log-linear density-ratio model.
    Exp,
}

/// A basis expansion with coefficients and a link; the common currency for
/// outcome regressions, propensity models, and fitted representers.
#[derive(Debug, Clone)]
pub struct FittedFunction {
    pub beta: Array1<f64>,
    pub basis: BasisSpec,
    pub link: Link,
}

impl FittedFunction {
    pub fn new(beta: Array1<f64>, basis: BasisSpec, link: Link) -> Result<Self> {
        if beta.len() != basis.p() {
            return Err(Error::DimensionMismatch(format!(
                "coefficients ({}) do not match basis dimension ({})",
                beta.len(),
                basis.p()
            )));
        }
        if link == Link::InversePropensityLogistic && basis.includes_treatment() {
            return Err(Error::Unsupported(
                "inverse-propensity link needs a covariate-only basis".into(),
            ));
        }
        Ok(Self { beta, basis, link })
    }

    fn predictor(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<f64> {
        let phi = self.basis.eval(d, z)?;
        Ok(phi.dot(&self.beta))
    }

    /// Evaluate the function at `(d, z)`.
    pub fn value(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<f64> {
        match self.link {
            Link::Identity => self.predictor(d, z),
            Link::InversePropensityLogistic => {
                let r = self.arm_inverse_propensity(d, z)?;
                Ok(if d == 1.0 { r } else { -r })
            }
            Link::SoftplusPlusOne => Ok(1.0 + softplus(self.predictor(d, z)?)),
            Link::SoftplusPositive => Ok(softplus(self.predictor(d, z)?) + 1e-12),
            Link::Exp => Ok(self.predictor(d, z)?.clamp(-EXP_CAP, EXP_CAP).exp()),
        }
    }

    /// Inverse propensity of the given arm: `1/pi(z)` for `d = 1`,
    /// `1/(1 - pi(z))` for `d = 0`. Values lie in `(1, inf)`.
    pub fn arm_inverse_propensity(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<f64> {
        if self.link != Link::InversePropensityLogistic {
            return Err(Error::Unsupported(
                "arm_inverse_propensity needs the inverse-propensity link".into(),
            ));
        }
        if d != 1.0 && d != 0.0 {
            return Err(Error::InvalidData(format!(
                "inverse-propensity link needs d in {{0,1}}, got {d}"
            )));
        }
        let u = self
            .predictor(d, z)?
            .clamp(-LOGISTIC_CAP, LOGISTIC_CAP);
        // pi = logistic(u); 1/pi = 1 + exp(-u), 1/(1-pi) = 1 + exp(u)
        Ok(if d == 1.0 {
            1.0 + (-u).exp()
        } else {
            1.0 + u.exp()
        })
    }

    /// Propensity `pi(z)` implied by the inverse-propensity link.
    pub fn propensity(&self, z: ArrayView1<'_, f64>) -> Result<f64> {
        Ok(1.0 / self.arm_inverse_propensity(1.0, z)?)
    }

    /// Derivative of the value with respect to the treatment coordinate.
    pub fn d_deriv(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<f64> {
        if !self.basis.includes_treatment() {
            return Ok(0.0);
        }
        let du = self.basis.d_deriv(d, z)?.dot(&self.beta);
        match self.link {
            Link::Identity => Ok(du),
            Link::InversePropensityLogistic => Err(Error::Unsupported(
                "inverse-propensity representer is not differentiable in d".into(),
            )),
            Link::SoftplusPlusOne | Link::SoftplusPositive => {
                let u = self.predictor(d, z)?;
                Ok(du / (1.0 + (-u).exp()))
            }
            Link::Exp => {
                let u = self.predictor(d, z)?.clamp(-EXP_CAP, EXP_CAP);
                Ok(du * u.exp())
            }
        }
    }
}
