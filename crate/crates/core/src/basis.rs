//! Feature expansions mapping a treatment/covariate pair to a basis vector.
//!
//! Three families cover every model in the crate: a raw design with
//! intercept, polynomial interactions in `(d, z)`, and the treatment-split
//! design `(1[d=1] phi(z), 1[d=0] phi(z))` used for per-arm regressions and
//! balancing weights.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// Exponent vector over the basis variables.
type Monomial = Vec<u32>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BasisKind {
    /// `(1, [d,] z1..zq)` — intercept plus raw columns.
    RawPlusIntercept,
    /// All monomials in `([d,] z1..zq)` of total degree at most `degree`.
    PolynomialInteraction { degree: usize },
    /// `(1[d=1] phi(z), 1[d=0] phi(z))` with `phi` a polynomial basis over
    /// `z` of degree `z_degree` (degree 0 = intercept only).
    TreatmentSplit { z_degree: usize },
}

/// A concrete basis: kind, covariate arity, and whether the treatment value
/// enters the features.
#[derive(Debug, Clone)]
pub struct BasisSpec {
    kind: BasisKind,
    q: usize,
    includes_treatment: bool,
    /// For `RawPlusIntercept`/`PolynomialInteraction`: monomials over the
    /// variable list `([d,] z1..zq)`. For `TreatmentSplit`: monomials of the
    /// inner `phi` over `z` alone.
    monomials: Vec<Monomial>,
    p: usize,
}

/// Enumerate exponent vectors of total degree <= `degree` over `nvars`
/// variables. Order: total degree ascending; within a degree, interaction
/// terms (more distinct variables) before pure powers, ties broken by
/// lexicographically descending exponents. Degree 2 over `(d, z)` therefore
/// reads `1, d, z, d*z, d^2, z^2`.
fn enumerate_monomials(nvars: usize, degree: usize) -> Vec<Monomial> {
    fn extend(current: &mut Monomial, var: usize, remaining: u32, out: &mut Vec<Monomial>) {
        if var == current.len() {
            out.push(current.clone());
            return;
        }
        for e in 0..=remaining {
            current[var] = e;
            extend(current, var + 1, remaining - e, out);
            current[var] = 0;
        }
    }

    let mut all = Vec::new();
    let mut buf = vec![0u32; nvars];
    extend(&mut buf, 0, degree as u32, &mut all);
    all.sort_by(|a, b| {
        let da: u32 = a.iter().sum();
        let db: u32 = b.iter().sum();
        let na = a.iter().filter(|&&e| e > 0).count();
        let nb = b.iter().filter(|&&e| e > 0).count();
        da.cmp(&db).then(nb.cmp(&na)).then(b.cmp(a))
    });
    all
}

impl BasisSpec {
    pub fn raw_plus_intercept(q: usize, includes_treatment: bool) -> Result<Self> {
        Self::validated(BasisKind::RawPlusIntercept, q, includes_treatment)
    }

    /// Degree 0 gives the intercept-only basis.
    pub fn polynomial(q: usize, degree: usize, includes_treatment: bool) -> Result<Self> {
        Self::validated(
            BasisKind::PolynomialInteraction { degree },
            q,
            includes_treatment,
        )
    }

    pub fn treatment_split(q: usize, z_degree: usize) -> Result<Self> {
        Self::validated(BasisKind::TreatmentSplit { z_degree }, q, true)
    }

    fn validated(kind: BasisKind, q: usize, includes_treatment: bool) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidData("basis needs q >= 1 covariates".into()));
        }
        let (monomials, p, includes_treatment) = match kind {
            BasisKind::RawPlusIntercept => {
                let nvars = q + usize::from(includes_treatment);
                let m = enumerate_monomials(nvars, 1);
                let p = m.len();
                (m, p, includes_treatment)
            }
            BasisKind::PolynomialInteraction { degree } => {
                let nvars = q + usize::from(includes_treatment);
                let m = enumerate_monomials(nvars, degree);
                let p = m.len();
                (m, p, includes_treatment)
            }
            BasisKind::TreatmentSplit { z_degree } => {
                let m = enumerate_monomials(q, z_degree);
                let p = 2 * m.len();
                (m, p, true)
            }
        };
        Ok(Self {
            kind,
            q,
            includes_treatment,
            monomials,
            p,
        })
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    /// Output dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Whether the features depend on the treatment value.
    pub fn includes_treatment(&self) -> bool {
        self.includes_treatment
    }

    /// Whether `d_deriv` is defined: features must be smooth in `d`.
    pub fn differentiable_in_d(&self) -> bool {
        self.includes_treatment && !matches!(self.kind, BasisKind::TreatmentSplit { .. })
    }

    fn check_z(&self, z: ArrayView1<'_, f64>) -> Result<()> {
        if z.len() != self.q {
            return Err(Error::DimensionMismatch(format!(
                "basis expects {} covariates, got {}",
                self.q,
                z.len()
            )));
        }
        Ok(())
    }

    /// Evaluate the feature vector at `(d, z)`. Deterministic and pure.
    pub fn eval(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let mut out = Array1::zeros(self.p);
        self.eval_into(d, z, out.as_slice_mut().unwrap())?;
        Ok(out)
    }

    pub fn eval_into(&self, d: f64, z: ArrayView1<'_, f64>, out: &mut [f64]) -> Result<()> {
        self.check_z(z)?;
        debug_assert_eq!(out.len(), self.p);
        match self.kind {
            BasisKind::RawPlusIntercept | BasisKind::PolynomialInteraction { .. } => {
                for (slot, mono) in out.iter_mut().zip(&self.monomials) {
                    *slot = self.monomial_value(mono, d, z);
                }
            }
            BasisKind::TreatmentSplit { .. } => {
                if d != 0.0 && d != 1.0 {
                    return Err(Error::InvalidData(format!(
                        "treatment-split basis needs d in {{0,1}}, got {d}"
                    )));
                }
                let k = self.monomials.len();
                for (j, mono) in self.monomials.iter().enumerate() {
                    let phi = self.monomial_value_z(mono, z);
                    out[j] = if d == 1.0 { phi } else { 0.0 };
                    out[k + j] = if d == 0.0 { phi } else { 0.0 };
                }
            }
        }
        Ok(())
    }

    /// Coordinate-wise derivative of the features with respect to `d`.
    pub fn d_deriv(&self, d: f64, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let mut out = Array1::zeros(self.p);
        self.d_deriv_into(d, z, out.as_slice_mut().unwrap())?;
        Ok(out)
    }

    pub fn d_deriv_into(&self, d: f64, z: ArrayView1<'_, f64>, out: &mut [f64]) -> Result<()> {
        if !self.differentiable_in_d() {
            return Err(Error::Unsupported(
                "basis has no smooth treatment dependence; marginal-effect \
                 functionals need a polynomial basis with includes_treatment"
                    .into(),
            ));
        }
        self.check_z(z)?;
        for (slot, mono) in out.iter_mut().zip(&self.monomials) {
            let a = mono[0]; // d-exponent: variable 0 is the treatment
            *slot = if a == 0 {
                0.0
            } else {
                let mut v = a as f64 * d.powi(a as i32 - 1);
                for (j, &e) in mono.iter().enumerate().skip(1) {
                    if e > 0 {
                        v *= z[j - 1].powi(e as i32);
                    }
                }
                v
            };
        }
        Ok(())
    }

    fn monomial_value(&self, mono: &Monomial, d: f64, z: ArrayView1<'_, f64>) -> f64 {
        let mut v = 1.0;
        let offset = usize::from(self.includes_treatment);
        for (j, &e) in mono.iter().enumerate() {
            if e == 0 {
                continue;
            }
            let x = if self.includes_treatment && j == 0 {
                d
            } else {
                z[j - offset]
            };
            v *= x.powi(e as i32);
        }
        v
    }

    fn monomial_value_z(&self, mono: &Monomial, z: ArrayView1<'_, f64>) -> f64 {
        let mut v = 1.0;
        for (j, &e) in mono.iter().enumerate() {
            if e > 0 {
                v *= z[j].powi(e as i32);
            }
        }
        v
    }
}
