//! Observation data: outcomes, treatments, covariates, and optional
//! source/target role tags for covariate-shift problems.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Sample membership for covariate-shift datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Role {
    /// Labeled rows carrying outcomes.
    Source,
    /// Unlabeled rows from the shifted covariate distribution.
    Target,
}

/// Whether the treatment column is a {0,1} indicator or a real scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TreatmentKind {
    Binary,
    Continuous,
}

/// A fixed sample of observations `(y_i, d_i, z_i)`.
///
/// Immutable after construction; cheap to share across threads. Outcomes may
/// be absent only on `Target`-tagged rows (unlabeled target covariates).
/// Categorical covariates must be numerically encoded by the caller.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<Option<f64>>,
    d: Array1<f64>,
    z: Array2<f64>,
    roles: Option<Vec<Role>>,
    treatment: TreatmentKind,
}

impl Dataset {
    /// Build and validate a dataset. Treatment kind is inferred: binary when
    /// both arms appear and every value is 0 or 1.
    ///
    /// Validation rules:
    /// - all columns share the same length, all values finite;
    /// - without role tags every row needs an outcome;
    /// - with role tags only `Source` rows need outcomes;
    /// - binary treatments without role tags need at least one row per arm.
    pub fn new(
        y: Vec<Option<f64>>,
        d: Array1<f64>,
        z: Array2<f64>,
        roles: Option<Vec<Role>>,
    ) -> Result<Self> {
        let n = d.len();
        if y.len() != n || z.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "dataset columns disagree: y={}, d={}, z rows={}",
                y.len(),
                n,
                z.nrows()
            )));
        }
        if let Some(r) = &roles {
            if r.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "role column has {} entries for {} rows",
                    r.len(),
                    n
                )));
            }
        }
        if n == 0 {
            return Err(Error::InvalidData("empty dataset".into()));
        }
        if d.iter().any(|v| !v.is_finite()) || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite treatment or covariate".into()));
        }
        for (i, yi) in y.iter().enumerate() {
            match yi {
                Some(v) if !v.is_finite() => {
                    return Err(Error::InvalidData(format!("non-finite outcome in row {i}")));
                }
                None => {
                    let is_target = roles
                        .as_ref()
                        .map(|r| r[i] == Role::Target)
                        .unwrap_or(false);
                    if !is_target {
                        return Err(Error::InvalidData(format!(
                            "row {i} has no outcome but is not a target row"
                        )));
                    }
                }
                _ => {}
            }
        }

        let all_binary = d.iter().all(|&v| v == 0.0 || v == 1.0);
        let has_treated = d.iter().any(|&v| v == 1.0);
        let has_control = d.iter().any(|&v| v == 0.0);
        let treatment = if all_binary && has_treated && has_control {
            TreatmentKind::Binary
        } else {
            TreatmentKind::Continuous
        };
        if roles.is_none() && all_binary && !(has_treated && has_control) {
            return Err(Error::InvalidData(
                "binary treatment requires at least one treated and one control row".into(),
            ));
        }

        Ok(Self {
            y,
            d,
            z,
            roles,
            treatment,
        })
    }

    /// Convenience constructor for fully labeled data.
    pub fn from_parts(y: Array1<f64>, d: Array1<f64>, z: Array2<f64>) -> Result<Self> {
        Self::new(y.iter().map(|&v| Some(v)).collect(), d, z, None)
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// Number of covariate columns.
    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn treatment_kind(&self) -> TreatmentKind {
        self.treatment
    }

    pub fn is_binary(&self) -> bool {
        self.treatment == TreatmentKind::Binary
    }

    pub fn d(&self) -> &Array1<f64> {
        &self.d
    }

    pub fn z_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.z.row(i)
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    /// Outcome of row `i`, if present.
    pub fn outcome(&self, i: usize) -> Option<f64> {
        self.y[i]
    }

    pub fn roles(&self) -> Option<&[Role]> {
        self.roles.as_deref()
    }

    pub fn has_roles(&self) -> bool {
        self.roles.is_some()
    }

    pub fn role(&self, i: usize) -> Role {
        self.roles.as_ref().map(|r| r[i]).unwrap_or(Role::Source)
    }

    /// Indices of rows carrying outcomes (all rows when untagged).
    pub fn source_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.role(i) == Role::Source).collect()
    }

    pub fn target_rows(&self) -> Vec<usize> {
        match &self.roles {
            None => Vec::new(),
            Some(r) => (0..self.n()).filter(|&i| r[i] == Role::Target).collect(),
        }
    }

    pub fn treated_count(&self) -> usize {
        self.d.iter().filter(|&&v| v == 1.0).count()
    }

    /// Sample fraction of treated rows.
    pub fn treated_fraction(&self) -> f64 {
        self.treated_count() as f64 / self.n() as f64
    }

    /// Restrict to a subset of rows (used by cross-fitting).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let d = Array1::from_iter(rows.iter().map(|&i| self.d[i]));
        let mut z = Array2::zeros((rows.len(), self.q()));
        for (k, &i) in rows.iter().enumerate() {
            z.row_mut(k).assign(&self.z.row(i));
        }
        let roles = self
            .roles
            .as_ref()
            .map(|r| rows.iter().map(|&i| r[i]).collect());
        Self::new(y, d, z, roles)
    }

    /// Read a dataset from CSV. The header row is required; columns are
    /// `y`, `d`, `z1..zq`, and optionally `role` with values `source`/`target`.
    /// Decimal parsing is locale-independent.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Csv(e.to_string()))?
            .clone();

        let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let y_col = find("y").ok_or_else(|| Error::Csv("missing column 'y'".into()))?;
        let d_col = find("d").ok_or_else(|| Error::Csv("missing column 'd'".into()))?;
        let role_col = find("role");
        let mut z_cols = Vec::new();
        for k in 1.. {
            match find(&format!("z{k}")) {
                Some(idx) => z_cols.push(idx),
                None => break,
            }
        }
        if z_cols.is_empty() {
            return Err(Error::Csv("missing covariate columns 'z1..zq'".into()));
        }

        let parse = |field: &str, line: usize, col: &str| -> Result<f64> {
            field.parse::<f64>().map_err(|_| {
                Error::Csv(format!("line {line}: cannot parse '{field}' in column '{col}'"))
            })
        };

        let mut y = Vec::new();
        let mut d = Vec::new();
        let mut zrows = Vec::new();
        let mut roles = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let line = idx + 2; // 1-based, after header
            let record = record.map_err(|e| Error::Csv(e.to_string()))?;
            let yf = record
                .get(y_col)
                .ok_or_else(|| Error::Csv(format!("line {line}: short record")))?;
            y.push(if yf.is_empty() {
                None
            } else {
                Some(parse(yf, line, "y")?)
            });
            d.push(parse(record.get(d_col).unwrap_or(""), line, "d")?);
            let mut zr = Vec::with_capacity(z_cols.len());
            for (k, &c) in z_cols.iter().enumerate() {
                zr.push(parse(record.get(c).unwrap_or(""), line, &format!("z{}", k + 1))?);
            }
            zrows.push(zr);
            if let Some(rc) = role_col {
                let tag = record.get(rc).unwrap_or("");
                roles.push(match tag.to_ascii_lowercase().as_str() {
                    "source" => Role::Source,
                    "target" => Role::Target,
                    other => {
                        return Err(Error::Csv(format!(
                            "line {line}: role must be 'source' or 'target', got '{other}'"
                        )))
                    }
                });
            }
        }

        let n = d.len();
        let q = z_cols.len();
        let mut z = Array2::zeros((n, q));
        for (i, zr) in zrows.iter().enumerate() {
            for (j, &v) in zr.iter().enumerate() {
                z[(i, j)] = v;
            }
        }
        Self::new(
            y,
            Array1::from_vec(d),
            z,
            if role_col.is_some() { Some(roles) } else { None },
        )
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Write the dataset in the same CSV schema `from_csv_reader` accepts.
    pub fn to_csv_writer<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["y".to_string(), "d".to_string()];
        for k in 1..=self.q() {
            header.push(format!("z{k}"));
        }
        if self.has_roles() {
            header.push("role".into());
        }
        wtr.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
        for i in 0..self.n() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(self.y[i].map(|v| v.to_string()).unwrap_or_default());
            rec.push(self.d[i].to_string());
            for j in 0..self.q() {
                rec.push(self.z[(i, j)].to_string());
            }
            if self.has_roles() {
                rec.push(
                    match self.role(i) {
                        Role::Source => "source",
                        Role::Target => "target",
                    }
                    .into(),
                );
            }
            wtr.write_record(&rec).map_err(|e| Error::Csv(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv_writer(file)
    }
}
