//! The model-ready panel: standardized metrics and covariates, the binary
//! treatment, and the capital-to-capital distance matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Upper bound on a great-circle distance in megameters (half the
/// circumference of a 6371 km sphere, rounded up).
pub const MAX_DISTANCE_MM: f64 = 20.038;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Country {
    pub id: String,
    pub name: String,
    pub income_group: String,
    pub capital_lat_deg: f64,
    pub capital_lon_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub countries: Vec<Country>,
    pub year: i32,
    /// N×P metrics.
    #[serde(with = "matrix_rows")]
    pub y: DMatrix<f64>,
    /// N×K covariates.
    #[serde(with = "matrix_rows")]
    pub x: DMatrix<f64>,
    /// Dichotomized treatment, 0 or 1 per country.
    pub t: Vec<u8>,
    /// N×N great-circle distances in megameters.
    #[serde(with = "matrix_rows")]
    pub d: DMatrix<f64>,
    pub metric_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub anchor_index: usize,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.countries.len()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn t_vec(&self) -> DVector<f64> {
        DVector::from_iterator(self.t.len(), self.t.iter().map(|&v| v as f64))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.countries.iter().position(|c| c.id == id)
    }

    pub fn treatment_split(&self) -> (usize, usize) {
        let treated = self.t.iter().filter(|&&v| v == 1).count();
        (self.t.len() - treated, treated)
    }

    /// Structural checks. When `standardized` is set, also requires every
    /// column of Y and X to have mean 0 and sample sd 1 within 1e-10.
    pub fn validate(&self, standardized: bool) -> Result<()> {
        let n = self.n();
        if self.y.nrows() != n || self.x.nrows() != n || self.t.len() != n {
            return Err(Error::Dimension(format!(
                "{} countries but Y has {} rows, X {} rows, T {} entries",
                n,
                self.y.nrows(),
                self.x.nrows(),
                self.t.len()
            )));
        }
        if self.d.nrows() != n || self.d.ncols() != n {
            return Err(Error::Dimension(format!("distance matrix is {}x{}", self.d.nrows(), self.d.ncols())));
        }
        if self.metric_names.len() != self.p() || self.covariate_names.len() != self.k() {
            return Err(Error::Dimension("column names do not match matrix widths".into()));
        }
        if self.anchor_index >= n {
            return Err(Error::Dimension(format!("anchor index {} out of range", self.anchor_index)));
        }
        if self.t.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter("treatment must be 0 or 1".into()));
        }
        if self.y.iter().chain(self.x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite value in Y or X".into()));
        }
        for i in 0..n {
            if self.d[(i, i)] != 0.0 {
                return Err(Error::InvalidParameter("distance matrix diagonal must be zero".into()));
            }
            for j in 0..i {
                let v = self.d[(i, j)];
                if v != self.d[(j, i)] || !(0.0..=MAX_DISTANCE_MM).contains(&v) {
                    return Err(Error::InvalidParameter(format!("bad distance entry ({i},{j}) = {v}")));
                }
            }
        }
        if standardized {
            for (name, col) in self
                .metric_names
                .iter()
                .zip(self.y.column_iter())
                .chain(self.covariate_names.iter().zip(self.x.column_iter()))
            {
                let m = col.mean();
                let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
                if m.abs() >= 1e-10 || (sd - 1.0).abs() >= 1e-10 {
                    return Err(Error::InvalidParameter(format!(
                        "column {name} is not standardized (mean {m}, sd {sd})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serde adapter writing a matrix as a list of rows.
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        serde::Serialize::serialize(&rows, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(nrows, ncols, rows.into_iter().flatten()))
    }
}
