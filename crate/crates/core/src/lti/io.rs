use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LtiStateSpace;
use crate::signal::Dataset;
use crate::{Error, Result};

const FORMAT: &str = "lti-model";

/// Hex SHA-256 over the shape, sample rate and raw sample bits of a dataset.
pub fn dataset_hash(d: &Dataset) -> String {
    let mut h = Sha256::new();
    for v in [d.len(), d.n_inputs(), d.n_outputs()] {
        h.update((v as u64).to_le_bytes());
    }
    h.update(d.sample_rate.to_bits().to_le_bytes());
    for m in [&d.u, &d.y] {
        for k in 0..m.nrows() {
            for j in 0..m.ncols() {
                h.update(m[(k, j)].to_bits().to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl MatrixJson {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data: (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect(),
        }
    }

    fn to_matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::dim(format!("{name}: {} entries for a {}x{} matrix", self.data.len(), self.rows, self.cols)));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LtiProvenance {
    pub dataset_hash: String,
    pub order: usize,
    pub subspace_rmse: f64,
    pub refined_rmse: f64,
    pub stable: bool,
    /// Diagonal of the state scaling applied after estimation, if any.
    pub state_scales: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiModelFile {
    pub format: String,
    pub nx: usize,
    pub nu: usize,
    pub ny: usize,
    pub a: MatrixJson,
    pub b: MatrixJson,
    pub c: MatrixJson,
    pub d: MatrixJson,
    pub x0: Option<Vec<f64>>,
    pub provenance: LtiProvenance,
}

impl LtiModelFile {
    pub fn new(m: &LtiStateSpace, x0: Option<&DVector<f64>>, provenance: LtiProvenance) -> Self {
        LtiModelFile {
            format: FORMAT.to_string(),
            nx: m.nx(),
            nu: m.nu(),
            ny: m.ny(),
            a: MatrixJson::from_matrix(&m.a),
            b: MatrixJson::from_matrix(&m.b),
            c: MatrixJson::from_matrix(&m.c),
            d: MatrixJson::from_matrix(&m.d),
            x0: x0.map(|v| v.iter().copied().collect()),
            provenance,
        }
    }

    pub fn to_model(&self) -> Result<LtiStateSpace> {
        if self.format != FORMAT {
            return Err(Error::arg(format!("unknown LTI model format {:?}", self.format)));
        }
        let m = LtiStateSpace::new(
            self.a.to_matrix("A")?,
            self.b.to_matrix("B")?,
            self.c.to_matrix("C")?,
            self.d.to_matrix("D")?,
        )?;
        if (m.nx(), m.nu(), m.ny()) != (self.nx, self.nu, self.ny) {
            return Err(Error::dim("matrix shapes disagree with the declared dimensions"));
        }
        Ok(m)
    }

    /// SHA-256 of the model matrices, used to check that runs share one
    /// linear model.
    pub fn model_hash(&self) -> String {
        let mut h = Sha256::new();
        for m in [&self.a, &self.b, &self.c, &self.d] {
            h.update((m.rows as u64).to_le_bytes());
            h.update((m.cols as u64).to_le_bytes());
            for v in &m.data {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::tests::random_stable;

    #[test]
    fn round_trip_is_exact_and_row_major() {
        let m = random_stable(3, 2, 1, 4, 0.7);
        let f = LtiModelFile::new(&m, None, LtiProvenance::default());
        assert_eq!(f.a.data[1], m.a[(0, 1)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lti.json");
        f.save(&p).unwrap();
        let back = LtiModelFile::load(&p).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
        assert_eq!(back.model_hash(), f.model_hash());
    }

    #[test]
    fn hash_tracks_content() {
        let d1 = Dataset::siso(&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0], 10.0).unwrap();
        let d2 = Dataset::siso(&[1.0, 2.0, 3.0], &[0.0, 1.0, 1e-300], 10.0).unwrap();
        assert_eq!(dataset_hash(&d1), dataset_hash(&d1.clone()));
        assert_ne!(dataset_hash(&d1), dataset_hash(&d2));
        assert_eq!(dataset_hash(&d1).len(), 64);
    }
}
