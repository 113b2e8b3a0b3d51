use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HodgeSpectrum, OperatorTag};
use crate::complex::hex_digest;
use crate::{Error, Result};

/// SHA-256 over the dimensions and row-major little-endian entries.
pub fn laplacian_checksum(l: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update((l.nrows() as u64).to_le_bytes());
    h.update((l.ncols() as u64).to_le_bytes());
    for i in 0..l.nrows() {
        for j in 0..l.ncols() {
            h.update(l[(i, j)].to_le_bytes());
        }
    }
    hex_digest(h.finalize().as_slice())
}

/// Serialized eigendecomposition tied to the Laplacian it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCache {
    pub operator: Option<OperatorTag>,
    pub eigenvalues: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub eigenvectors: Vec<f64>,
    pub checksum: String,
}

impl SpectrumCache {
    pub fn new(spectrum: &HodgeSpectrum, laplacian: &DMatrix<f64>) -> Self {
        let v = &spectrum.eigenvectors;
        Self {
            operator: spectrum.source,
            eigenvalues: spectrum.eigenvalues.clone(),
            rows: v.nrows(),
            cols: v.ncols(),
            eigenvectors: (0..v.nrows()).flat_map(|i| (0..v.ncols()).map(move |j| v[(i, j)])).collect(),
            checksum: laplacian_checksum(laplacian),
        }
    }

    /// Rebuilds the spectrum, refusing if `laplacian` is not the matrix the
    /// cache was computed from.
    pub fn restore(&self, laplacian: &DMatrix<f64>) -> Result<HodgeSpectrum> {
        let now = laplacian_checksum(laplacian);
        if now != self.checksum {
            return Err(Error::StaleCache(format!("checksum {} does not match {}", self.checksum, now)));
        }
        if self.eigenvectors.len() != self.rows * self.cols || self.eigenvalues.len() != self.cols {
            return Err(Error::Shape("cached eigenpairs are inconsistent".into()));
        }
        Ok(HodgeSpectrum {
            eigenvalues: self.eigenvalues.clone(),
            eigenvectors: DMatrix::from_row_slice(self.rows, self.cols, &self.eigenvectors),
            source: self.operator,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
