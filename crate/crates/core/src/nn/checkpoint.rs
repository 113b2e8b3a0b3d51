use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComplexContext, Network, Truncation};
use crate::complex::SimplicialComplex;
use crate::{Error, Result};

/// Trained model tied to the complex it was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub complex_checksum: String,
    pub truncation: Truncation,
    /// Retained modes `[down, up]` per level, as used during training.
    pub modes: Vec<[usize; 2]>,
    pub network: Network,
}

impl Checkpoint {
    pub fn new(network: &Network, ctx: &ComplexContext, complex: &SimplicialComplex) -> Self {
        let modes = (0..3)
            .map(|k| match ctx.spectra(k) {
                Ok(s) => [s.down.k(), s.up.k()],
                Err(_) => [0, 0],
            })
            .collect();
        Self {
            complex_checksum: complex.checksum(),
            truncation: ctx.truncation().clone(),
            modes,
            network: network.clone(),
        }
    }

    /// Fails when `complex` is not the complex the model was trained on.
    pub fn check_complex(&self, complex: &SimplicialComplex) -> Result<()> {
        let c = complex.checksum();
        if c != self.complex_checksum {
            return Err(Error::StaleCache(format!(
                "checkpoint was trained on complex {} but got {}",
                self.complex_checksum, c
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.network.validate()?;
        Ok(c)
    }
}
