use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimplicialComplex;
use crate::Result;

/// On-disk layout of a complex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexFile {
    pub vertices: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    pub triangles: Vec<[usize; 3]>,
    #[serde(default)]
    pub positions: Option<Vec<[f64; 2]>>,
}

impl From<&SimplicialComplex> for ComplexFile {
    fn from(c: &SimplicialComplex) -> Self {
        Self {
            vertices: c.vertices.clone(),
            edges: c.edges.clone(),
            triangles: c.triangles.clone(),
            positions: c.positions.clone(),
        }
    }
}

impl ComplexFile {
    /// Re-canonicalises and re-validates the stored simplices.
    pub fn into_complex(self) -> Result<SimplicialComplex> {
        let c = SimplicialComplex::new(&self.vertices, &self.edges, &self.triangles, self.positions.as_deref())?;
        c.check_closure()?;
        Ok(c)
    }
}

impl SimplicialComplex {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ComplexFile::from(self)).expect("complex serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ComplexFile>(s)?.into_complex()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::build_complex;

    #[test]
    fn roundtrip() {
        let c = build_complex(&[[4, 0]], &[[0, 1, 2], [1, 2, 3]]).unwrap();
        let back = SimplicialComplex::from_json(&c.to_json()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn loading_recanonicalises() {
        let s = r#"{"vertices":[0,1,2],"edges":[[2,1]],"triangles":[[2,0,1]],"positions":null}"#;
        let c = SimplicialComplex::from_json(s).unwrap();
        assert_eq!(c.edges(), &[[0, 1], [0, 2], [1, 2]]);
        assert_eq!(c.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn loading_rejects_garbage() {
        assert!(SimplicialComplex::from_json(r#"{"vertices":[0],"edges":[[0,0]],"triangles":[]}"#).is_err());
        assert!(SimplicialComplex::from_json(r#"{"vertices":[0],"edges":[],"triangles":[],"extra":1}"#).is_err());
    }
}
