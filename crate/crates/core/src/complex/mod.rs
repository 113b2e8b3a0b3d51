//! Oriented simplicial 2-complexes, boundary matrices and Hodge Laplacians.
//!
//! Simplices are stored with their vertices in ascending id order, which fixes
//! the orientation. Boundary signs follow face parity: the face obtained by
//! dropping vertex `p` of a simplex gets sign `(-1)^p`.

mod delaunay;
mod io;
mod perturb;

pub use delaunay::{delaunay_complex, random_points, random_points_with, HoleDisk};
pub use io::ComplexFile;
pub use perturb::{measured_snr, perturb_incidence, PerturbedComplex, Snr};

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct SimplicialComplex {
    vertices: Vec<usize>,
    edges: Vec<[usize; 2]>,
    triangles: Vec<[usize; 3]>,
    positions: Option<Vec<[f64; 2]>>,
    vertex_index: HashMap<usize, usize>,
    edge_index: HashMap<[usize; 2], usize>,
}

impl PartialEq for SimplicialComplex {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices
            && self.edges == other.edges
            && self.triangles == other.triangles
            && self.positions == other.positions
    }
}

/// Build the closure of the given edges and triangles.
pub fn build_complex(edges: &[[usize; 2]], triangles: &[[usize; 3]]) -> Result<SimplicialComplex> {
    SimplicialComplex::new(&[], edges, triangles, None)
}

fn canonical<const N: usize>(s: [usize; N]) -> Result<[usize; N]> {
    let mut c = s;
    c.sort_unstable();
    if c.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DegenerateSimplex(s.to_vec()));
    }
    Ok(c)
}

fn insert_all<const N: usize>(
    input: &[[usize; N]],
    dups: &mut Vec<Vec<usize>>,
) -> Result<BTreeSet<[usize; N]>> {
    let mut set = BTreeSet::new();
    for &s in input {
        let c = canonical(s)?;
        if !set.insert(c) {
            dups.push(c.to_vec());
        }
    }
    Ok(set)
}

impl SimplicialComplex {
    /// General constructor. `positions`, when given, is aligned with
    /// `vertices`; vertices mentioned only by edges or triangles get no
    /// position, so positions require every vertex to be listed.
    pub fn new(
        vertices: &[usize],
        edges: &[[usize; 2]],
        triangles: &[[usize; 3]],
        positions: Option<&[[f64; 2]]>,
    ) -> Result<Self> {
        let mut dups = Vec::new();
        let mut vset = BTreeSet::new();
        for &v in vertices {
            if !vset.insert(v) {
                dups.push(vec![v]);
            }
        }
        let mut eset = insert_all(edges, &mut dups)?;
        let tset = insert_all(triangles, &mut dups)?;
        if !dups.is_empty() {
            return Err(Error::DuplicateSimplices(dups));
        }
        for t in &tset {
            eset.insert([t[0], t[1]]);
            eset.insert([t[0], t[2]]);
            eset.insert([t[1], t[2]]);
        }
        for e in &eset {
            vset.insert(e[0]);
            vset.insert(e[1]);
        }

        let positions = match positions {
            None => None,
            Some(p) => {
                if p.len() != vertices.len() || vset.len() != vertices.len() {
                    return Err(Error::Shape(format!(
                        "{} positions for {} listed and {} total vertices",
                        p.len(),
                        vertices.len(),
                        vset.len()
                    )));
                }
                let by_id: HashMap<usize, [f64; 2]> =
                    vertices.iter().copied().zip(p.iter().copied()).collect();
                Some(vset.iter().map(|v| by_id[v]).collect())
            }
        };

        let vertices: Vec<usize> = vset.into_iter().collect();
        let edges: Vec<[usize; 2]> = eset.into_iter().collect();
        let triangles: Vec<[usize; 3]> = tset.into_iter().collect();
        let vertex_index = vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let edge_index = edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        Ok(Self { vertices, edges, triangles, positions, vertex_index, edge_index })
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    /// Number of k-simplices (zero above level 2).
    pub fn count(&self, k: usize) -> usize {
        match k {
            0 => self.vertices.len(),
            1 => self.edges.len(),
            2 => self.triangles.len(),
            _ => 0,
        }
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.count(0) as i64 - self.count(1) as i64 + self.count(2) as i64
    }

    /// Row index of a vertex id.
    pub fn vertex_position(&self, v: usize) -> Option<usize> {
        self.vertex_index.get(&v).copied()
    }

    /// Column index of an edge given in either orientation.
    pub fn edge_position(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_index.get(&[a.min(b), a.max(b)]).copied()
    }

    /// Neighbouring vertex indices (not ids) of each vertex, ascending.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for e in &self.edges {
            let (a, b) = (self.vertex_index[&e[0]], self.vertex_index[&e[1]]);
            adj[a].push(b);
            adj[b].push(a);
        }
        for row in &mut adj {
            row.sort_unstable();
        }
        adj
    }

    /// Checks that every face of every stored simplex is stored.
    pub fn check_closure(&self) -> Result<()> {
        for t in &self.triangles {
            for e in [[t[0], t[1]], [t[0], t[2]], [t[1], t[2]]] {
                if !self.edge_index.contains_key(&e) {
                    return Err(Error::NotClosed(format!("triangle {t:?} lacks edge {e:?}")));
                }
            }
        }
        for e in &self.edges {
            for v in e {
                if !self.vertex_index.contains_key(v) {
                    return Err(Error::NotClosed(format!("edge {e:?} lacks vertex {v}")));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical simplex lists, used to tie checkpoints and
    /// caches to a complex.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.vertices {
            h.update((*v as u64).to_le_bytes());
        }
        h.update(b"|");
        for e in &self.edges {
            for v in e {
                h.update((*v as u64).to_le_bytes());
            }
        }
        h.update(b"|");
        for t in &self.triangles {
            for v in t {
                h.update((*v as u64).to_le_bytes());
            }
        }
        hex_digest(h.finalize().as_slice())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Signed integer boundary matrix, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncidenceMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<i8>,
}

impl IncidenceMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.entries[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize, v: i8) {
        self.entries[r * self.cols + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<i8> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Exact integer product `self * rhs`, row-major.
    pub fn compose(&self, rhs: &IncidenceMatrix) -> Result<Vec<i64>> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0i64; self.rows * rhs.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k) as i64;
                if a == 0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[i * rhs.cols + j] += a * rhs.get(k, j) as i64;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c) as f64)
    }
}

/// Boundary matrix `B_k` for `k` in {1, 2}.
pub fn boundary_matrix(complex: &SimplicialComplex, k: usize) -> Result<IncidenceMatrix> {
    match k {
        1 => {
            let mut b = IncidenceMatrix::zeros(complex.count(0), complex.count(1));
            for (j, e) in complex.edges.iter().enumerate() {
                b.set(complex.vertex_index[&e[0]], j, -1);
                b.set(complex.vertex_index[&e[1]], j, 1);
            }
            Ok(b)
        }
        2 => {
            let mut b = IncidenceMatrix::zeros(complex.count(1), complex.count(2));
            for (j, t) in complex.triangles.iter().enumerate() {
                b.set(complex.edge_index[&[t[1], t[2]]], j, 1);
                b.set(complex.edge_index[&[t[0], t[2]]], j, -1);
                b.set(complex.edge_index[&[t[0], t[1]]], j, 1);
            }
            Ok(b)
        }
        _ => Err(Error::UnsupportedLevel(k)),
    }
}

/// Real-valued boundary maps of a 2-complex. These may carry perturbations or
/// a global rescaling, so they are kept separate from the integer matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMaps {
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
}

impl BoundaryMaps {
    pub fn from_complex(complex: &SimplicialComplex) -> Self {
        let b1 = boundary_matrix(complex, 1).expect("level 1").to_dense();
        let b2 = boundary_matrix(complex, 2).expect("level 2").to_dense();
        Self { b1, b2 }
    }

    pub fn new(b1: DMatrix<f64>, b2: DMatrix<f64>) -> Result<Self> {
        if b1.ncols() != b2.nrows() {
            return Err(Error::Shape(format!(
                "B1 has {} columns but B2 has {} rows",
                b1.ncols(),
                b2.nrows()
            )));
        }
        Ok(Self { b1, b2 })
    }

    /// Number of k-simplices.
    pub fn size(&self, k: usize) -> usize {
        match k {
            0 => self.b1.nrows(),
            1 => self.b1.ncols(),
            2 => self.b2.ncols(),
            _ => 0,
        }
    }

    /// `B_k`, or `None` when it does not exist (k = 0 or k > 2).
    pub fn boundary(&self, k: usize) -> Option<&DMatrix<f64>> {
        match k {
            1 => Some(&self.b1),
            2 => Some(&self.b2),
            _ => None,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { b1: &self.b1 * c, b2: &self.b2 * c }
    }

    pub fn hodge(&self, k: usize) -> Result<HodgeOperators> {
        if k > 2 {
            return Err(Error::UnsupportedLevel(k));
        }
        let n = self.size(k);
        let down = self.boundary(k).map(|b| b.transpose() * b);
        let up = match self.boundary(k + 1) {
            Some(b) => b * b.transpose(),
            None => DMatrix::zeros(n, n),
        };
        Ok(HodgeOperators::from_parts(k, down, up))
    }
}

/// Lower, upper and full Hodge Laplacians at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct HodgeOperators {
    level: usize,
    down: Option<DMatrix<f64>>,
    up: DMatrix<f64>,
    full: DMatrix<f64>,
}

impl HodgeOperators {
    fn from_parts(level: usize, down: Option<DMatrix<f64>>, up: DMatrix<f64>) -> Self {
        let full = match &down {
            Some(d) => d + &up,
            None => up.clone(),
        };
        Self { level, down, up, full }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn size(&self) -> usize {
        self.up.nrows()
    }

    /// `B_k^T B_k`; absent at level 0.
    pub fn down(&self) -> Option<&DMatrix<f64>> {
        self.down.as_ref()
    }

    /// The lower Laplacian with the level-0 gap filled by the zero matrix.
    pub fn down_or_zero(&self) -> DMatrix<f64> {
        self.down.clone().unwrap_or_else(|| DMatrix::zeros(self.size(), self.size()))
    }

    pub fn up(&self) -> &DMatrix<f64> {
        &self.up
    }

    pub fn full(&self) -> &DMatrix<f64> {
        &self.full
    }
}

pub fn hodge_operators(complex: &SimplicialComplex, k: usize) -> Result<HodgeOperators> {
    BoundaryMaps::from_complex(complex).hodge(k)
}
