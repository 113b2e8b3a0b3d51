//! Planar Delaunay triangulation by x-sorted sweep insertion followed by
//! Lawson edge flips.
//!
//! Co-circular quadrilaterals are resolved toward the diagonal whose sorted
//! vertex pair is lexicographically smaller, which makes the output
//! independent of insertion order for such ties.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimplicialComplex;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleDisk {
    pub center: [f64; 2],
    pub radius: f64,
}

impl HoleDisk {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        (dx * dx + dy * dy).sqrt() < self.radius
    }
}

/// `n` i.i.d. uniform points in the unit square.
pub fn random_points(n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    random_points_with(n, &mut crate::rng::from_seed(seed))
}

pub fn random_points_with<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<[f64; 2]>> {
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    Ok((0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect())
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive when `d` lies inside the circumcircle of the counter-clockwise
/// triangle `abc`.
pub(crate) fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

struct Mesh<'a> {
    p: &'a [[f64; 2]],
    tris: Vec<[usize; 3]>,
    alive: Vec<bool>,
    // directed edge -> triangle holding it in counter-clockwise order
    half: HashMap<(usize, usize), usize>,
    orient_tol: f64,
    circle_tol: f64,
    flips: usize,
}

impl<'a> Mesh<'a> {
    fn add(&mut self, t: [usize; 3]) {
        debug_assert!(orient(self.p[t[0]], self.p[t[1]], self.p[t[2]]) > 0.0);
        let id = self.tris.len();
        self.tris.push(t);
        self.alive.push(true);
        for i in 0..3 {
            self.half.insert((t[i], t[(i + 1) % 3]), id);
        }
    }

    fn remove(&mut self, id: usize) {
        let t = self.tris[id];
        self.alive[id] = false;
        for i in 0..3 {
            self.half.remove(&(t[i], t[(i + 1) % 3]));
        }
    }

    fn apex(&self, id: usize, a: usize, b: usize) -> usize {
        self.tris[id].iter().copied().find(|&v| v != a && v != b).expect("triangle apex")
    }

    fn legalize(&mut self, mut stack: Vec<(usize, usize)>) -> Result<()> {
        let cap = 50 * self.p.len() * self.p.len() + 1000;
        while let Some((a, b)) = stack.pop() {
            let (Some(&t1), Some(&t2)) = (self.half.get(&(a, b)), self.half.get(&(b, a))) else {
                continue;
            };
            let c = self.apex(t1, a, b);
            let d = self.apex(t2, a, b);
            let (pa, pb, pc, pd) = (self.p[a], self.p[b], self.p[c], self.p[d]);
            let ic = incircle(pa, pb, pc, pd);
            let flip = if ic > self.circle_tol {
                true
            } else if ic.abs() <= self.circle_tol {
                key(c, d) < key(a, b)
                    && orient(pa, pd, pc) > self.orient_tol
                    && orient(pd, pb, pc) > self.orient_tol
            } else {
                false
            };
            if !flip {
                continue;
            }
            self.flips += 1;
            if self.flips > cap {
                return Err(Error::DegenerateTriangulation("edge flipping did not terminate".into()));
            }
            self.remove(t1);
            self.remove(t2);
            self.add([a, d, c]);
            self.add([d, b, c]);
            stack.extend([(a, d), (d, b), (b, c), (c, a)]);
        }
        Ok(())
    }
}

/// Delaunay triangulation of `points` with every triangle whose barycenter
/// falls inside a hole disk removed. Edges of removed triangles are kept.
/// Vertex ids are the indices into `points`.
pub fn delaunay_complex(points: &[[f64; 2]], holes: &[HoleDisk]) -> Result<SimplicialComplex> {
    let triangles = delaunay_triangles(points)?;
    let mut edges = Vec::with_capacity(triangles.len() * 3);
    for t in &triangles {
        edges.extend([[t[0], t[1]], [t[0], t[2]], [t[1], t[2]]]);
    }
    edges.sort_unstable();
    edges.dedup();
    let kept: Vec<[usize; 3]> = triangles
        .into_iter()
        .filter(|t| {
            let bary = [
                (points[t[0]][0] + points[t[1]][0] + points[t[2]][0]) / 3.0,
                (points[t[0]][1] + points[t[1]][1] + points[t[2]][1]) / 3.0,
            ];
            !holes.iter().any(|h| h.contains(bary))
        })
        .collect();
    let vertices: Vec<usize> = (0..points.len()).collect();
    SimplicialComplex::new(&vertices, &edges, &kept, Some(points))
}

/// Triangles of the Delaunay triangulation, each sorted ascending.
pub fn delaunay_triangles(p: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    let n = p.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    if p.iter().any(|q| !q[0].is_finite() || !q[1].is_finite()) {
        return Err(Error::DegenerateTriangulation("non-finite coordinate".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| p[i][0].total_cmp(&p[j][0]).then(p[i][1].total_cmp(&p[j][1])));
    if let Some(w) = order.windows(2).find(|w| p[w[0]] == p[w[1]]) {
        return Err(Error::DegenerateTriangulation(format!("points {} and {} coincide", w[0], w[1])));
    }

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for q in p {
        for d in 0..2 {
            lo[d] = lo[d].min(q[d]);
            hi[d] = hi[d].max(q[d]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let mut mesh = Mesh {
        p,
        tris: Vec::new(),
        alive: Vec::new(),
        half: HashMap::new(),
        orient_tol: 1e-13 * extent * extent,
        circle_tol: 1e-12 * extent.powi(4),
        flips: 0,
    };

    // Seed with the leading run of collinear points and the first point off
    // their line.
    let (p0, p1) = (p[order[0]], p[order[1]]);
    let m = (2..n)
        .find(|&i| orient(p0, p1, p[order[i]]).abs() > mesh.orient_tol)
        .ok_or_else(|| Error::DegenerateTriangulation("all points are collinear".into()))?;
    let q = order[m];
    let left = orient(p0, p1, p[q]) > 0.0;
    let mut stack = Vec::new();
    for w in order[..m].windows(2) {
        let t = if left { [w[0], w[1], q] } else { [w[1], w[0], q] };
        mesh.add(t);
        stack.push((w[0], w[1]));
    }
    let mut hull: Vec<usize> = if left { order[..m].to_vec() } else { order[..m].iter().rev().copied().collect() };
    hull.push(q);
    mesh.legalize(stack)?;

    for &v in &order[m + 1..] {
        let h = hull.len();
        let visible: Vec<bool> =
            (0..h).map(|i| orient(p[hull[i]], p[hull[(i + 1) % h]], p[v]) < -mesh.orient_tol).collect();
        let start = (0..h)
            .find(|&i| visible[i] && !visible[(i + h - 1) % h])
            .ok_or_else(|| Error::DegenerateTriangulation(format!("point {v} sees no hull edge")))?;
        hull.rotate_left(start);
        let count = (0..h).take_while(|&i| visible[(i + start) % h]).count();
        let mut stack = Vec::with_capacity(count);
        for i in 0..count {
            let (a, b) = (hull[i], hull[(i + 1) % h]);
            mesh.add([b, a, v]);
            stack.push((a, b));
        }
        hull.splice(1..count, [v]);
        mesh.legalize(stack)?;
    }

    let mut out: Vec<[usize; 3]> = mesh
        .tris
        .iter()
        .zip(&mesh.alive)
        .filter(|(_, &alive)| alive)
        .map(|(t, _)| {
            let mut s = *t;
            s.sort_unstable();
            s
        })
        .collect();
    out.sort_unstable();
    Ok(out)
}
