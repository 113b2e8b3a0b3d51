//! Symmetric eigendecomposition and heat-kernel filtering.

mod cache;
mod expm;
mod filter;

pub use cache::{laplacian_checksum, SpectrumCache};
pub use expm::matrix_exp_oracle;
pub use filter::{cosimo_filter, exp_filter, integrate_diffusion, LevelSpectra};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::complex::HodgeOperators;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Down,
    Up,
    Full,
}

impl OperatorKind {
    pub fn pick(self, ops: &HodgeOperators) -> DMatrix<f64> {
        match self {
            OperatorKind::Down => ops.down_or_zero(),
            OperatorKind::Up => ops.up().clone(),
            OperatorKind::Full => ops.full().clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorTag {
    pub level: usize,
    pub kind: OperatorKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HodgeSpectrum {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    pub source: Option<OperatorTag>,
}

impl HodgeSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn with_source(mut self, tag: OperatorTag) -> Self {
        self.source = Some(tag);
        self
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0).max(0.0)
    }

    /// Smallest eigenvalue above the numerical-zero threshold, if any.
    pub fn lambda_min_nonzero(&self) -> Option<f64> {
        let tol = nonzero_threshold(self.lambda_max());
        self.eigenvalues.iter().copied().find(|&l| l > tol)
    }

    /// Orthonormal basis of the numerical kernel.
    pub fn kernel_basis(&self) -> DMatrix<f64> {
        let tol = nonzero_threshold(self.lambda_max());
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.eigenvalues[i] <= tol).collect();
        self.eigenvectors.select_columns(&idx)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(l);
        }
        scaled * self.eigenvectors.transpose()
    }
}

/// Eigenvalues at or below this are treated as zero.
pub fn nonzero_threshold(lambda_max: f64) -> f64 {
    1e-9 * lambda_max.max(f64::MIN_POSITIVE)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps stop once the off-diagonal Frobenius norm drops below
/// `1e-12 * |L|_F`. Each eigenvector is signed so that its first entry of
/// magnitude above `1e-10` is positive.
pub fn eig_sym(l: &DMatrix<f64>) -> Result<HodgeSpectrum> {
    let n = l.nrows();
    if l.ncols() != n {
        return Err(Error::Shape(format!("eig_sym needs a square matrix, got {}x{}", n, l.ncols())));
    }
    let scale = l.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut asym = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            asym = asym.max((l[(i, j)] - l[(j, i)]).abs());
        }
    }
    if asym > 1e-12 * scale || l.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotSymmetric(asym));
    }

    // Column-major working copies.
    let mut a: Vec<f64> = (0..n * n).map(|idx| {
        let (i, j) = (idx % n, idx / n);
        0.5 * (l[(i, j)] + l[(j, i)])
    }).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let target = 1e-12 * l.norm();

    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    s += a[j * n + i] * a[j * n + i];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    loop {
        let off = off_norm(&a);
        if off <= target {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[q * n + p];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- A J (columns p, q)
                for k in 0..n {
                    let akp = a[p * n + k];
                    let akq = a[q * n + k];
                    a[p * n + k] = c * akp - s * akq;
                    a[q * n + k] = s * akp + c * akq;
                }
                // A <- J^T A (rows p, q)
                for k in 0..n {
                    let apk = a[k * n + p];
                    let aqk = a[k * n + q];
                    a[k * n + p] = c * apk - s * aqk;
                    a[k * n + q] = s * apk + c * aqk;
                }
                a[q * n + p] = 0.0;
                a[p * n + q] = 0.0;
                for k in 0..n {
                    let vkp = v[p * n + k];
                    let vkq = v[q * n + k];
                    v[p * n + k] = c * vkp - s * vkq;
                    v[q * n + k] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let vs = &v[src * n..(src + 1) * n];
        let flip = vs.iter().find(|x| x.abs() > 1e-10).is_some_and(|&x| x < 0.0);
        let sign = if flip { -1.0 } else { 1.0 };
        for r in 0..n {
            eigenvectors[(r, col)] = sign * vs[r];
        }
    }
    Ok(HodgeSpectrum { eigenvalues, eigenvectors, source: None })
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let gram = if m.nrows() <= m.ncols() { m * m.transpose() } else { m.transpose() * m };
    Ok(eig_sym(&gram)?.lambda_max().sqrt())
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(l: &DMatrix<f64>) -> Result<f64> {
    Ok(eig_sym(l)?.lambda_max())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationPolicy {
    /// Keep the `K` smallest eigenvalues, where `e^{-t lambda}` is largest.
    #[default]
    LowFrequency,
    /// Keep the `K` largest eigenvalues.
    HighFrequency,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedSpectrum {
    /// Indices into the full ascending spectrum, ascending.
    pub indices: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    /// N x K.
    pub eigenvectors: DMatrix<f64>,
    pub policy: TruncationPolicy,
    pub source: Option<OperatorTag>,
}

impl TruncatedSpectrum {
    pub fn full(s: &HodgeSpectrum) -> Self {
        truncate(s, s.len(), TruncationPolicy::LowFrequency).expect("K = N is always valid")
    }

    /// Retained mode count.
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// Ambient dimension.
    pub fn n(&self) -> usize {
        self.eigenvectors.nrows()
    }

    /// Spectrum of the zero operator on `n` simplices.
    pub fn zero(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            eigenvalues: vec![0.0; n],
            eigenvectors: DMatrix::identity(n, n),
            policy: TruncationPolicy::LowFrequency,
            source: None,
        }
    }
}

pub fn truncate(s: &HodgeSpectrum, k: usize, policy: TruncationPolicy) -> Result<TruncatedSpectrum> {
    let n = s.len();
    // An empty level has nothing to keep; K = 0 is the only sensible value.
    if k > n || (k == 0 && n > 0) {
        return Err(Error::Domain(format!("K = {k} outside 1..={n}")));
    }
    let indices: Vec<usize> = match policy {
        TruncationPolicy::LowFrequency => (0..k).collect(),
        TruncationPolicy::HighFrequency => (n - k..n).collect(),
    };
    Ok(TruncatedSpectrum {
        eigenvalues: indices.iter().map(|&i| s.eigenvalues[i]).collect(),
        eigenvectors: s.eigenvectors.select_columns(&indices),
        indices,
        policy,
        source: s.source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn random_psd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::from_seed(seed);
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        &a * a.transpose()
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    #[test]
    fn hollow_triangle_spectrum() {
        let l = DMatrix::from_row_slice(3, 3, &[2., -1., -1., -1., 2., -1., -1., -1., 2.]);
        // Characteristic polynomial det(lambda I - L) = lambda (lambda - 3)^2.
        let charpoly = |x: f64| x * (x - 3.0) * (x - 3.0);
        let s = eig_sym(&l).unwrap();
        for (&got, want) in s.eigenvalues.iter().zip([0.0, 3.0, 3.0]) {
            assert!((got - want).abs() < 1e-9);
            assert!(charpoly(got).abs() < 1e-9);
        }
        // Kernel vector is the normalized constant with positive sign.
        let k0 = s.eigenvectors.column(0);
        assert!(k0.iter().all(|&x| (x - 1.0 / 3f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn diagonal_input() {
        let l = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, -1.0, 2.0]));
        let s = eig_sym(&l).unwrap();
        assert_eq!(s.eigenvalues, vec![-1.0, 2.0, 5.0]);
        let expected = DMatrix::from_row_slice(3, 3, &[0., 0., 1., 1., 0., 0., 0., 1., 0.]);
        assert_eq!(s.eigenvectors, expected);
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        for seed in 0..5 {
            let l = random_psd(20, seed);
            let s = eig_sym(&l).unwrap();
            let recon = max_abs(&(s.reconstruct() - &l));
            assert!(recon <= 1e-8 * max_abs(&l), "seed {seed}: {recon}");
            let orth = &s.eigenvectors.transpose() * &s.eigenvectors - DMatrix::identity(20, 20);
            assert!(max_abs(&orth) <= 1e-10);
            assert!(s.eigenvalues[0] >= -1e-10);
            assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn agrees_with_nalgebra() {
        let l = random_psd(12, 42);
        let mut ours = eig_sym(&l).unwrap().eigenvalues;
        let mut theirs: Vec<f64> = l.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        theirs.sort_by(f64::total_cmp);
        ours.sort_by(f64::total_cmp);
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(eig_sym(&l), Err(Error::NotSymmetric(_))));
        assert!(eig_sym(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn degenerate_sizes() {
        let s = eig_sym(&DMatrix::zeros(0, 0)).unwrap();
        assert!(s.is_empty());
        let s = eig_sym(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(s.eigenvalues, vec![0.0; 4]);
        assert_eq!(s.lambda_min_nonzero(), None);
    }

    #[test]
    fn truncation_policies() {
        let l = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 0.0, 1.0]));
        let s = eig_sym(&l).unwrap();
        let lo = truncate(&s, 2, TruncationPolicy::LowFrequency).unwrap();
        assert_eq!(lo.eigenvalues, vec![0.0, 1.0]);
        let hi = truncate(&s, 2, TruncationPolicy::HighFrequency).unwrap();
        assert_eq!(hi.eigenvalues, vec![1.0, 5.0]);
        let full_a = truncate(&s, 3, TruncationPolicy::LowFrequency).unwrap();
        let full_b = truncate(&s, 3, TruncationPolicy::HighFrequency).unwrap();
        assert_eq!(full_a.eigenvalues, full_b.eigenvalues);
        assert_eq!(full_a.eigenvectors, full_b.eigenvectors);
        assert!(truncate(&s, 0, TruncationPolicy::LowFrequency).is_err());
        assert!(truncate(&s, 4, TruncationPolicy::LowFrequency).is_err());
    }

    #[test]
    fn spectral_norm_of_known_matrix() {
        // Singular values of [[3, 0], [4, 5]] are sqrt(45) and sqrt(5).
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 4.0, 5.0]);
        assert!((spectral_norm(&m).unwrap() - 45f64.sqrt()).abs() < 1e-12);
        let wide = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 2.0]);
        assert!((spectral_norm(&wide).unwrap() - 3.0).abs() < 1e-12);
    }
}
