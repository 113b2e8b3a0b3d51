use nalgebra::{DMatrix, DVector};

use super::{eig_sym, truncate, OperatorKind, OperatorTag, TruncatedSpectrum, TruncationPolicy};
use crate::complex::HodgeOperators;
use crate::{Error, Result};

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("diffusion time must be finite and nonnegative, got {t}")))
    }
}

/// `V (e^{-t lambda} * (V^T X)) W` over the retained modes.
pub fn exp_filter(trunc: &TruncatedSpectrum, t: f64, x: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_time(t)?;
    if x.nrows() != trunc.n() || x.ncols() != w.nrows() {
        return Err(Error::Shape(format!(
            "filter on {} simplices got X {}x{} and W {}x{}",
            trunc.n(),
            x.nrows(),
            x.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let v = &trunc.eigenvectors;
    let mut coeff = v.transpose() * x;
    for (i, &lam) in trunc.eigenvalues.iter().enumerate() {
        coeff.row_mut(i).scale_mut((-t * lam).exp());
    }
    Ok(v * (coeff * w))
}

/// Spectra of the lower and upper Laplacians at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSpectra {
    pub level: usize,
    pub down: TruncatedSpectrum,
    pub up: TruncatedSpectrum,
}

impl LevelSpectra {
    /// Full spectra; the missing lower Laplacian at level 0 is the zero
    /// operator.
    pub fn full(ops: &HodgeOperators) -> Result<Self> {
        Self::truncated(ops, None, None, TruncationPolicy::LowFrequency)
    }

    /// `k_down`, `k_up` default to the full dimension when `None`.
    pub fn truncated(
        ops: &HodgeOperators,
        k_down: Option<usize>,
        k_up: Option<usize>,
        policy: TruncationPolicy,
    ) -> Result<Self> {
        let n = ops.size();
        let level = ops.level();
        let spec = |kind: OperatorKind, k: Option<usize>| -> Result<TruncatedSpectrum> {
            let s = eig_sym(&kind.pick(ops))?.with_source(OperatorTag { level, kind });
            truncate(&s, k.unwrap_or(n), policy)
        };
        Ok(Self { level, down: spec(OperatorKind::Down, k_down)?, up: spec(OperatorKind::Up, k_up)? })
    }

    pub fn size(&self) -> usize {
        self.up.n()
    }
}

/// Closed-form solution of the coupled lower/upper heat equations at one
/// level: `e^{-t_d L_d} x_d + e^{-t_u L_u} x_u + (e^{-t_d L_d} + e^{-t_u L_u}) x_k`.
pub fn cosimo_filter(
    spectra: &LevelSpectra,
    x_kd0: &DVector<f64>,
    x_ku0: &DVector<f64>,
    x_k00: &DVector<f64>,
    t_d: f64,
    t_u: f64,
) -> Result<DVector<f64>> {
    let n = spectra.size();
    for (name, x) in [("x_kd0", x_kd0), ("x_ku0", x_ku0), ("x_k00", x_k00)] {
        if x.len() != n {
            return Err(Error::Shape(format!("{name} has length {} but the level has {n} simplices", x.len())));
        }
    }
    let id = DMatrix::identity(1, 1);
    let as_mat = |x: &DVector<f64>| DMatrix::from_column_slice(n, 1, x.as_slice());
    let down = exp_filter(&spectra.down, t_d, &as_mat(&(x_kd0 + x_k00)), &id)?;
    let up = exp_filter(&spectra.up, t_u, &as_mat(&(x_ku0 + x_k00)), &id)?;
    Ok(DVector::from_column_slice((down + up).as_slice()))
}

/// Explicit Euler for `dx/dt = -L x` from `x0` up to `t_end`.
///
/// Uses `ceil(t_end / dt)` equal steps of size at most `dt`. Rejects `dt` at
/// or above the stability limit `2 / lambda_max`.
pub fn integrate_diffusion(l: &DMatrix<f64>, x0: &DVector<f64>, t_end: f64, dt: f64) -> Result<DVector<f64>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Domain(format!("step must be positive, got {dt}")));
    }
    check_time(t_end)?;
    if l.nrows() != x0.len() || l.ncols() != x0.len() {
        return Err(Error::Shape(format!("operator {}x{} and state {}", l.nrows(), l.ncols(), x0.len())));
    }
    let lmax = eig_sym(l)?.lambda_max();
    if lmax > 0.0 && dt >= 2.0 / lmax {
        return Err(Error::UnstableStep { dt, threshold: 2.0 / lmax });
    }
    let steps = (t_end / dt).ceil() as usize;
    let mut x = x0.clone();
    if steps == 0 {
        return Ok(x);
    }
    let h = t_end / steps as f64;
    for _ in 0..steps {
        x -= h * (l * &x);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::{build_complex, hodge_operators};
    use crate::spectral::matrix_exp_oracle;
    use crate::spectral::tests::random_psd;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::from_seed(seed);
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn full(l: &DMatrix<f64>) -> TruncatedSpectrum {
        TruncatedSpectrum::full(&eig_sym(l).unwrap())
    }

    #[test]
    fn zero_time_is_plain_product() {
        let l = random_psd(8, 1);
        let (x, w) = (randn(8, 3, 2), randn(3, 2, 3));
        let y = exp_filter(&full(&l), 0.0, &x, &w).unwrap();
        assert!((y - &x * &w).amax() < 1e-10);
    }

    #[test]
    fn matches_dense_oracle() {
        let l = random_psd(10, 4) / 4.0;
        let (x, w) = (randn(10, 3, 5), randn(3, 4, 6));
        let y = exp_filter(&full(&l), 0.7, &x, &w).unwrap();
        let want = matrix_exp_oracle(&l, 0.7).unwrap() * &x * &w;
        let rel = (&y - &want).amax() / want.amax();
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn truncation_error_shrinks_with_k() {
        let l = random_psd(12, 7) / 6.0;
        let s = eig_sym(&l).unwrap();
        let (x, w) = (randn(12, 2, 8), DMatrix::identity(2, 2));
        let want = matrix_exp_oracle(&l, 1.0).unwrap() * &x;
        let mut prev = f64::INFINITY;
        for k in 1..=12 {
            let tr = truncate(&s, k, TruncationPolicy::LowFrequency).unwrap();
            let err = (exp_filter(&tr, 1.0, &x, &w).unwrap() - &want).norm();
            assert!(err <= prev + 1e-12, "K = {k}");
            prev = err;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn linear_and_semigroup() {
        let l = random_psd(9, 9) / 3.0;
        let sp = full(&l);
        let (x1, x2, w) = (randn(9, 2, 10), randn(9, 2, 11), randn(2, 2, 12));
        let lhs = exp_filter(&sp, 0.4, &(&x1 * 2.0 - &x2), &w).unwrap();
        let rhs = exp_filter(&sp, 0.4, &x1, &w).unwrap() * 2.0 - exp_filter(&sp, 0.4, &x2, &w).unwrap();
        assert!((lhs - rhs).amax() < 1e-10);
        let id = DMatrix::identity(2, 2);
        let twice = exp_filter(&sp, 0.3, &exp_filter(&sp, 0.5, &x1, &id).unwrap(), &id).unwrap();
        let once = exp_filter(&sp, 0.8, &x1, &id).unwrap();
        assert!((twice - once).amax() < 1e-8);
    }

    #[test]
    fn filter_errors() {
        let sp = full(&random_psd(4, 1));
        let x = randn(4, 2, 1);
        assert!(matches!(exp_filter(&sp, -0.1, &x, &DMatrix::identity(2, 2)), Err(Error::Domain(_))));
        assert!(matches!(exp_filter(&sp, 0.1, &x, &DMatrix::identity(3, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn cosimo_filter_at_zero_time() {
        let c = build_complex(&[[2, 3]], &[[0, 1, 2]]).unwrap();
        let sp = LevelSpectra::full(&hodge_operators(&c, 1).unwrap()).unwrap();
        let n = sp.size();
        let mut rng = crate::rng::from_seed(3);
        let v: Vec<DVector<f64>> = (0..3).map(|_| DVector::from_fn(n, |_, _| rng.gen::<f64>())).collect();
        let y = cosimo_filter(&sp, &v[0], &v[1], &v[2], 0.0, 0.0).unwrap();
        let want = &v[0] + &v[1] + &v[2] * 2.0;
        assert!((y - want).amax() < 1e-12);
    }

    #[test]
    fn cosimo_filter_long_time_projects_onto_kernels() {
        let c = build_complex(&[[2, 3], [3, 4], [1, 4]], &[[0, 1, 2]]).unwrap();
        let ops = hodge_operators(&c, 1).unwrap();
        let sp = LevelSpectra::full(&ops).unwrap();
        let n = sp.size();
        let mut rng = crate::rng::from_seed(4);
        let v: Vec<DVector<f64>> = (0..3).map(|_| DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5)).collect();
        let y = cosimo_filter(&sp, &v[0], &v[1], &v[2], 1e3, 1e3).unwrap();
        let kd = eig_sym(&ops.down_or_zero()).unwrap().kernel_basis();
        let ku = eig_sym(ops.up()).unwrap().kernel_basis();
        let want = &kd * (kd.transpose() * (&v[0] + &v[2])) + &ku * (ku.transpose() * (&v[1] + &v[2]));
        assert!((y - want).amax() < 1e-10);
    }

    #[test]
    fn euler_converges_first_order() {
        let l = random_psd(6, 13) / 10.0;
        let x0 = DVector::from_column_slice(randn(6, 1, 14).as_slice());
        let exact = matrix_exp_oracle(&l, 1.0).unwrap() * &x0;
        let errs: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&dt| (integrate_diffusion(&l, &x0, 1.0, dt).unwrap() - &exact).norm())
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
        }
    }

    #[test]
    fn euler_edge_cases() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let x0 = DVector::from_vec(vec![0.3, -0.7]);
        assert_eq!(integrate_diffusion(&l, &x0, 0.0, 0.1).unwrap(), x0);
        let ker = DVector::from_vec(vec![1.0, 1.0]);
        assert!((integrate_diffusion(&l, &ker, 3.0, 0.1).unwrap() - &ker).amax() < 1e-15);
        match integrate_diffusion(&l, &x0, 1.0, 1.5) {
            Err(Error::UnstableStep { threshold, .. }) => assert!((threshold - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert!(integrate_diffusion(&l, &x0, 1.0, 0.0).is_err());
    }
}
