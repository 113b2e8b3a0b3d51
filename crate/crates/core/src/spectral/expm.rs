use nalgebra::DMatrix;

use crate::{Error, Result};

/// Norms beyond this would need more than ~30 squarings; refuse instead of
/// returning garbage.
const MAX_NORM: f64 = 1e8;

/// Dense `e^{-tL}` by scaling and squaring with a Taylor core.
///
/// The argument `A = -tL` is scaled by `2^-s` until its 1-norm is at most
/// 1/4, the series is summed until terms stop contributing at double
/// precision, and the result is squared `s` times.
pub fn matrix_exp_oracle(l: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if l.nrows() != l.ncols() {
        return Err(Error::Shape(format!("expected a square matrix, got {}x{}", l.nrows(), l.ncols())));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("diffusion time must be finite and nonnegative, got {t}")));
    }
    let n = l.nrows();
    let a = l * (-t);
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    if !norm1.is_finite() || norm1 > MAX_NORM {
        return Err(Error::NormOverflow(norm1));
    }
    let s = if norm1 > 0.25 { (norm1 / 0.25).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(s);

    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=40 {
        term = &term * &b / k as f64;
        sum += &term;
        if term.amax() <= 1e-18 * sum.amax() {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    Ok(sum)
}
