use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use super::{BoundaryMaps, SimplicialComplex};
use crate::spectral::spectral_norm;
use crate::Result;

/// Signal-to-noise ratio in dB. `f64::INFINITY` means no noise; it is written
/// as the string `"inf"` in JSON.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Snr(pub f64);

impl Snr {
    pub const CLEAN: Snr = Snr(f64::INFINITY);

    pub fn is_clean(self) -> bool {
        self.0 == f64::INFINITY
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_clean() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_clean() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) if x.is_finite() => Ok(Snr(x)),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "Infinity" | "infinity") => Ok(Snr::CLEAN),
            _ => Err(de::Error::custom("snr must be a finite number or \"inf\"")),
        }
    }
}

/// Boundary maps with additive Gaussian errors `E_1`, `E_2`.
#[derive(Clone, Debug)]
pub struct PerturbedComplex<'a> {
    pub base: &'a SimplicialComplex,
    pub clean: BoundaryMaps,
    pub e1: DMatrix<f64>,
    pub e2: DMatrix<f64>,
    /// Measured spectral norms of `e1`, `e2`.
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub snr1: Snr,
    pub snr2: Snr,
    pub perturbed: BoundaryMaps,
}

impl PerturbedComplex<'_> {
    /// Spectral norm of the error on `B_k` (zero outside 1..=2).
    pub fn epsilon(&self, k: usize) -> f64 {
        match k {
            1 => self.epsilon1,
            2 => self.epsilon2,
            _ => 0.0,
        }
    }
}

/// Gaussian matrix scaled so that `10 log10(|b|_F^2 / |e|_F^2) = snr`.
pub(crate) fn noise_like<R: Rng + ?Sized>(b: &DMatrix<f64>, snr: Snr, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(b.nrows(), b.ncols(), |_, _| rng.sample(StandardNormal));
    if snr.is_clean() || b.is_empty() {
        return DMatrix::zeros(b.nrows(), b.ncols());
    }
    let gn = g.norm();
    if gn == 0.0 {
        return DMatrix::zeros(b.nrows(), b.ncols());
    }
    g * (b.norm() / gn * 10f64.powf(-snr.0 / 20.0))
}

pub fn perturb_incidence(complex: &SimplicialComplex, snr1: Snr, snr2: Snr, seed: u64) -> Result<PerturbedComplex<'_>> {
    let clean = BoundaryMaps::from_complex(complex);
    let mut rng = crate::rng::from_seed(seed);
    let e1 = noise_like(&clean.b1, snr1, &mut rng);
    let e2 = noise_like(&clean.b2, snr2, &mut rng);
    let epsilon1 = spectral_norm(&e1)?;
    let epsilon2 = spectral_norm(&e2)?;
    let perturbed = BoundaryMaps::new(&clean.b1 + &e1, &clean.b2 + &e2)?;
    Ok(PerturbedComplex { base: complex, clean, e1, e2, epsilon1, epsilon2, snr1, snr2, perturbed })
}

/// Frobenius SNR in dB of `noise` relative to `signal`.
pub fn measured_snr(signal: &DMatrix<f64>, noise: &DMatrix<f64>) -> f64 {
    10.0 * (signal.norm_squared() / noise.norm_squared()).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::{delaunay_complex, random_points};

    #[test]
    fn clean_snr_gives_zero_error() {
        let c = delaunay_complex(&random_points(12, 1).unwrap(), &[]).unwrap();
        let p = perturb_incidence(&c, Snr::CLEAN, Snr::CLEAN, 5).unwrap();
        assert_eq!(p.epsilon1, 0.0);
        assert_eq!(p.epsilon2, 0.0);
        assert_eq!(p.perturbed, p.clean);
    }

    #[test]
    fn zero_db_matches_norms() {
        let c = delaunay_complex(&random_points(20, 2).unwrap(), &[]).unwrap();
        let p = perturb_incidence(&c, Snr(0.0), Snr(0.0), 9).unwrap();
        assert!((p.e1.norm() - p.clean.b1.norm()).abs() <= 1e-12 * p.clean.b1.norm());
        assert!((p.e2.norm() - p.clean.b2.norm()).abs() <= 1e-12 * p.clean.b2.norm());
        for snr in [-5.0, 10.0, 20.0] {
            let p = perturb_incidence(&c, Snr(snr), Snr(snr), 9).unwrap();
            assert!((measured_snr(&p.clean.b1, &p.e1) - snr).abs() < 1e-9);
            assert!(p.epsilon1 <= p.e1.norm() + 1e-12);
            assert!(p.epsilon1 > 0.0);
        }
    }

    #[test]
    fn snr_json() {
        let v: Vec<Snr> = serde_json::from_str(r#"[-5, 0.5, "inf"]"#).unwrap();
        assert_eq!(v, vec![Snr(-5.0), Snr(0.5), Snr::CLEAN]);
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"[-5.0,0.5,"inf"]"#);
        assert!(serde_json::from_str::<Snr>(r#""loud""#).is_err());
    }
}
