//! Dirichlet energy, the over-smoothing and perturbation bounds, corollary
//! conditions, spectral-entropy truncation and an equivariance probe.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::complex::{BoundaryMaps, HodgeOperators, PerturbedComplex};
use crate::nn::{ComplexContext, Network, Signals, Truncation};
use crate::spectral::{cosimo_filter, eig_sym, spectral_norm, LevelSpectra};
use crate::{Error, Result};

/// Relative slack used when deciding whether a bound holds.
pub const BOUND_SLACK: f64 = 1e-9;

/// `sum_j x_j^T L_k x_j` over the columns of `x`, in incidence form
/// `|B_k x|^2 + |B_{k+1}^T x|^2`.
pub fn dirichlet_energy(x: &DMatrix<f64>, k: usize, maps: &BoundaryMaps) -> Result<f64> {
    if k > 2 {
        return Err(Error::UnsupportedLevel(k));
    }
    if x.nrows() != maps.size(k) {
        return Err(Error::Shape(format!("signal has {} rows, level {k} has {}", x.nrows(), maps.size(k))));
    }
    let down = maps.boundary(k).map_or(0.0, |b| (b * x).norm_squared());
    let up = maps.boundary(k + 1).map_or(0.0, |b| b.tr_mul(x).norm_squared());
    Ok(down + up)
}

/// `tr(X^T L_k X)` from the assembled Hodge Laplacian.
pub fn dirichlet_energy_quadratic(x: &DMatrix<f64>, ops: &HodgeOperators) -> Result<f64> {
    if x.nrows() != ops.size() {
        return Err(Error::Shape(format!("signal has {} rows, operator has {}", x.nrows(), ops.size())));
    }
    Ok(x.dot(&(ops.full() * x)))
}

/// Energies and Frobenius norms of one level along the depth of a network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub level: usize,
    /// `E(X_k^l)` for `l = 0..=L`.
    pub energies: Vec<f64>,
    /// `|X_k^l|_F` for `l = 0..=L`.
    pub norms: Vec<f64>,
}

impl EnergyTrace {
    pub fn from_states<'a>(
        level: usize,
        states: impl IntoIterator<Item = &'a DMatrix<f64>>,
        maps: &BoundaryMaps,
    ) -> Result<Self> {
        let mut t = Self { level, ..Self::default() };
        for x in states {
            t.energies.push(dirichlet_energy(x, level, maps)?);
            t.norms.push(x.norm());
        }
        Ok(t)
    }

    pub fn layers(&self) -> usize {
        self.energies.len().saturating_sub(1)
    }

    /// First layer `l >= 1` whose energy is below `threshold`.
    pub fn crossing(&self, threshold: f64) -> Option<usize> {
        (1..self.energies.len()).find(|&l| self.energies[l] < threshold)
    }
}

/// Constants entering a bound. Fields not used by a bound are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub s: Option<f64>,
    pub lambda_max: Option<f64>,
    pub phi: Option<f64>,
    pub features: Option<usize>,
    pub t_d: Option<f64>,
    pub t_u: Option<f64>,
    pub epsilon_k: Option<f64>,
    pub epsilon_kp1: Option<f64>,
    pub delta_d: Option<f64>,
    pub delta_u: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub satisfied: bool,
    pub constants: BoundConstants,
}

impl BoundReport {
    pub fn new(lhs: f64, rhs: f64, constants: BoundConstants) -> Self {
        let satisfied = lhs <= rhs + BOUND_SLACK * rhs.abs().max(1.0);
        Self { lhs, rhs, gap: rhs - lhs, satisfied, constants }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Spectral,
    Frobenius,
}

impl NormKind {
    pub fn of(self, m: &DMatrix<f64>) -> Result<f64> {
        match self {
            NormKind::Spectral => spectral_norm(m),
            NormKind::Frobenius => Ok(m.norm()),
        }
    }
}

/// `s = sqrt(max_i |W_i|)`.
pub fn weight_scale<'a>(weights: impl IntoIterator<Item = &'a DMatrix<f64>>, norm: NormKind) -> Result<f64> {
    let mut m: f64 = 0.0;
    for w in weights {
        m = m.max(norm.of(w)?);
    }
    Ok(m.sqrt())
}

/// Extreme eigenvalues of the lower and upper Laplacians at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralExtremes {
    pub max_down: [f64; 3],
    pub max_up: [f64; 3],
    /// Smallest nonzero eigenvalue, `None` for a zero operator.
    pub min_down: [Option<f64>; 3],
    pub min_up: [Option<f64>; 3],
    pub max_full: [f64; 3],
    pub min_full: [Option<f64>; 3],
}

impl SpectralExtremes {
    pub fn from_maps(maps: &BoundaryMaps) -> Result<Self> {
        let mut e = Self {
            max_down: [0.0; 3],
            max_up: [0.0; 3],
            min_down: [None; 3],
            min_up: [None; 3],
            max_full: [0.0; 3],
            min_full: [None; 3],
        };
        for k in 0..3 {
            let ops = maps.hodge(k)?;
            let d = eig_sym(&ops.down_or_zero())?;
            let u = eig_sym(ops.up())?;
            let f = eig_sym(ops.full())?;
            e.max_down[k] = d.lambda_max();
            e.min_down[k] = d.lambda_min_nonzero();
            e.max_up[k] = u.lambda_max();
            e.min_up[k] = u.lambda_min_nonzero();
            e.max_full[k] = f.lambda_max();
            e.min_full[k] = f.lambda_min_nonzero();
        }
        Ok(e)
    }

    /// Largest eigenvalue over all lower and upper Laplacians.
    pub fn lambda_tilde(&self) -> f64 {
        self.max_down.iter().chain(&self.max_up).copied().fold(0.0, f64::max)
    }

    /// `min_k { t_d lambda_min(L_{k,d}), t_u lambda_min(L_{k,u}) }` over
    /// nonzero spectra.
    pub fn phi(&self, t_d: f64, t_u: f64) -> Option<f64> {
        let d = self.min_down.iter().flatten().map(|l| t_d * l);
        let u = self.min_up.iter().flatten().map(|l| t_u * l);
        d.chain(u).reduce(f64::min)
    }
}

/// Inputs shared by the two over-smoothing bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OversmoothingConstants {
    pub s: f64,
    pub lambda_max: f64,
    pub features: usize,
    /// Only used by the continuous bound.
    pub phi: Option<f64>,
}

impl OversmoothingConstants {
    fn as_bound(&self) -> BoundConstants {
        BoundConstants {
            s: Some(self.s),
            lambda_max: Some(self.lambda_max),
            phi: self.phi,
            features: Some(self.features),
            ..BoundConstants::default()
        }
    }
}

struct Neighbourhood {
    e_k: f64,
    e_nb: f64,
    n_k: f64,
    n_nb: f64,
    lhs: f64,
}

/// Gathers layer-`l` energies and norms around level `k` and the level-`k`
/// energy at layer `l + 1`. Levels outside `0..=2` contribute zero.
fn neighbourhood(traces: &[Option<EnergyTrace>; 3], k: usize, l: usize) -> Result<Neighbourhood> {
    if k > 2 {
        return Err(Error::UnsupportedLevel(k));
    }
    let at = |j: usize, what: &str| -> Result<&EnergyTrace> {
        traces[j].as_ref().ok_or_else(|| Error::Undefined(format!("missing {what} trace at level {j}")))
    };
    let own = at(k, "own")?;
    if l + 1 >= own.energies.len() {
        return Err(Error::Shape(format!("trace has {} layers, need layer {}", own.layers(), l + 1)));
    }
    let mut e_nb = 0.0;
    let mut n_nb = 0.0;
    for j in [k.checked_sub(1), Some(k + 1).filter(|&j| j <= 2)].into_iter().flatten() {
        let t = at(j, "neighbour")?;
        let (e, n) = t
            .energies
            .get(l)
            .zip(t.norms.get(l))
            .ok_or_else(|| Error::Shape(format!("neighbour trace at level {j} is shorter than layer {l}")))?;
        e_nb += e;
        n_nb += n;
    }
    Ok(Neighbourhood { e_k: own.energies[l], e_nb, n_k: own.norms[l], n_nb, lhs: own.energies[l + 1] })
}

/// Bound on `E(X_k^{l+1})` for the polynomial layer with one lower and one
/// upper term.
pub fn oversmoothing_rhs_discrete(
    traces: &[Option<EnergyTrace>; 3],
    k: usize,
    l: usize,
    c: &OversmoothingConstants,
) -> Result<BoundReport> {
    let n = neighbourhood(traces, k, l)?;
    let (s, lam, f) = (c.s, c.lambda_max, c.features as f64);
    let rhs = s * lam.powi(2) * n.e_k + s * lam.powi(3) * n.e_nb + 2.0 * f * s * lam.powf(3.5) * n.n_k * n.n_nb;
    Ok(BoundReport::new(n.lhs, rhs, c.as_bound()))
}

/// Bound on `E(X_k^{l+1})` for the exponential layer.
pub fn oversmoothing_rhs_continuous(
    traces: &[Option<EnergyTrace>; 3],
    k: usize,
    l: usize,
    c: &OversmoothingConstants,
) -> Result<BoundReport> {
    let phi = c.phi.ok_or_else(|| Error::Undefined("phi needs a nonzero Laplacian eigenvalue".into()))?;
    let n = neighbourhood(traces, k, l)?;
    let (s, lam, f) = (c.s, c.lambda_max, c.features as f64);
    let (e1, e2) = ((-phi).exp(), (-2.0 * phi).exp());
    let rhs = s * (e2 + 1.0) * n.e_k
        + s * e2 * lam * n.e_nb
        + 2.0 * f * s * (e1 + e2) * lam.powf(1.5) * n.n_k * n.n_nb
        + 2.0 * f * s * e1 * lam * n.n_k * n.n_k;
    Ok(BoundReport::new(n.lhs, rhs, c.as_bound()))
}

/// Inputs to the corollary conditions and the receptive-field heuristic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryInputs {
    pub s: f64,
    pub lambda_max: f64,
    pub features: usize,
    pub phi: f64,
    /// Smallest nonzero and largest eigenvalue of `L_k`.
    pub lambda_min_k: Option<f64>,
    pub lambda_max_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    /// `s^{-1/3}`, `(2Fs)^{-1/3.5}`, `s^{-1/2}`.
    pub discrete_terms: [f64; 3],
    pub discrete: bool,
    /// The four right-hand sides compared against `ln s`.
    pub continuous_terms: [f64; 4],
    pub continuous: bool,
    /// `ln(s lambda_max) / (2 lambda_min(L_k)) + k_f(L_k)`; `None` when `L_k`
    /// has no nonzero eigenvalue.
    pub t_heuristic_max: Option<f64>,
}

pub fn corollary_conditions(c: &CorollaryInputs) -> CorollaryReport {
    let (s, lam, f, phi) = (c.s, c.lambda_max, c.features as f64, c.phi);
    let discrete_terms = [s.powf(-1.0 / 3.0), (2.0 * f * s).powf(-1.0 / 3.5), s.powf(-0.5)];
    let discrete = lam < discrete_terms.iter().copied().fold(f64::INFINITY, f64::min);
    let continuous_terms = [
        -(1.0 + (-2.0 * phi).exp()).ln(),
        2.0 * phi - lam.ln(),
        phi - (2.0 * f * (1.0 + (-phi).exp()) * lam.powf(1.5)).ln(),
        phi - (2.0 * f * lam).ln(),
    ];
    let continuous = s.ln() < continuous_terms.iter().copied().fold(f64::INFINITY, f64::min);
    let t_heuristic_max = c.lambda_min_k.map(|lmin| (s * lam).ln() / (2.0 * lmin) + c.lambda_max_k / lmin);
    CorollaryReport { discrete_terms, discrete, continuous_terms, continuous, t_heuristic_max }
}

/// Initial conditions of the coupled heat equations at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterInputs {
    pub x_d0: DVector<f64>,
    pub x_u0: DVector<f64>,
    pub x_k0: DVector<f64>,
}

impl FilterInputs {
    /// Projects neighbour signals through `maps`; missing neighbours are zero.
    pub fn from_signals(
        maps: &BoundaryMaps,
        k: usize,
        x_km1: Option<&DVector<f64>>,
        x_k: &DVector<f64>,
        x_kp1: Option<&DVector<f64>>,
    ) -> Result<Self> {
        if k > 2 {
            return Err(Error::UnsupportedLevel(k));
        }
        let n = maps.size(k);
        if x_k.len() != n {
            return Err(Error::Shape(format!("x_k has length {}, level {k} has {n}", x_k.len())));
        }
        let x_d0 = match (maps.boundary(k), x_km1) {
            (Some(b), Some(x)) if x.len() == b.nrows() => b.tr_mul(x),
            (Some(_), Some(_)) => return Err(Error::Shape("x_{k-1} does not match B_k".into())),
            _ => DVector::zeros(n),
        };
        let x_u0 = match (maps.boundary(k + 1), x_kp1) {
            (Some(b), Some(x)) if x.len() == b.ncols() => b * x,
            (Some(_), Some(_)) => return Err(Error::Shape("x_{k+1} does not match B_{k+1}".into())),
            _ => DVector::zeros(n),
        };
        Ok(Self { x_d0, x_u0, x_k0: x_k.clone() })
    }
}

/// Compares the closed-form filter on clean and perturbed operators at level
/// `k` (full spectra, same initial conditions) with the perturbation bound.
pub fn stability_bound(
    perturbed: &PerturbedComplex<'_>,
    k: usize,
    inputs: &FilterInputs,
    t_d: f64,
    t_u: f64,
) -> Result<BoundReport> {
    let clean = perturbed.clean.hodge(k)?;
    let noisy = perturbed.perturbed.hodge(k)?;
    if clean.size() != noisy.size() {
        return Err(Error::Shape("clean and perturbed operators differ in size".into()));
    }
    let x = cosimo_filter(&LevelSpectra::full(&clean)?, &inputs.x_d0, &inputs.x_u0, &inputs.x_k0, t_d, t_u)?;
    let xt = cosimo_filter(&LevelSpectra::full(&noisy)?, &inputs.x_d0, &inputs.x_u0, &inputs.x_k0, t_d, t_u)?;
    let lhs = (xt - x).norm();

    let (eps_k, eps_kp1) = (perturbed.epsilon(k), perturbed.epsilon(k + 1));
    let lam_d = eig_sym(&clean.down_or_zero())?.lambda_max();
    let lam_u = eig_sym(clean.up())?.lambda_max();
    let delta_d = 2.0 * lam_d.sqrt() * eps_k + eps_k * eps_k;
    let delta_u = 2.0 * lam_u.sqrt() * eps_kp1 + eps_kp1 * eps_kp1;
    let nk = inputs.x_k0.norm();
    let rhs = t_d * delta_d * (t_d * delta_d).exp() * (inputs.x_d0.norm() + nk)
        + t_u * delta_u * (t_u * delta_u).exp() * (inputs.x_u0.norm() + nk);
    let constants = BoundConstants {
        t_d: Some(t_d),
        t_u: Some(t_u),
        epsilon_k: Some(eps_k),
        epsilon_kp1: Some(eps_kp1),
        delta_d: Some(delta_d),
        delta_u: Some(delta_u),
        ..BoundConstants::default()
    };
    Ok(BoundReport::new(lhs, rhs, constants))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropySelection {
    pub k: usize,
    /// `-sum p_i ln p_i` in nats.
    pub entropy: f64,
    pub probabilities: Vec<f64>,
}

/// Smallest number of largest-mass modes whose mass reaches `1 - tau`, with
/// `p_i = lambda_i / sum_j lambda_j`.
pub fn spectral_entropy_select(eigenvalues: &[f64], tau: f64) -> Result<EntropySelection> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau must lie in (0, 1), got {tau}")));
    }
    if eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::Domain("eigenvalues must be finite".into()));
    }
    let lam: Vec<f64> = eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = lam.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Undefined("spectral entropy of an all-zero spectrum".into()));
    }
    let probabilities: Vec<f64> = lam.iter().map(|l| l / total).collect();
    let entropy = -probabilities.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
    let mut sorted = probabilities.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let goal = 1.0 - tau - 1e-12;
    let mut cum = 0.0;
    let mut k = sorted.len();
    for (i, p) in sorted.iter().enumerate() {
        cum += p;
        if cum >= goal {
            k = i + 1;
            break;
        }
    }
    Ok(EntropySelection { k, entropy, probabilities })
}

/// Random relabelling of the simplices at each level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relabelling {
    /// `(P x)[i] = x[perm[i]]`.
    pub perms: [Vec<usize>; 3],
}

impl Relabelling {
    pub fn identity(maps: &BoundaryMaps) -> Self {
        Self { perms: [0, 1, 2].map(|k| (0..maps.size(k)).collect()) }
    }

    pub fn random<R: rand::Rng + ?Sized>(maps: &BoundaryMaps, rng: &mut R) -> Self {
        let mut r = Self::identity(maps);
        for p in &mut r.perms {
            p.shuffle(rng);
        }
        r
    }

    pub fn signal(&self, k: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.select_rows(&self.perms[k])
    }

    /// `P_{k-1} B_k P_k^T` for both boundary maps.
    pub fn maps(&self, maps: &BoundaryMaps) -> Result<BoundaryMaps> {
        BoundaryMaps::new(
            maps.b1.select_rows(&self.perms[0]).select_columns(&self.perms[1]),
            maps.b2.select_rows(&self.perms[1]).select_columns(&self.perms[2]),
        )
    }
}

/// Largest entry of `P_o f(X) - f(P X)` over `trials` random relabellings,
/// where `o` is the model's output level. Full spectra are used on both
/// sides.
pub fn permutation_equivariance_check(
    model: &Network,
    maps: &BoundaryMaps,
    inputs: &Signals,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = crate::rng::from_seed(seed);
    let ctx = ComplexContext::with_spectra(maps.clone(), &Truncation::default())?;
    let reference = model.predict(&ctx, std::slice::from_ref(inputs))?.remove(0);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let r = Relabelling::random(maps, &mut rng);
        worst = worst.max(relabelled_deviation(model, &r, maps, inputs, &reference)?);
    }
    Ok(worst)
}

/// Deviation for one given relabelling.
pub fn relabelled_deviation(
    model: &Network,
    r: &Relabelling,
    maps: &BoundaryMaps,
    inputs: &Signals,
    reference: &DMatrix<f64>,
) -> Result<f64> {
    let ctx = ComplexContext::with_spectra(r.maps(maps)?, &Truncation::default())?;
    let mut permuted = inputs.clone();
    for (k, x) in permuted.levels.iter_mut().enumerate() {
        if let Some(m) = x {
            *m = r.signal(k, m);
        }
    }
    let out = model.predict(&ctx, &[permuted])?.remove(0);
    Ok((r.signal(model.output_level, reference) - out).amax())
}
