use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_nonzero, check_positive, csv_text, fmt_f, fmt_opt, par_map, purpose, ComplexSpec, Validate};
use crate::analysis::{
    oversmoothing_rhs_continuous, oversmoothing_rhs_discrete, weight_scale, EnergyTrace, NormKind,
    OversmoothingConstants, SpectralExtremes,
};
use crate::complex::BoundaryMaps;
use crate::nn::{
    Activation, Aggregation, ComplexContext, CosimoBlock, CosimoParams, DiscreteParams, Layer, LevelLayer, Network,
    Signals, Truncation,
};
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OversmoothConfig {
    pub seed: u64,
    pub realizations: usize,
    pub complex: ComplexSpec,
    pub features: usize,
    pub layers: usize,
    /// Receptive fields of the exponential models (`t_d = t_u = t`).
    pub t_grid: Vec<f64>,
    pub weight_std: f64,
    /// Boundary maps are rescaled so that the largest lower/upper Laplacian
    /// eigenvalue equals this value; `None` keeps the raw maps.
    pub lambda_target: Option<f64>,
    /// Level whose energy is bounded.
    pub level: usize,
    pub activation: Activation,
    pub norm: NormKind,
    /// Energy level that counts as over-smoothed.
    pub threshold: f64,
}

impl Default for OversmoothConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            realizations: 50,
            complex: ComplexSpec::default(),
            features: 4,
            layers: 100,
            t_grid: vec![1e-2, 1e-1, 0.2, 0.5],
            weight_std: 0.3,
            lambda_target: Some(1.3),
            level: 1,
            activation: Activation::Relu,
            norm: NormKind::Spectral,
            threshold: 1e-10,
        }
    }
}

impl Validate for OversmoothConfig {
    fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        check_nonzero(&mut out, "realizations", self.realizations);
        check_nonzero(&mut out, "features", self.features);
        check_nonzero(&mut out, "layers", self.layers);
        self.complex.issues("complex", &mut out);
        if self.t_grid.is_empty() {
            out.push("t_grid: must not be empty".into());
        }
        for (i, &t) in self.t_grid.iter().enumerate() {
            check_positive(&mut out, &format!("t_grid[{i}]"), t);
        }
        check_positive(&mut out, "weight_std", self.weight_std);
        if let Some(l) = self.lambda_target {
            check_positive(&mut out, "lambda_target", l);
        }
        if self.level > 2 {
            out.push(format!("level: must be 0, 1 or 2, got {}", self.level));
        }
        check_positive(&mut out, "threshold", self.threshold);
        out
    }
}

/// Layerwise bound check for one model family, averaged over realizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyCurve {
    /// `None` for the polynomial baseline.
    pub t: Option<f64>,
    /// Mean `E(X_k^l)` for `l = 1..=L`.
    pub mean_lhs: Vec<f64>,
    /// Mean bound on `E(X_k^l)` for `l = 1..=L`.
    pub mean_rhs: Vec<f64>,
    /// Violating realizations per layer.
    pub violations: Vec<usize>,
    /// Median over realizations of the first layer whose energy falls below
    /// the threshold; realizations that never cross count as infinite.
    pub crossing: Option<usize>,
    /// First layer where the realization-averaged energy falls below the
    /// threshold. Dominated by the slowest realizations.
    pub mean_curve_crossing: Option<usize>,
    /// The same, per realization.
    pub realization_crossings: Vec<Option<usize>>,
}

impl FamilyCurve {
    pub fn label(&self) -> &'static str {
        if self.t.is_some() {
            "continuous"
        } else {
            "discrete"
        }
    }

    pub fn total_violations(&self) -> usize {
        self.violations.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OversmoothResult {
    pub realizations: usize,
    pub layers: usize,
    /// Discrete baseline first, then the t grid in order.
    pub families: Vec<FamilyCurve>,
    /// Bounds evaluated across all families, layers and realizations.
    pub checked: usize,
}

impl OversmoothResult {
    pub fn total_violations(&self) -> usize {
        self.families.iter().map(|f| f.total_violations()).sum()
    }

    pub fn discrete(&self) -> &FamilyCurve {
        &self.families[0]
    }

    pub fn continuous(&self) -> &[FamilyCurve] {
        &self.families[1..]
    }

    /// Columns `family,t,layer,mean_lhs,mean_rhs,violations`.
    pub fn to_csv(&self) -> Result<String> {
        let mut rows = Vec::new();
        for f in &self.families {
            for l in 0..self.layers {
                rows.push(vec![
                    f.label().to_string(),
                    fmt_opt(f.t),
                    (l + 1).to_string(),
                    fmt_f(f.mean_lhs[l]),
                    fmt_f(f.mean_rhs[l]),
                    f.violations[l].to_string(),
                ]);
            }
        }
        csv_text(&["family", "t", "layer", "mean_lhs", "mean_rhs", "violations"], rows)
    }
}

struct Run {
    lhs: Vec<f64>,
    rhs: Vec<f64>,
    violated: Vec<bool>,
}

fn randn<R: Rng + ?Sized>(r: usize, c: usize, std: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Weights `[theta_d, psi_d, psi_u, theta_u]` per layer and level, shared by
/// every model family of a realization.
type Weights = Vec<[[DMatrix<f64>; 4]; 3]>;

fn discrete_model(w: &Weights, level: usize, act: Activation) -> Result<Network> {
    let layers = w
        .iter()
        .map(|lw| {
            let mut layer = Layer::new();
            for (k, [td, pd, pu, tu]) in lw.iter().enumerate() {
                let f = td.nrows();
                let z = DMatrix::zeros(f, f);
                layer.insert(
                    k,
                    LevelLayer::Discrete(DiscreteParams {
                        theta_d: vec![z.clone(), td.clone()],
                        psi_d: vec![z.clone(), pd.clone()],
                        psi_u: vec![z.clone(), pu.clone()],
                        theta_u: vec![z, tu.clone()],
                        activation: act,
                    }),
                );
            }
            layer
        })
        .collect();
    Network::new(vec![0, 1, 2], level, layers, None, true)
}

fn continuous_model(w: &Weights, level: usize, act: Activation, t: f64) -> Result<Network> {
    let layers = w
        .iter()
        .map(|lw| {
            let mut layer = Layer::new();
            for (k, [td, pd, pu, tu]) in lw.iter().enumerate() {
                let p = CosimoParams {
                    theta_d: td.clone(),
                    theta_u: tu.clone(),
                    psi_d: pd.clone(),
                    psi_u: pu.clone(),
                    tau_d: t.ln(),
                    tau_u: t.ln(),
                    activation: act,
                };
                layer.insert(k, LevelLayer::Cosimo(CosimoBlock { branches: vec![p], aggregation: Aggregation::Sum }));
            }
            layer
        })
        .collect();
    Network::new(vec![0, 1, 2], level, layers, None, true)
}

fn realization(cfg: &OversmoothConfig, r: usize) -> Result<Vec<Run>> {
    let r64 = r as u64;
    let complex = cfg.complex.sample(&mut stream(cfg.seed, r64, purpose::COMPLEX))?;
    let mut maps = BoundaryMaps::from_complex(&complex);
    if let Some(target) = cfg.lambda_target {
        let raw = SpectralExtremes::from_maps(&maps)?.lambda_tilde();
        if raw > 0.0 {
            maps = maps.scaled((target / raw).sqrt());
        }
    }
    let ext = SpectralExtremes::from_maps(&maps)?;
    let ctx = ComplexContext::with_spectra(maps.clone(), &Truncation::default())?;
    let f = cfg.features;

    let mut rng = stream(cfg.seed, r64, purpose::SIGNALS);
    let [x0, x1, x2] = [0, 1, 2].map(|k| randn(maps.size(k), f, 1.0, &mut rng));
    let inputs = Signals::new(Some(x0), Some(x1), Some(x2));

    let mut rng = stream(cfg.seed, r64, purpose::WEIGHTS);
    let weights: Weights = (0..cfg.layers)
        .map(|_| [(); 3].map(|_| [(); 4].map(|_| randn(f, f, cfg.weight_std, &mut rng))))
        .collect();
    let s = weight_scale(weights.iter().flatten().flatten(), cfg.norm)?;

    let mut runs = Vec::with_capacity(cfg.t_grid.len() + 1);
    for t in std::iter::once(None).chain(cfg.t_grid.iter().copied().map(Some)) {
        let net = match t {
            None => discrete_model(&weights, cfg.level, cfg.activation)?,
            Some(t) => continuous_model(&weights, cfg.level, cfg.activation, t)?,
        };
        let cache = net.forward(&ctx, std::slice::from_ref(&inputs))?;
        let traces = [0, 1, 2].map(|k| {
            let states = (0..=cfg.layers).map(|l| cache.state(l, k).expect("all levels active"));
            EnergyTrace::from_states(k, states, &maps).map(Some)
        });
        let [a, b, c] = traces;
        let traces = [a?, b?, c?];
        let constants =
            OversmoothingConstants { s, lambda_max: ext.lambda_tilde(), features: f, phi: t.and_then(|t| ext.phi(t, t)) };
        let mut run = Run { lhs: Vec::new(), rhs: Vec::new(), violated: Vec::new() };
        for l in 0..cfg.layers {
            let rep = match t {
                None => oversmoothing_rhs_discrete(&traces, cfg.level, l, &constants)?,
                Some(_) => oversmoothing_rhs_continuous(&traces, cfg.level, l, &constants)?,
            };
            run.lhs.push(rep.lhs);
            run.rhs.push(rep.rhs);
            run.violated.push(!rep.satisfied);
        }
        runs.push(run);
    }
    Ok(runs)
}

/// Lower median, with `None` ordered after every layer.
fn median_crossing(c: &[Option<usize>]) -> Option<usize> {
    let mut v: Vec<usize> = c.iter().map(|x| x.unwrap_or(usize::MAX)).collect();
    v.sort_unstable();
    v.get(v.len().saturating_sub(1) / 2).copied().filter(|&x| x != usize::MAX)
}

/// Layerwise Dirichlet energy of deep random networks against the
/// over-smoothing bounds, for the polynomial baseline and each `t`.
pub fn run_oversmoothing(cfg: &OversmoothConfig, jobs: usize) -> Result<OversmoothResult> {
    cfg.validate()?;
    let per = par_map(cfg.realizations, jobs, |r| realization(cfg, r))?;
    let n = cfg.realizations as f64;
    let mut families = Vec::new();
    for (i, t) in std::iter::once(None).chain(cfg.t_grid.iter().copied().map(Some)).enumerate() {
        let mut mean_lhs = vec![0.0; cfg.layers];
        let mut mean_rhs = vec![0.0; cfg.layers];
        let mut violations = vec![0; cfg.layers];
        let mut realization_crossings = Vec::new();
        for runs in &per {
            let run = &runs[i];
            for l in 0..cfg.layers {
                mean_lhs[l] += run.lhs[l] / n;
                mean_rhs[l] += run.rhs[l] / n;
                violations[l] += run.violated[l] as usize;
            }
            realization_crossings.push(run.lhs.iter().position(|&e| e < cfg.threshold).map(|l| l + 1));
        }
        let mean_curve_crossing = mean_lhs.iter().position(|&e| e < cfg.threshold).map(|l| l + 1);
        let crossing = median_crossing(&realization_crossings);
        families.push(FamilyCurve { t, mean_lhs, mean_rhs, violations, crossing, mean_curve_crossing, realization_crossings });
    }
    if families.iter().any(|f| f.mean_rhs.iter().any(|x| !x.is_finite())) {
        return Err(Error::Domain("over-smoothing bound overflowed; lower weight_std or lambda_target".into()));
    }
    Ok(OversmoothResult {
        realizations: cfg.realizations,
        layers: cfg.layers,
        checked: families.len() * cfg.layers * cfg.realizations,
        families,
    })
}
