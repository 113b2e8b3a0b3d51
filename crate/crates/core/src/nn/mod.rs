//! Simplicial layers: the polynomial baseline, the exponential (continuous)
//! layer with learnable receptive fields, branch aggregation, and a batched
//! network with a hand-written backward pass.

pub(crate) mod blocks;
mod checkpoint;
mod network;
pub(crate) mod serde_mat;
mod train;

pub use checkpoint::Checkpoint;
pub use network::{
    AggregationKind, Architecture, CosimoBlock, ForwardCache, Layer, LevelLayer, Network, Signals,
};
pub use train::{
    candidate_scores, train, Dataset, Loss, Optimizer, Target, TrainConfig, TrainingTrace,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::complex::{BoundaryMaps, HodgeOperators, SimplicialComplex};
use crate::spectral::{exp_filter, LevelSpectra, TruncationPolicy};
use crate::{Error, Result};

/// Features on the k-simplices, one row per simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct Cochain {
    pub level: usize,
    pub values: DMatrix<f64>,
}

impl Cochain {
    pub fn new(level: usize, values: DMatrix<f64>) -> Self {
        Self { level, values }
    }

    pub fn zeros(level: usize, n: usize, f: usize) -> Self {
        Self { level, values: DMatrix::zeros(n, f) }
    }

    pub fn features(&self) -> usize {
        self.values.ncols()
    }
}

/// A level-k signal with the projections of its neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct CochainTriple {
    pub own: Cochain,
    /// `B_k^T X_{k-1}`.
    pub lower_proj: DMatrix<f64>,
    /// `B_{k+1} X_{k+1}`.
    pub upper_proj: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    LeakyRelu {
        slope: f64,
    },
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative at `x`; the kink takes the left slope.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    pub fn map(self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::Identity => m.clone(),
            _ => m.map(|x| self.apply(x)),
        }
    }
}

/// Mode counts per level for the lower and upper Laplacians; `None` keeps
/// every mode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub down: [Option<usize>; 3],
    pub up: [Option<usize>; 3],
    #[serde(default)]
    pub policy: TruncationPolicy,
}

/// Operators a model needs on a fixed complex: boundary maps, Laplacians and
/// (optionally) their cached spectra.
#[derive(Clone, Debug)]
pub struct ComplexContext {
    maps: BoundaryMaps,
    ops: Vec<HodgeOperators>,
    spectra: Vec<Option<LevelSpectra>>,
    truncation: Truncation,
}

impl ComplexContext {
    /// Dense operators only; enough for polynomial layers.
    pub fn dense(maps: BoundaryMaps) -> Result<Self> {
        let ops = (0..3).map(|k| maps.hodge(k)).collect::<Result<Vec<_>>>()?;
        Ok(Self { maps, ops, spectra: vec![None, None, None], truncation: Truncation::default() })
    }

    /// Dense operators plus spectra at every level.
    pub fn with_spectra(maps: BoundaryMaps, truncation: &Truncation) -> Result<Self> {
        Self::with_spectra_at(maps, truncation, &[0, 1, 2])
    }

    pub fn with_spectra_at(maps: BoundaryMaps, truncation: &Truncation, levels: &[usize]) -> Result<Self> {
        let mut ctx = Self::dense(maps)?;
        for &k in levels {
            if k > 2 {
                return Err(Error::UnsupportedLevel(k));
            }
            ctx.spectra[k] = Some(LevelSpectra::truncated(
                &ctx.ops[k],
                truncation.down[k],
                truncation.up[k],
                truncation.policy,
            )?);
        }
        ctx.truncation = truncation.clone();
        Ok(ctx)
    }

    pub fn from_complex(complex: &SimplicialComplex) -> Result<Self> {
        Self::with_spectra(BoundaryMaps::from_complex(complex), &Truncation::default())
    }

    pub fn maps(&self) -> &BoundaryMaps {
        &self.maps
    }

    pub fn ops(&self, k: usize) -> &HodgeOperators {
        &self.ops[k]
    }

    pub fn truncation(&self) -> &Truncation {
        &self.truncation
    }

    pub fn spectra(&self, k: usize) -> Result<&LevelSpectra> {
        self.spectra.get(k).and_then(|s| s.as_ref()).ok_or(Error::MissingSpectra(k))
    }

    pub fn size(&self, k: usize) -> usize {
        self.maps.size(k)
    }

    /// `B_k^T x` for a signal on level `k - 1`.
    pub(crate) fn lower(&self, k: usize, x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        self.maps.boundary(k).map(|b| b.tr_mul(x))
    }

    /// `B_{k+1} x` for a signal on level `k + 1`.
    pub(crate) fn upper(&self, k: usize, x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        self.maps.boundary(k + 1).map(|b| b * x)
    }
}

fn check_rows(what: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n {
        return Err(Error::Shape(format!("{what} has {} rows, expected {n}", m.nrows())));
    }
    Ok(())
}

/// Lower and upper projections of the neighbours of `x_k`. A missing
/// neighbour contributes zeros.
pub fn project(
    ctx: &ComplexContext,
    x_km1: Option<&Cochain>,
    x_k: &Cochain,
    x_kp1: Option<&Cochain>,
) -> Result<CochainTriple> {
    let k = x_k.level;
    if k > 2 {
        return Err(Error::UnsupportedLevel(k));
    }
    let (n, f) = (ctx.size(k), x_k.features());
    check_rows("x_k", &x_k.values, n)?;
    let lower_proj = match (x_km1, k) {
        (Some(x), 1..) => {
            check_rows("x_{k-1}", &x.values, ctx.size(k - 1))?;
            ctx.lower(k, &x.values).expect("boundary exists for k >= 1")
        }
        _ => DMatrix::zeros(n, f),
    };
    let upper_proj = match (x_kp1, k) {
        (Some(x), 0..=1) => {
            check_rows("x_{k+1}", &x.values, ctx.size(k + 1))?;
            ctx.upper(k, &x.values).expect("boundary exists for k <= 1")
        }
        _ => DMatrix::zeros(n, f),
    };
    for (what, m) in [("lower projection", &lower_proj), ("upper projection", &upper_proj)] {
        if m.ncols() != f {
            return Err(Error::Shape(format!("{what} has {} features, expected {f}", m.ncols())));
        }
    }
    Ok(CochainTriple { own: x_k.clone(), lower_proj, upper_proj })
}

/// Sum of `c_i M^i x` evaluated by repeated products.
fn poly_apply(m: &DMatrix<f64>, coeffs: &[f64], x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.len());
    let mut p = x.clone();
    for (i, &c) in coeffs.iter().enumerate() {
        if i > 0 {
            p = m * p;
        }
        out.axpy(c, &p, 1.0);
    }
    out
}

/// `(sum_i alpha_i L_d^i + sum_i beta_i L_u^i) x`.
pub fn simplicial_filter(x: &DVector<f64>, alphas: &[f64], betas: &[f64], ops: &HodgeOperators) -> Result<DVector<f64>> {
    if x.len() != ops.size() {
        return Err(Error::Shape(format!("signal of length {} on {} simplices", x.len(), ops.size())));
    }
    Ok(poly_apply(&ops.down_or_zero(), alphas, x) + poly_apply(ops.up(), betas, x))
}

fn randn_matrix<R: Rng + ?Sized>(r: usize, c: usize, std: f64, rng: &mut R) -> DMatrix<f64> {
    let d = Normal::new(0.0, std).expect("finite std");
    DMatrix::from_fn(r, c, |_, _| d.sample(rng))
}

/// Weights of one exponential branch. Receptive fields are stored as
/// `tau = ln t` so that `t` stays positive under unconstrained updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosimoParams {
    #[serde(with = "serde_mat")]
    pub theta_d: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub theta_u: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub psi_d: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub psi_u: DMatrix<f64>,
    pub tau_d: f64,
    pub tau_u: f64,
    pub activation: Activation,
}

impl CosimoParams {
    /// Normal weights with std `1/sqrt(f_in)` and `t_d = t_u = t0`.
    pub fn init<R: Rng + ?Sized>(f_in: usize, f_out: usize, t0: f64, activation: Activation, rng: &mut R) -> Self {
        let std = 1.0 / (f_in.max(1) as f64).sqrt();
        Self::normal(f_in, f_out, std, t0, activation, rng)
    }

    pub fn normal<R: Rng + ?Sized>(
        f_in: usize,
        f_out: usize,
        std: f64,
        t0: f64,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            theta_d: randn_matrix(f_in, f_out, std, rng),
            theta_u: randn_matrix(f_in, f_out, std, rng),
            psi_d: randn_matrix(f_in, f_out, std, rng),
            psi_u: randn_matrix(f_in, f_out, std, rng),
            tau_d: t0.ln(),
            tau_u: t0.ln(),
            activation,
        }
    }

    pub fn zeros(f_in: usize, f_out: usize, activation: Activation) -> Self {
        Self {
            theta_d: DMatrix::zeros(f_in, f_out),
            theta_u: DMatrix::zeros(f_in, f_out),
            psi_d: DMatrix::zeros(f_in, f_out),
            psi_u: DMatrix::zeros(f_in, f_out),
            tau_d: 0.0,
            tau_u: 0.0,
            activation,
        }
    }

    /// Sets the receptive fields directly; `t = 0` is allowed.
    pub fn with_times(mut self, t_d: f64, t_u: f64) -> Self {
        self.tau_d = t_d.ln();
        self.tau_u = t_u.ln();
        self
    }

    pub fn t_d(&self) -> f64 {
        self.tau_d.exp()
    }

    pub fn t_u(&self) -> f64 {
        self.tau_u.exp()
    }

    pub fn f_in(&self) -> usize {
        self.theta_d.nrows()
    }

    pub fn f_out(&self) -> usize {
        self.theta_d.ncols()
    }

    pub fn weights(&self) -> [&DMatrix<f64>; 4] {
        [&self.theta_d, &self.theta_u, &self.psi_d, &self.psi_u]
    }

    fn check(&self) -> Result<()> {
        let (fi, fo) = (self.f_in(), self.f_out());
        if self.weights().iter().any(|w| w.nrows() != fi || w.ncols() != fo) {
            return Err(Error::Shape("branch weights must share one shape".into()));
        }
        Ok(())
    }
}

/// Polynomial-filter layer weights; entry `i` multiplies the i-th power of
/// the corresponding Laplacian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteParams {
    #[serde(with = "serde_mat::vec")]
    pub theta_d: Vec<DMatrix<f64>>,
    #[serde(with = "serde_mat::vec")]
    pub psi_d: Vec<DMatrix<f64>>,
    #[serde(with = "serde_mat::vec")]
    pub psi_u: Vec<DMatrix<f64>>,
    #[serde(with = "serde_mat::vec")]
    pub theta_u: Vec<DMatrix<f64>>,
    pub activation: Activation,
}

impl DiscreteParams {
    pub fn zeros(order_d: usize, order_u: usize, f_in: usize, f_out: usize, activation: Activation) -> Self {
        let z = |t: usize| vec![DMatrix::zeros(f_in, f_out); t + 1];
        Self { theta_d: z(order_d), psi_d: z(order_d), psi_u: z(order_u), theta_u: z(order_u), activation }
    }

    pub fn order_d(&self) -> usize {
        self.theta_d.len().saturating_sub(1)
    }

    pub fn order_u(&self) -> usize {
        self.theta_u.len().saturating_sub(1)
    }

    pub fn f_in(&self) -> usize {
        self.theta_d.first().map_or(0, |w| w.nrows())
    }

    pub fn f_out(&self) -> usize {
        self.theta_d.first().map_or(0, |w| w.ncols())
    }

    pub fn weights(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.theta_d.iter().chain(&self.psi_d).chain(&self.psi_u).chain(&self.theta_u)
    }

    fn check(&self) -> Result<()> {
        if self.theta_d.is_empty() || self.theta_u.is_empty() {
            return Err(Error::Shape("polynomial orders need at least the zeroth term".into()));
        }
        if self.psi_d.len() != self.theta_d.len() || self.psi_u.len() != self.theta_u.len() {
            return Err(Error::Shape("coefficient lists disagree in length".into()));
        }
        let (fi, fo) = (self.f_in(), self.f_out());
        if self.weights().any(|w| w.nrows() != fi || w.ncols() != fo) {
            return Err(Error::Shape("coefficient matrices must share one shape".into()));
        }
        Ok(())
    }
}

/// `sum_i M^i x w_i`, evaluated with repeated products by `M`.
pub(crate) fn poly_filter(m: &DMatrix<f64>, x: &DMatrix<f64>, ws: &[DMatrix<f64>]) -> DMatrix<f64> {
    let fin = ws.first().map_or(0, |w| w.nrows());
    let fout = ws.first().map_or(0, |w| w.ncols());
    let mut out = DMatrix::zeros(x.nrows(), blocks::blocks(x, fin) * fout);
    let mut p = x.clone();
    for (i, w) in ws.iter().enumerate() {
        if i > 0 {
            p = m * p;
        }
        if w.iter().any(|&v| v != 0.0) {
            blocks::right_mul_acc(&mut out, &p, fin, w);
        }
    }
    out
}

/// Pre-activation of the polynomial layer on (possibly batched) signals.
pub(crate) fn discrete_preactivation(
    x_d: &DMatrix<f64>,
    x: &DMatrix<f64>,
    x_u: &DMatrix<f64>,
    p: &DiscreteParams,
    ops: &HodgeOperators,
) -> DMatrix<f64> {
    let ld = ops.down_or_zero();
    let lu = ops.up();
    poly_filter(&ld, x_d, &p.theta_d)
        + poly_filter(&ld, x, &p.psi_d)
        + poly_filter(lu, x, &p.psi_u)
        + poly_filter(lu, x_u, &p.theta_u)
}

fn check_triple(t: &CochainTriple, n: usize, f: usize) -> Result<()> {
    for (what, m) in [("own", &t.own.values), ("lower_proj", &t.lower_proj), ("upper_proj", &t.upper_proj)] {
        if m.nrows() != n || m.ncols() != f {
            return Err(Error::Shape(format!("{what} is {}x{}, expected {n}x{f}", m.nrows(), m.ncols())));
        }
    }
    Ok(())
}

/// Polynomial simplicial layer.
pub fn discrete_layer(triple: &CochainTriple, params: &DiscreteParams, ops: &HodgeOperators) -> Result<Cochain> {
    params.check()?;
    check_triple(triple, ops.size(), params.f_in())?;
    let z = discrete_preactivation(&triple.lower_proj, &triple.own.values, &triple.upper_proj, params, ops);
    Ok(Cochain::new(triple.own.level, params.activation.map(&z)))
}

/// Exponential simplicial layer, evaluated directly from the filter
/// definition. The batched network uses an equivalent spectral-domain path.
pub fn cosimo_layer(triple: &CochainTriple, params: &CosimoParams, spectra: Option<&LevelSpectra>) -> Result<Cochain> {
    let spectra = spectra.ok_or(Error::MissingSpectra(triple.own.level))?;
    params.check()?;
    check_triple(triple, spectra.size(), params.f_in())?;
    let (t_d, t_u) = (params.t_d(), params.t_u());
    let z = exp_filter(&spectra.down, t_d, &triple.lower_proj, &params.theta_d)?
        + exp_filter(&spectra.up, t_u, &triple.upper_proj, &params.theta_u)?
        + exp_filter(&spectra.down, t_d, &triple.own.values, &params.psi_d)?
        + exp_filter(&spectra.up, t_u, &triple.own.values, &params.psi_u)?;
    Ok(Cochain::new(triple.own.level, params.activation.map(&z)))
}

/// Learnable map from `M * F` concatenated branch features back to `F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpAggregator {
    #[serde(with = "serde_mat")]
    pub weight: DMatrix<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl MlpAggregator {
    pub fn init<R: Rng + ?Sized>(branches: usize, f: usize, activation: Activation, rng: &mut R) -> Self {
        let std = 1.0 / ((branches * f).max(1) as f64).sqrt();
        Self { weight: randn_matrix(branches * f, f, std, rng), bias: vec![0.0; f], activation }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Mlp(MlpAggregator),
}

/// Combines branch outputs that share one shape.
pub fn aggregate_branches(outputs: &[Cochain], mode: &Aggregation) -> Result<Cochain> {
    let first = outputs.first().ok_or_else(|| Error::Shape("no branches to aggregate".into()))?;
    let shape = first.values.shape();
    if outputs.iter().any(|o| o.values.shape() != shape || o.level != first.level) {
        return Err(Error::Shape("branch outputs differ in shape or level".into()));
    }
    let values = match mode {
        Aggregation::Sum => outputs.iter().skip(1).fold(first.values.clone(), |acc, o| acc + &o.values),
        Aggregation::Mlp(mlp) => {
            let cat = blocks::hcat(&outputs.iter().map(|o| &o.values).collect::<Vec<_>>());
            if mlp.weight.nrows() != cat.ncols() || mlp.bias.len() != mlp.weight.ncols() {
                return Err(Error::Shape(format!(
                    "aggregator expects {} inputs, got {}",
                    mlp.weight.nrows(),
                    cat.ncols()
                )));
            }
            let mut z = cat * &mlp.weight;
            for (j, b) in mlp.bias.iter().enumerate() {
                z.column_mut(j).add_scalar_mut(*b);
            }
            mlp.activation.map(&z)
        }
    };
    Ok(Cochain::new(first.level, values))
}

#[cfg(test)]
mod tests;
