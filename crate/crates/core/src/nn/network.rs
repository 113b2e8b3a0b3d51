use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{self, right_mul, right_mul_acc, right_mul_t_acc, scale_rows, weight_grad};
use super::{
    discrete_preactivation, serde_mat, Activation, Aggregation, ComplexContext, CosimoParams, DiscreteParams,
    MlpAggregator,
};
use crate::spectral::TruncatedSpectrum;
use crate::{Error, Result};

/// Exponential branches at one level of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosimoBlock {
    pub branches: Vec<CosimoParams>,
    #[serde(default)]
    pub aggregation: Aggregation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LevelLayer {
    Cosimo(CosimoBlock),
    Discrete(DiscreteParams),
}

impl LevelLayer {
    fn f_in(&self) -> usize {
        match self {
            LevelLayer::Cosimo(b) => b.branches.first().map_or(0, |p| p.f_in()),
            LevelLayer::Discrete(p) => p.f_in(),
        }
    }

    fn f_out(&self) -> usize {
        match self {
            LevelLayer::Cosimo(b) => b.branches.first().map_or(0, |p| p.f_out()),
            LevelLayer::Discrete(p) => p.f_out(),
        }
    }

    /// Every weight matrix, for norm bookkeeping.
    pub fn weight_matrices(&self) -> Vec<&DMatrix<f64>> {
        match self {
            LevelLayer::Cosimo(b) => b.branches.iter().flat_map(|p| p.weights()).collect(),
            LevelLayer::Discrete(p) => p.weights().collect(),
        }
    }
}

/// One depth step: a layer per active level.
pub type Layer = BTreeMap<usize, LevelLayer>;

/// Per-sample input signals, indexed by level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Signals {
    pub levels: [Option<DMatrix<f64>>; 3],
}

impl Signals {
    pub fn new(x0: Option<DMatrix<f64>>, x1: Option<DMatrix<f64>>, x2: Option<DMatrix<f64>>) -> Self {
        Self { levels: [x0, x1, x2] }
    }

    pub fn at(k: usize, x: DMatrix<f64>) -> Self {
        let mut s = Self::default();
        s.levels[k] = Some(x);
        s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    #[default]
    Sum,
    Mlp,
}

/// Shape of an exponential network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub active_levels: Vec<usize>,
    pub output_level: usize,
    /// Feature widths `F_0, ..., F_L`; the depth is `widths.len() - 1`.
    pub widths: Vec<usize>,
    #[serde(default = "one")]
    pub branches: usize,
    #[serde(default)]
    pub aggregation: AggregationKind,
    #[serde(default)]
    pub activation: Activation,
    /// Width of an optional linear readout on the output level.
    #[serde(default)]
    pub head: Option<usize>,
    #[serde(default = "one_f")]
    pub init_time: f64,
    #[serde(default = "yes")]
    pub shared_times: bool,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

/// A stack of simplicial layers over a fixed set of active levels, with an
/// optional linear head on one output level.
///
/// Neighbour levels that are not active feed the first layer only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub active: Vec<usize>,
    pub output_level: usize,
    pub layers: Vec<Layer>,
    #[serde(with = "serde_mat::opt", default)]
    pub head: Option<DMatrix<f64>>,
    /// Tie `t_d`, `t_u` of branch `m` across levels within a layer.
    pub shared_times: bool,
}

impl Network {
    pub fn new(
        active: Vec<usize>,
        output_level: usize,
        layers: Vec<Layer>,
        head: Option<DMatrix<f64>>,
        shared_times: bool,
    ) -> Result<Self> {
        let mut active = active;
        active.sort_unstable();
        active.dedup();
        let net = Self { active, output_level, layers, head, shared_times };
        net.validate()?;
        if net.shared_times {
            let mut net = net;
            net.sync_times();
            return Ok(net);
        }
        Ok(net)
    }

    /// Exponential network with normal initialisation.
    pub fn cosimo<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        if arch.widths.len() < 2 {
            return Err(Error::Shape("need at least one layer".into()));
        }
        if arch.branches == 0 {
            return Err(Error::Shape("need at least one branch".into()));
        }
        if !(arch.init_time > 0.0) {
            return Err(Error::Domain(format!("initial receptive field must be positive, got {}", arch.init_time)));
        }
        let mut active = arch.active_levels.clone();
        active.sort_unstable();
        active.dedup();
        let mut layers = Vec::new();
        for w in arch.widths.windows(2) {
            let mut layer = Layer::new();
            for &k in &active {
                let branches = (0..arch.branches)
                    .map(|_| CosimoParams::init(w[0], w[1], arch.init_time, arch.activation, rng))
                    .collect();
                let aggregation = match arch.aggregation {
                    AggregationKind::Sum => Aggregation::Sum,
                    AggregationKind::Mlp => {
                        Aggregation::Mlp(MlpAggregator::init(arch.branches, w[1], arch.activation, rng))
                    }
                };
                layer.insert(k, LevelLayer::Cosimo(CosimoBlock { branches, aggregation }));
            }
            layers.push(layer);
        }
        let head = arch.head.map(|f| {
            let fl = *arch.widths.last().expect("nonempty");
            let std = 1.0 / (fl as f64).sqrt();
            super::randn_matrix(fl, f, std, rng)
        });
        Self::new(active, arch.output_level, layers, head, arch.shared_times)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().and_then(|l| l.values().next()).map_or(0, |l| l.f_in())
    }

    pub fn output_width(&self) -> usize {
        match &self.head {
            Some(h) => h.ncols(),
            None => self.layers.last().and_then(|l| l.values().next()).map_or(0, |l| l.f_out()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.active.is_empty() || self.active.iter().any(|&k| k > 2) {
            return Err(Error::Shape(format!("active levels {:?} must be a nonempty subset of 0..=2", self.active)));
        }
        if !self.active.contains(&self.output_level) {
            return Err(Error::Shape(format!("output level {} is not active", self.output_level)));
        }
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        let mut width = self.input_width();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.keys().copied().collect::<Vec<_>>() != self.active {
                return Err(Error::Shape(format!("layer {l} does not cover exactly the active levels")));
            }
            let mut f_out = None;
            let mut branch_count = None;
            for (k, ll) in layer {
                if ll.f_in() != width {
                    return Err(Error::Shape(format!("layer {l} level {k} expects {} features, got {width}", ll.f_in())));
                }
                if *f_out.get_or_insert(ll.f_out()) != ll.f_out() {
                    return Err(Error::Shape(format!("layer {l} levels disagree on output width")));
                }
                match ll {
                    LevelLayer::Cosimo(b) => {
                        if b.branches.is_empty() {
                            return Err(Error::Shape(format!("layer {l} level {k} has no branches")));
                        }
                        for p in &b.branches {
                            p.check()?;
                            if p.f_in() != width || p.f_out() != ll.f_out() {
                                return Err(Error::Shape(format!("layer {l} level {k} branches disagree in shape")));
                            }
                        }
                        if let Aggregation::Mlp(m) = &b.aggregation {
                            let f = ll.f_out();
                            if m.weight.nrows() != b.branches.len() * f || m.weight.ncols() != f || m.bias.len() != f {
                                return Err(Error::Shape(format!("layer {l} level {k} aggregator has the wrong shape")));
                            }
                        }
                        if self.shared_times && *branch_count.get_or_insert(b.branches.len()) != b.branches.len() {
                            return Err(Error::Shape(format!("layer {l}: shared receptive fields need equal branch counts")));
                        }
                    }
                    LevelLayer::Discrete(p) => p.check()?,
                }
            }
            width = f_out.expect("layer has levels");
        }
        if let Some(h) = &self.head {
            if h.nrows() != width {
                return Err(Error::Shape(format!("head expects {} features, got {width}", h.nrows())));
            }
        }
        Ok(())
    }

    /// All weight matrices of every layer (not the head).
    pub fn weight_matrices(&self) -> Vec<&DMatrix<f64>> {
        self.layers.iter().flat_map(|l| l.values().flat_map(|ll| ll.weight_matrices())).collect()
    }

    /// Visits every trainable scalar in a fixed order. With shared receptive
    /// fields only the first exponential level of a layer exposes its times.
    fn visit(&mut self, f: &mut dyn FnMut(&mut f64)) {
        let shared = self.shared_times;
        for layer in &mut self.layers {
            let mut first = true;
            for ll in layer.values_mut() {
                match ll {
                    LevelLayer::Cosimo(b) => {
                        for p in &mut b.branches {
                            for w in [&mut p.theta_d, &mut p.theta_u, &mut p.psi_d, &mut p.psi_u] {
                                w.iter_mut().for_each(&mut *f);
                            }
                            if !shared || first {
                                f(&mut p.tau_d);
                                f(&mut p.tau_u);
                            }
                        }
                        if let Aggregation::Mlp(m) = &mut b.aggregation {
                            m.weight.iter_mut().for_each(&mut *f);
                            m.bias.iter_mut().for_each(&mut *f);
                        }
                        first = false;
                    }
                    LevelLayer::Discrete(p) => {
                        for w in p.theta_d.iter_mut().chain(&mut p.psi_d).chain(&mut p.psi_u).chain(&mut p.theta_u) {
                            w.iter_mut().for_each(&mut *f);
                        }
                    }
                }
            }
        }
        if let Some(h) = &mut self.head {
            h.iter_mut().for_each(f);
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.clone().visit(&mut |_| n += 1);
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.clone().visit(&mut |x| out.push(*x));
        out
    }

    pub fn unflatten(&mut self, values: &[f64]) -> Result<()> {
        let n = self.num_params();
        if values.len() != n {
            return Err(Error::Shape(format!("expected {n} parameters, got {}", values.len())));
        }
        let mut it = values.iter();
        self.visit(&mut |x| *x = *it.next().expect("length checked"));
        if self.shared_times {
            self.sync_times();
        }
        Ok(())
    }

    /// Copies the first exponential level's times to the other levels.
    fn sync_times(&mut self) {
        for layer in &mut self.layers {
            let mut times: Option<Vec<(f64, f64)>> = None;
            for ll in layer.values_mut() {
                if let LevelLayer::Cosimo(b) = ll {
                    match &times {
                        None => times = Some(b.branches.iter().map(|p| (p.tau_d, p.tau_u)).collect()),
                        Some(t) => {
                            for (p, &(d, u)) in b.branches.iter_mut().zip(t) {
                                p.tau_d = d;
                                p.tau_u = u;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Marks the receptive-field entries of the flat parameter vector.
    pub fn time_mask(&self) -> Vec<bool> {
        let mut m = self.zeros_like();
        for layer in &mut m.layers {
            for ll in layer.values_mut() {
                if let LevelLayer::Cosimo(b) = ll {
                    for p in &mut b.branches {
                        p.tau_d = 1.0;
                        p.tau_u = 1.0;
                    }
                }
            }
        }
        m.flatten().into_iter().map(|x| x == 1.0).collect()
    }

    /// Network of the same shape with every parameter zero.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        let shared = z.shared_times;
        z.shared_times = false;
        z.visit(&mut |x| *x = 0.0);
        z.shared_times = shared;
        z
    }

    pub fn forward(&self, ctx: &ComplexContext, inputs: &[Signals]) -> Result<ForwardCache> {
        let batch = inputs.len();
        if batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let f0 = self.input_width();
        let mut first: [Option<DMatrix<f64>>; 3] = [None, None, None];
        for k in 0..3 {
            let n = ctx.size(k);
            let present = inputs.iter().any(|s| s.levels[k].is_some());
            if !present && !self.active.contains(&k) {
                continue;
            }
            let mut m = DMatrix::zeros(n, batch * f0);
            for (b, s) in inputs.iter().enumerate() {
                if let Some(x) = &s.levels[k] {
                    if x.nrows() != n || x.ncols() != f0 {
                        return Err(Error::Shape(format!(
                            "sample {b} level {k} is {}x{}, expected {n}x{f0}",
                            x.nrows(),
                            x.ncols()
                        )));
                    }
                    m.columns_mut(b * f0, f0).copy_from(x);
                }
            }
            first[k] = Some(m);
        }

        let mut states = vec![first];
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev = states.last().expect("nonempty");
            let mut next: [Option<DMatrix<f64>>; 3] = [None, None, None];
            let mut cache = BTreeMap::new();
            for (&k, ll) in layer {
                let x = prev[k].as_ref().expect("active level has a state");
                let x_d = if k >= 1 { prev[k - 1].as_ref().and_then(|x| ctx.lower(k, x)) } else { None };
                let x_u = if k <= 1 { prev[k + 1].as_ref().and_then(|x| ctx.upper(k, x)) } else { None };
                let (y, c) = match ll {
                    LevelLayer::Cosimo(b) => {
                        let (y, c) = cosimo_forward(b, ctx, k, x, x_d, x_u)?;
                        (y, LevelCache::Cosimo(c))
                    }
                    LevelLayer::Discrete(p) => {
                        let zd = x_d.unwrap_or_else(|| DMatrix::zeros(x.nrows(), x.ncols()));
                        let zu = x_u.unwrap_or_else(|| DMatrix::zeros(x.nrows(), x.ncols()));
                        let z = discrete_preactivation(&zd, x, &zu, p, ctx.ops(k));
                        (p.activation.map(&z), LevelCache::Discrete)
                    }
                };
                next[k] = Some(y);
                cache.insert(k, c);
            }
            states.push(next);
            caches.push(cache);
        }
        let last = states.last().expect("nonempty")[self.output_level].as_ref().expect("output level active");
        let fl = last.ncols() / batch;
        let output = match &self.head {
            Some(h) => right_mul(last, fl, h),
            None => last.clone(),
        };
        Ok(ForwardCache { batch, states, caches, output })
    }

    /// Per-sample outputs without keeping the cache.
    pub fn predict(&self, ctx: &ComplexContext, inputs: &[Signals]) -> Result<Vec<DMatrix<f64>>> {
        Ok(self.forward(ctx, inputs)?.outputs())
    }

    /// Gradient of `sum_b <loss_grads[b], output_b>` with respect to every
    /// parameter, in [`Network::flatten`] order.
    pub fn backward(&self, ctx: &ComplexContext, cache: &ForwardCache, loss_grads: &[DMatrix<f64>]) -> Result<Vec<f64>> {
        if loss_grads.len() != cache.batch {
            return Err(Error::Shape(format!("{} loss gradients for a batch of {}", loss_grads.len(), cache.batch)));
        }
        let fo = self.output_width();
        for g in loss_grads {
            if g.ncols() != fo || g.nrows() != cache.output.nrows() {
                return Err(Error::Shape("loss gradient does not match the output shape".into()));
            }
        }
        let d_out = blocks::hcat(&loss_grads.iter().collect::<Vec<_>>());
        let mut grad = self.zeros_like();
        let depth = self.layers.len();
        let last = cache.states[depth][self.output_level].as_ref().expect("output state");
        let fl = last.ncols() / cache.batch;

        let mut d_states: Vec<[Option<DMatrix<f64>>; 3]> = (0..=depth).map(|_| [None, None, None]).collect();
        let d_last = match &self.head {
            Some(h) => {
                *grad.head.as_mut().expect("same shape") = weight_grad(last, fl, &d_out, fo);
                let mut d = DMatrix::zeros(last.nrows(), last.ncols());
                right_mul_t_acc(&mut d, &d_out, h);
                d
            }
            None => d_out,
        };
        d_states[depth][self.output_level] = Some(d_last);

        for l in (0..depth).rev() {
            for (&k, ll) in &self.layers[l] {
                let Some(dy) = d_states[l + 1][k].take() else { continue };
                let LevelLayer::Cosimo(block) = ll else {
                    return Err(Error::Unsupported("backward through polynomial layers".into()));
                };
                let LevelCache::Cosimo(c) = &cache.caches[l][&k] else { unreachable!("cache matches layer") };
                let LevelLayer::Cosimo(gblock) = grad.layers[l].get_mut(&k).expect("same shape") else {
                    unreachable!("gradient mirrors network")
                };
                let (dx, dx_d, dx_u) = cosimo_backward(block, gblock, ctx, k, c, &dy)?;
                if l == 0 {
                    continue;
                }
                add_into(&mut d_states[l][k], dx);
                if let Some(d) = dx_d {
                    if self.active.contains(&(k - 1)) {
                        let b = ctx.maps().boundary(k).expect("k >= 1");
                        add_into(&mut d_states[l][k - 1], b * d);
                    }
                }
                if let Some(d) = dx_u {
                    if self.active.contains(&(k + 1)) {
                        let b = ctx.maps().boundary(k + 1).expect("k <= 1");
                        add_into(&mut d_states[l][k + 1], b.tr_mul(&d));
                    }
                }
            }
        }

        if self.shared_times {
            for layer in &mut grad.layers {
                let mut sums: Option<Vec<(f64, f64)>> = None;
                for ll in layer.values() {
                    if let LevelLayer::Cosimo(b) = ll {
                        let s = sums.get_or_insert_with(|| vec![(0.0, 0.0); b.branches.len()]);
                        for (acc, p) in s.iter_mut().zip(&b.branches) {
                            acc.0 += p.tau_d;
                            acc.1 += p.tau_u;
                        }
                    }
                }
                if let Some(s) = sums {
                    for ll in layer.values_mut() {
                        if let LevelLayer::Cosimo(b) = ll {
                            for (p, &(d, u)) in b.branches.iter_mut().zip(&s) {
                                p.tau_d = d;
                                p.tau_u = u;
                            }
                            break;
                        }
                    }
                }
            }
        }
        Ok(grad.flatten())
    }
}

fn add_into(slot: &mut Option<DMatrix<f64>>, d: DMatrix<f64>) {
    match slot {
        Some(s) => *s += d,
        None => *slot = Some(d),
    }
}

/// Intermediates kept by [`Network::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    /// `states[l][k]` is the batched signal at level `k` entering layer `l`
    /// (`states[0]` holds the inputs).
    states: Vec<[Option<DMatrix<f64>>; 3]>,
    caches: Vec<BTreeMap<usize, LevelCache>>,
    output: DMatrix<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Batched state at level `k` after `l` layers.
    pub fn state(&self, l: usize, k: usize) -> Option<&DMatrix<f64>> {
        self.states.get(l).and_then(|s| s[k].as_ref())
    }

    /// Per-sample state at level `k` after `l` layers.
    pub fn sample_state(&self, l: usize, k: usize, b: usize) -> Option<DMatrix<f64>> {
        self.state(l, k).map(|m| {
            let f = m.ncols() / self.batch;
            m.columns(b * f, f).into_owned()
        })
    }

    pub fn outputs(&self) -> Vec<DMatrix<f64>> {
        blocks::split(&self.output, self.output.ncols() / self.batch)
    }
}

#[derive(Clone, Debug)]
enum LevelCache {
    Cosimo(CosimoCache),
    Discrete,
}

#[derive(Clone, Debug)]
struct CosimoCache {
    f_in: usize,
    c_dk: DMatrix<f64>,
    c_uk: DMatrix<f64>,
    c_dd: Option<DMatrix<f64>>,
    c_uu: Option<DMatrix<f64>>,
    branches: Vec<BranchCache>,
    agg_pre: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
struct BranchCache {
    a_d: DMatrix<f64>,
    a_u: DMatrix<f64>,
    e_d: Vec<f64>,
    e_u: Vec<f64>,
    z: DMatrix<f64>,
    y: DMatrix<f64>,
}

fn decay(s: &TruncatedSpectrum, t: f64) -> Vec<f64> {
    s.eigenvalues.iter().map(|&l| (-t * l).exp()).collect()
}

fn cosimo_forward(
    block: &CosimoBlock,
    ctx: &ComplexContext,
    k: usize,
    x: &DMatrix<f64>,
    x_d: Option<DMatrix<f64>>,
    x_u: Option<DMatrix<f64>>,
) -> Result<(DMatrix<f64>, CosimoCache)> {
    let sp = ctx.spectra(k)?;
    let (vd, vu) = (&sp.down.eigenvectors, &sp.up.eigenvectors);
    let f_in = block.branches[0].f_in();
    let f_out = block.branches[0].f_out();
    let c_dk = vd.tr_mul(x);
    let c_uk = vu.tr_mul(x);
    let c_dd = x_d.map(|m| vd.tr_mul(&m));
    let c_uu = x_u.map(|m| vu.tr_mul(&m));

    let mut branches = Vec::with_capacity(block.branches.len());
    for p in &block.branches {
        let mut a_d = right_mul(&c_dk, f_in, &p.psi_d);
        if let Some(c) = &c_dd {
            right_mul_acc(&mut a_d, c, f_in, &p.theta_d);
        }
        let mut a_u = right_mul(&c_uk, f_in, &p.psi_u);
        if let Some(c) = &c_uu {
            right_mul_acc(&mut a_u, c, f_in, &p.theta_u);
        }
        let e_d = decay(&sp.down, p.t_d());
        let e_u = decay(&sp.up, p.t_u());
        let mut g_d = a_d.clone();
        scale_rows(&mut g_d, &e_d);
        let mut g_u = a_u.clone();
        scale_rows(&mut g_u, &e_u);
        let z = vd * g_d + vu * g_u;
        let y = p.activation.map(&z);
        branches.push(BranchCache { a_d, a_u, e_d, e_u, z, y });
    }

    let (out, agg_pre) = match &block.aggregation {
        Aggregation::Sum => {
            let mut out = branches[0].y.clone();
            for b in &branches[1..] {
                out += &b.y;
            }
            (out, None)
        }
        Aggregation::Mlp(m) => {
            let mut z = DMatrix::zeros(x.nrows(), branches[0].y.ncols());
            for (i, b) in branches.iter().enumerate() {
                let w = m.weight.rows(i * f_out, f_out).into_owned();
                right_mul_acc(&mut z, &b.y, f_out, &w);
            }
            let nb = blocks::blocks(&z, f_out);
            for blk in 0..nb {
                for (j, &bias) in m.bias.iter().enumerate() {
                    z.column_mut(blk * f_out + j).add_scalar_mut(bias);
                }
            }
            (m.activation.map(&z), Some(z))
        }
    };
    Ok((out, CosimoCache { f_in, c_dk, c_uk, c_dd, c_uu, branches, agg_pre }))
}

type LevelGrads = (DMatrix<f64>, Option<DMatrix<f64>>, Option<DMatrix<f64>>);

fn cosimo_backward(
    block: &CosimoBlock,
    grad: &mut CosimoBlock,
    ctx: &ComplexContext,
    k: usize,
    c: &CosimoCache,
    d_out: &DMatrix<f64>,
) -> Result<LevelGrads> {
    let sp = ctx.spectra(k)?;
    let (vd, vu) = (&sp.down.eigenvectors, &sp.up.eigenvectors);
    let f_in = c.f_in;
    let f_out = block.branches[0].f_out();

    let dys: Vec<DMatrix<f64>> = match (&block.aggregation, &mut grad.aggregation) {
        (Aggregation::Sum, _) => vec![d_out.clone(); block.branches.len()],
        (Aggregation::Mlp(m), Aggregation::Mlp(gm)) => {
            let pre = c.agg_pre.as_ref().expect("mlp cache");
            let dz = d_out.zip_map(pre, |d, z| d * m.activation.derivative(z));
            let nb = blocks::blocks(&dz, f_out);
            for (j, gb) in gm.bias.iter_mut().enumerate() {
                *gb = (0..nb).map(|blk| dz.column(blk * f_out + j).sum()).sum();
            }
            let mut dys = Vec::with_capacity(block.branches.len());
            for (i, b) in c.branches.iter().enumerate() {
                let w = m.weight.rows(i * f_out, f_out).into_owned();
                gm.weight.rows_mut(i * f_out, f_out).copy_from(&weight_grad(&b.y, f_out, &dz, f_out));
                let mut dy = DMatrix::zeros(dz.nrows(), dz.ncols());
                right_mul_t_acc(&mut dy, &dz, &w);
                dys.push(dy);
            }
            dys
        }
        _ => unreachable!("gradient mirrors network"),
    };

    let mut dc_dk = DMatrix::zeros(c.c_dk.nrows(), c.c_dk.ncols());
    let mut dc_uk = DMatrix::zeros(c.c_uk.nrows(), c.c_uk.ncols());
    let mut dc_dd = c.c_dd.as_ref().map(|m| DMatrix::zeros(m.nrows(), m.ncols()));
    let mut dc_uu = c.c_uu.as_ref().map(|m| DMatrix::zeros(m.nrows(), m.ncols()));

    for (((p, g), b), dy) in block.branches.iter().zip(&mut grad.branches).zip(&c.branches).zip(dys) {
        let dz = dy.zip_map(&b.z, |d, z| d * p.activation.derivative(z));
        let mut dd = vd.tr_mul(&dz);
        let mut du = vu.tr_mul(&dz);

        // d/dt of e^{-t lambda} is -lambda e^{-t lambda}; chain through t = e^tau.
        let dt_d: f64 = (0..dd.nrows())
            .map(|i| -sp.down.eigenvalues[i] * b.e_d[i] * dd.row(i).dot(&b.a_d.row(i)))
            .sum();
        let dt_u: f64 = (0..du.nrows())
            .map(|i| -sp.up.eigenvalues[i] * b.e_u[i] * du.row(i).dot(&b.a_u.row(i)))
            .sum();
        g.tau_d = dt_d * p.t_d();
        g.tau_u = dt_u * p.t_u();

        scale_rows(&mut dd, &b.e_d);
        scale_rows(&mut du, &b.e_u);
        g.psi_d = weight_grad(&c.c_dk, f_in, &dd, f_out);
        g.psi_u = weight_grad(&c.c_uk, f_in, &du, f_out);
        right_mul_t_acc(&mut dc_dk, &dd, &p.psi_d);
        right_mul_t_acc(&mut dc_uk, &du, &p.psi_u);
        if let (Some(cdd), Some(acc)) = (&c.c_dd, &mut dc_dd) {
            g.theta_d = weight_grad(cdd, f_in, &dd, f_out);
            right_mul_t_acc(acc, &dd, &p.theta_d);
        }
        if let (Some(cuu), Some(acc)) = (&c.c_uu, &mut dc_uu) {
            g.theta_u = weight_grad(cuu, f_in, &du, f_out);
            right_mul_t_acc(acc, &du, &p.theta_u);
        }
    }

    let dx = vd * dc_dk + vu * dc_uk;
    Ok((dx, dc_dd.map(|m| vd * m), dc_uu.map(|m| vu * m)))
}
