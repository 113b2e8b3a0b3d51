use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{check_nonzero, check_positive, csv_text, fmt_f, mean, par_map, purpose, std_dev, ComplexSpec, Validate};
use crate::complex::{BoundaryMaps, SimplicialComplex};
use crate::nn::{
    candidate_scores, train, Activation, AggregationKind, Architecture, ComplexContext, Dataset, Loss, Network,
    Signals, Target, TrainConfig, Truncation,
};
use crate::rng::{from_seed, stream};
use crate::{Error, Result};

/// Self-avoiding walk whose steps favour neighbours closer to `target`:
/// `P(v) ∝ exp(beta * (|p_cur - target| - |p_v - target|))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkModel {
    /// Vertices per trajectory, including the held-out final vertex.
    pub length: usize,
    pub target: [f64; 2],
    /// Zero gives a uniform choice among unvisited neighbours.
    pub beta: f64,
    /// Attempts per trajectory before giving up on stuck walks.
    pub retry_budget: usize,
}

impl Default for WalkModel {
    fn default() -> Self {
        Self { length: 8, target: [1.0, 0.0], beta: 40.0, retry_budget: 1000 }
    }
}

/// Walks on a complex encoded for next-vertex prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    /// Vertex indices (positions in `complex.vertices()`) of each walk.
    pub trajectories: Vec<Vec<usize>>,
    /// Edge flow of each prefix: `+1` on an edge traversed from its smaller
    /// to its larger vertex, `-1` the other way.
    pub flows: Vec<DVector<f64>>,
    /// Neighbours of the last prefix vertex.
    pub candidates: Vec<Vec<usize>>,
    /// Final vertex of each walk.
    pub labels: Vec<usize>,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Expected accuracy of guessing uniformly among the candidates.
    pub fn uniform_accuracy(&self, idx: &[usize]) -> f64 {
        mean(&idx.iter().map(|&i| 1.0 / self.candidates[i].len() as f64).collect::<Vec<_>>())
    }
}

fn connected(adj: &[Vec<usize>]) -> bool {
    if adj.is_empty() {
        return true;
    }
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn walk<R: Rng + ?Sized>(adj: &[Vec<usize>], pos: Option<&[[f64; 2]]>, m: &WalkModel, rng: &mut R) -> Option<Vec<usize>> {
    let dist = |v: usize| pos.map_or(0.0, |p| ((p[v][0] - m.target[0]).powi(2) + (p[v][1] - m.target[1]).powi(2)).sqrt());
    let mut path = vec![rng.gen_range(0..adj.len())];
    while path.len() < m.length {
        let cur = *path.last().expect("nonempty");
        let next: Vec<usize> = adj[cur].iter().copied().filter(|v| !path.contains(v)).collect();
        if next.is_empty() {
            return None;
        }
        let logits: Vec<f64> = next.iter().map(|&v| m.beta * (dist(cur) - dist(v))).collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let mut u = rng.gen::<f64>() * w.iter().sum::<f64>();
        let mut pick = next.len() - 1;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                pick = i;
                break;
            }
            u -= wi;
        }
        path.push(next[pick]);
    }
    Some(path)
}

/// Samples `n_traj` walks of `model.length` vertices. Walks that get stuck
/// are redrawn, up to `model.retry_budget` attempts each.
pub fn generate_trajectories(
    complex: &SimplicialComplex,
    n_traj: usize,
    model: &WalkModel,
    rng_seed: u64,
) -> Result<TrajectoryDataset> {
    if model.length < 3 {
        return Err(Error::Domain(format!("walks need at least 3 vertices, got {}", model.length)));
    }
    let adj = complex.adjacency();
    if complex.count(1) == 0 || !connected(&adj) {
        return Err(Error::Domain("trajectories need a connected complex with edges".into()));
    }
    let pos = complex.positions();
    let mut rng = from_seed(rng_seed);
    let mut trajectories = Vec::with_capacity(n_traj);
    while trajectories.len() < n_traj {
        let mut found = None;
        for _ in 0..model.retry_budget.max(1) {
            if let Some(p) = walk(&adj, pos, model, &mut rng) {
                found = Some(p);
                break;
            }
        }
        match found {
            Some(p) => trajectories.push(p),
            None => {
                return Err(Error::WalkBudget(format!(
                    "no walk of length {} after {} attempts",
                    model.length, model.retry_budget
                )))
            }
        }
    }

    let verts = complex.vertices();
    let mut flows = Vec::with_capacity(n_traj);
    let mut candidates = Vec::with_capacity(n_traj);
    let mut labels = Vec::with_capacity(n_traj);
    for t in &trajectories {
        let prefix = &t[..t.len() - 1];
        let mut x = DVector::zeros(complex.count(1));
        for w in prefix.windows(2) {
            let (a, b) = (verts[w[0]], verts[w[1]]);
            let e = complex.edge_position(a.min(b), a.max(b)).expect("walks follow edges");
            x[e] = if a < b { 1.0 } else { -1.0 };
        }
        flows.push(x);
        candidates.push(adj[*prefix.last().expect("nonempty")].clone());
        labels.push(*t.last().expect("nonempty"));
    }
    Ok(TrajectoryDataset { trajectories, flows, candidates, labels })
}

/// Edge-flow inputs and candidate targets for training.
pub fn trajectory_inputs(d: &TrajectoryDataset, idx: &[usize]) -> Dataset {
    Dataset {
        inputs: idx
            .iter()
            .map(|&i| Signals::at(1, DMatrix::from_column_slice(d.flows[i].len(), 1, d.flows[i].as_slice())))
            .collect(),
        targets: idx
            .iter()
            .map(|&i| Target::Choice { candidates: d.candidates[i].clone(), label: d.labels[i] })
            .collect(),
    }
}

/// Splits indices into train and test sets, taking `fraction` of every label
/// group (rounded) for training.
pub fn split_stratified<R: Rng + ?Sized>(labels: &[usize], fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for g in groups.values_mut() {
        g.shuffle(rng);
        let n = ((g.len() as f64) * fraction).round() as usize;
        tr.extend_from_slice(&g[..n]);
        te.extend_from_slice(&g[n..]);
    }
    tr.sort_unstable();
    te.sort_unstable();
    (tr, te)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub seed: u64,
    pub realizations: usize,
    pub complex: ComplexSpec,
    pub trajectories: usize,
    pub walk: WalkModel,
    pub train_fraction: f64,
    pub features: usize,
    pub layers: usize,
    pub branches: usize,
    pub aggregation: AggregationKind,
    pub activation: Activation,
    pub init_time: f64,
    pub truncation: Truncation,
    pub train: TrainConfig,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            realizations: 10,
            complex: ComplexSpec { points: 45, ..ComplexSpec::default() },
            trajectories: 350,
            walk: WalkModel::default(),
            train_fraction: 0.8,
            features: 8,
            layers: 2,
            branches: 3,
            aggregation: AggregationKind::Sum,
            activation: Activation::Relu,
            init_time: 1.0,
            truncation: Truncation::default(),
            train: TrainConfig { step_size: 0.15, epochs: 60, ..TrainConfig::default() },
        }
    }
}

impl Validate for TrajectoryConfig {
    fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        check_nonzero(&mut out, "realizations", self.realizations);
        self.complex.issues("complex", &mut out);
        check_nonzero(&mut out, "trajectories", self.trajectories);
        if self.walk.length < 3 {
            out.push(format!("walk.length: must be at least 3, got {}", self.walk.length));
        }
        if !self.walk.beta.is_finite() {
            out.push("walk.beta: must be finite".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            out.push(format!("train_fraction: must lie in (0, 1), got {}", self.train_fraction));
        }
        check_nonzero(&mut out, "features", self.features);
        check_nonzero(&mut out, "layers", self.layers);
        check_nonzero(&mut out, "branches", self.branches);
        check_positive(&mut out, "init_time", self.init_time);
        if !(self.train.step_size >= 0.0 && self.train.step_size.is_finite()) {
            out.push(format!("train.step_size: must be nonnegative and finite, got {}", self.train.step_size));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub seed: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub uniform_accuracy: f64,
    pub untrained_accuracy: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub rows: Vec<TrajectoryRow>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_uniform: f64,
    pub mean_untrained: f64,
}

impl TrajectoryResult {
    /// Columns `seed,train_size,test_size,uniform_accuracy,untrained_accuracy,train_accuracy,test_accuracy,final_loss`.
    pub fn to_csv(&self) -> Result<String> {
        let rows = self.rows.iter().map(|r| {
            vec![
                r.seed.to_string(),
                r.train_size.to_string(),
                r.test_size.to_string(),
                fmt_f(r.uniform_accuracy),
                fmt_f(r.untrained_accuracy),
                fmt_f(r.train_accuracy),
                fmt_f(r.test_accuracy),
                fmt_f(r.final_loss),
            ]
        });
        csv_text(
            &[
                "seed",
                "train_size",
                "test_size",
                "uniform_accuracy",
                "untrained_accuracy",
                "train_accuracy",
                "test_accuracy",
                "final_loss",
            ],
            rows,
        )
    }
}

/// Fraction of samples whose highest-scoring candidate is the label.
pub(crate) fn accuracy(net: &Network, ctx: &ComplexContext, readout: &DMatrix<f64>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let out = net.predict(ctx, &data.inputs)?;
    let mut hits = 0;
    for (y, t) in out.iter().zip(&data.targets) {
        let Target::Choice { candidates, label } = t else {
            return Err(Error::Domain("accuracy needs candidate targets".into()));
        };
        let s = candidate_scores(readout, y, candidates);
        let best = (0..s.len()).fold(0, |b, i| if s[i] > s[b] { i } else { b });
        hits += (candidates[best] == *label) as usize;
    }
    Ok(hits as f64 / data.len() as f64)
}

impl TrajectoryConfig {
    pub fn architecture(&self) -> Architecture {
        let mut widths = vec![1];
        widths.extend(std::iter::repeat(self.features).take(self.layers));
        Architecture {
            active_levels: vec![1],
            output_level: 1,
            widths,
            branches: self.branches,
            aggregation: self.aggregation,
            activation: self.activation,
            head: Some(1),
            init_time: self.init_time,
            shared_times: true,
        }
    }

    /// Untrained model of realization `r`.
    pub fn initial_network(&self, r: usize) -> Result<Network> {
        Network::cosimo(&self.architecture(), &mut stream(self.seed, r as u64, purpose::MODEL))
    }

    /// Training settings of realization `r`, with its minibatch seed.
    pub fn train_config(&self, r: usize) -> TrainConfig {
        TrainConfig { seed: stream(self.seed, r as u64, purpose::TRAIN).next_u64(), ..self.train.clone() }
    }
}

/// Walks, split and operators for one realization on a given complex.
#[derive(Clone, Debug)]
pub struct TrajectoryTask {
    pub ctx: ComplexContext,
    /// `B_1`, mapping edge outputs to vertex scores.
    pub readout: DMatrix<f64>,
    pub data: TrajectoryDataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub train_set: Dataset,
    pub test_set: Dataset,
}

impl TrajectoryTask {
    pub fn new(cfg: &TrajectoryConfig, complex: &SimplicialComplex, r: usize) -> Result<Self> {
        let r64 = r as u64;
        let walks_seed = stream(cfg.seed, r64, purpose::WALKS).next_u64();
        let data = generate_trajectories(complex, cfg.trajectories, &cfg.walk, walks_seed)?;
        let (train_idx, test_idx) =
            split_stratified(&data.labels, cfg.train_fraction, &mut stream(cfg.seed, r64, purpose::SPLIT));
        let maps = BoundaryMaps::from_complex(complex);
        let readout = maps.b1.clone();
        let ctx = ComplexContext::with_spectra_at(maps, &cfg.truncation, &[1])?;
        Ok(Self {
            train_set: trajectory_inputs(&data, &train_idx),
            test_set: trajectory_inputs(&data, &test_idx),
            ctx,
            readout,
            data,
            train_idx,
            test_idx,
        })
    }

    pub fn loss(&self) -> Loss {
        Loss::CandidateCrossEntropy { readout: self.readout.clone() }
    }

    pub fn accuracy(&self, net: &Network, data: &Dataset) -> Result<f64> {
        accuracy(net, &self.ctx, &self.readout, data)
    }

    pub fn uniform_accuracy(&self) -> f64 {
        self.data.uniform_accuracy(&self.test_idx)
    }
}

fn realization(cfg: &TrajectoryConfig, r: usize) -> Result<TrajectoryRow> {
    let complex = cfg.complex.sample(&mut stream(cfg.seed, r as u64, purpose::COMPLEX))?;
    let task = TrajectoryTask::new(cfg, &complex, r)?;
    let mut net = cfg.initial_network(r)?;
    let untrained_accuracy = task.accuracy(&net, &task.test_set)?;
    let trace = train(&mut net, &task.ctx, &task.train_set, &task.loss(), &cfg.train_config(r))?;
    Ok(TrajectoryRow {
        seed: r,
        train_size: task.train_idx.len(),
        test_size: task.test_idx.len(),
        uniform_accuracy: task.uniform_accuracy(),
        untrained_accuracy,
        train_accuracy: task.accuracy(&net, &task.train_set)?,
        test_accuracy: task.accuracy(&net, &task.test_set)?,
        final_loss: trace.final_loss,
    })
}

/// Next-vertex prediction from edge flows with an exponential network at
/// level 1, scored through `B_1`.
pub fn run_trajectory(cfg: &TrajectoryConfig, jobs: usize) -> Result<TrajectoryResult> {
    cfg.validate()?;
    let rows = par_map(cfg.realizations, jobs, |r| realization(cfg, r))?;
    let acc: Vec<f64> = rows.iter().map(|r| r.test_accuracy).collect();
    Ok(TrajectoryResult {
        mean_accuracy: mean(&acc),
        std_accuracy: std_dev(&acc),
        mean_uniform: mean(&rows.iter().map(|r| r.uniform_accuracy).collect::<Vec<_>>()),
        mean_untrained: mean(&rows.iter().map(|r| r.untrained_accuracy).collect::<Vec<_>>()),
        rows,
    })
}
