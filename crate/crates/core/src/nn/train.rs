use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ComplexContext, Network, Signals};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Regression target with the network's output shape.
    Signal(DMatrix<f64>),
    /// Index of the correct entry among `candidates` (rows of the readout).
    Choice { candidates: Vec<usize>, label: usize },
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub inputs: Vec<Signals>,
    pub targets: Vec<Target>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Loss {
    /// Mean of squared entries of `output - target`.
    MeanSquared,
    /// Softmax cross-entropy over candidate scores `readout * output`.
    CandidateCrossEntropy { readout: DMatrix<f64> },
}

/// Scores `readout * y` restricted to `candidates`.
pub fn candidate_scores(readout: &DMatrix<f64>, y: &DMatrix<f64>, candidates: &[usize]) -> Vec<f64> {
    candidates.iter().map(|&c| readout.row(c).dot(&y.column(0).transpose())).collect()
}

impl Loss {
    /// Mean loss over the batch and its gradient per output.
    pub fn evaluate(&self, outputs: &[DMatrix<f64>], targets: &[Target]) -> Result<(f64, Vec<DMatrix<f64>>)> {
        let b = outputs.len() as f64;
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(outputs.len());
        for (y, t) in outputs.iter().zip(targets) {
            match (self, t) {
                (Loss::MeanSquared, Target::Signal(target)) => {
                    if target.shape() != y.shape() {
                        return Err(Error::Shape("target shape differs from output".into()));
                    }
                    let n = (y.nrows() * y.ncols()).max(1) as f64;
                    let diff = y - target;
                    total += diff.norm_squared() / n;
                    grads.push(diff * (2.0 / (n * b)));
                }
                (Loss::CandidateCrossEntropy { readout }, Target::Choice { candidates, label }) => {
                    if y.ncols() != 1 {
                        return Err(Error::Shape("candidate scoring needs a single output feature".into()));
                    }
                    let pos = candidates
                        .iter()
                        .position(|c| c == label)
                        .ok_or_else(|| Error::Domain(format!("label {label} is not a candidate")))?;
                    let s = candidate_scores(readout, y, candidates);
                    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                    total += m + z.ln() - s[pos];
                    let mut g = DMatrix::zeros(y.nrows(), 1);
                    for (i, (&c, &si)) in candidates.iter().zip(&s).enumerate() {
                        let p = (si - m).exp() / z - if i == pos { 1.0 } else { 0.0 };
                        for (gr, &r) in g.iter_mut().zip(readout.row(c).iter()) {
                            *gr += p * r / b;
                        }
                    }
                    grads.push(g);
                }
                _ => return Err(Error::Domain("target kind does not match the loss".into())),
            }
        }
        Ok((total / b, grads))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    Momentum { beta: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Momentum { beta: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub step_size: f64,
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub seed: u64,
    /// Full batch when `None`.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Keep receptive fields at their initial values.
    #[serde(default)]
    pub freeze_times: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { step_size: 0.05, epochs: 100, optimizer: Optimizer::default(), seed: 0, batch_size: None, freeze_times: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Mean training loss seen during each epoch.
    pub losses: Vec<f64>,
    /// Loss of the final parameters on the whole training set.
    pub final_loss: f64,
}

/// Gradient-based training. Deterministic for a fixed `config.seed`.
pub fn train(
    net: &mut Network,
    ctx: &ComplexContext,
    data: &Dataset,
    loss: &Loss,
    config: &TrainConfig,
) -> Result<TrainingTrace> {
    if data.is_empty() || data.inputs.len() != data.targets.len() {
        return Err(Error::Shape("training set is empty or inputs and targets differ in count".into()));
    }
    if !config.step_size.is_finite() || config.step_size < 0.0 {
        return Err(Error::Domain(format!("step size {}", config.step_size)));
    }
    let mut rng = crate::rng::from_seed(config.seed);
    let mut params = net.flatten();
    let mut velocity = vec![0.0; params.len()];
    let mask = if config.freeze_times { net.time_mask() } else { vec![false; params.len()] };
    let batch = config.batch_size.unwrap_or(data.len()).clamp(1, data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainingTrace::default();

    for epoch in 0..config.epochs {
        if batch < data.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let sub = if chunk.len() == data.len() { None } else { Some(data.subset(chunk)) };
            let d = sub.as_ref().unwrap_or(data);
            let cache = net.forward(ctx, &d.inputs)?;
            let (value, grads) = loss.evaluate(&cache.outputs(), &d.targets)?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            epoch_loss += value * chunk.len() as f64;
            let g = net.backward(ctx, &cache, &grads)?;
            for i in 0..params.len() {
                if mask[i] {
                    continue;
                }
                let step = match config.optimizer {
                    Optimizer::GradientDescent => g[i],
                    Optimizer::Momentum { beta } => {
                        velocity[i] = beta * velocity[i] + g[i];
                        velocity[i]
                    }
                };
                params[i] -= config.step_size * step;
            }
            net.unflatten(&params)?;
        }
        trace.losses.push(epoch_loss / data.len() as f64);
    }
    let cache = net.forward(ctx, &data.inputs)?;
    trace.final_loss = loss.evaluate(&cache.outputs(), &data.targets)?.0;
    if !trace.final_loss.is_finite() {
        return Err(Error::Diverged { epoch: config.epochs, loss: trace.final_loss });
    }
    Ok(trace)
}
