use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_nonzero, check_positive, csv_text, fmt_f, mean, par_map, purpose, std_dev, ComplexSpec, Validate};
use crate::analysis::{stability_bound, FilterInputs};
use crate::complex::{perturb_incidence, BoundaryMaps, Snr};
use crate::nn::{
    train, Activation, AggregationKind, Architecture, ComplexContext, Dataset, Loss, Network, Signals, Target,
    TrainConfig, Truncation,
};
use crate::rng::stream;
use crate::spectral::{cosimo_filter, LevelSpectra};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub seed: u64,
    pub realizations: usize,
    pub complex: ComplexSpec,
    /// SNR grid for `B_1` in dB; `"inf"` means no noise.
    pub snr1: Vec<Snr>,
    /// SNR grid for `B_2` in dB.
    pub snr2: Vec<Snr>,
    pub level: usize,
    /// Receptive fields of the generative filter.
    pub t_d: f64,
    pub t_u: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Initial receptive field of the trained model.
    pub init_time: f64,
    pub train: TrainConfig,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        let grid = vec![Snr(-5.0), Snr(0.0), Snr(10.0), Snr(20.0)];
        Self {
            seed: 0,
            realizations: 30,
            complex: ComplexSpec::default(),
            snr1: grid.clone(),
            snr2: grid,
            level: 1,
            t_d: 1.0,
            t_u: 2.0,
            train_samples: 32,
            test_samples: 16,
            init_time: 1.0,
            train: TrainConfig { step_size: 0.05, epochs: 300, ..TrainConfig::default() },
        }
    }
}

impl Validate for StabilityConfig {
    fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        check_nonzero(&mut out, "realizations", self.realizations);
        self.complex.issues("complex", &mut out);
        for (name, g) in [("snr1", &self.snr1), ("snr2", &self.snr2)] {
            if g.is_empty() {
                out.push(format!("{name}: must not be empty"));
            }
        }
        if self.level > 2 {
            out.push(format!("level: must be 0, 1 or 2, got {}", self.level));
        }
        for (name, v) in [("t_d", self.t_d), ("t_u", self.t_u), ("init_time", self.init_time)] {
            check_positive(&mut out, name, v);
        }
        check_nonzero(&mut out, "train_samples", self.train_samples);
        check_nonzero(&mut out, "test_samples", self.test_samples);
        if !(self.train.step_size >= 0.0 && self.train.step_size.is_finite()) {
            out.push(format!("train.step_size: must be nonnegative and finite, got {}", self.train.step_size));
        }
        out
    }
}

/// One (cell, realization) outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub snr1: Snr,
    pub snr2: Snr,
    pub seed: usize,
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub satisfied: bool,
    /// Test mean squared error of the model trained on the perturbed complex.
    pub test_error: f64,
    pub train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub snr1: Snr,
    pub snr2: Snr,
    pub mean_lhs: f64,
    pub mean_rhs: f64,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub mean_error: f64,
    pub std_error: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub snr1: Vec<Snr>,
    pub snr2: Vec<Snr>,
    /// Ordered by `snr1`, then `snr2`, then seed.
    pub rows: Vec<StabilityRow>,
    /// Ordered by `snr1`, then `snr2`.
    pub cells: Vec<StabilityCell>,
}

impl StabilityResult {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.satisfied).count()
    }

    pub fn cell(&self, snr1: Snr, snr2: Snr) -> Option<&StabilityCell> {
        self.cells.iter().find(|c| c.snr1 == snr1 && c.snr2 == snr2)
    }

    /// Mean gap with rows indexed by `snr2` and columns by `snr1`.
    pub fn gap_matrix(&self) -> Vec<Vec<f64>> {
        self.snr2
            .iter()
            .map(|&s2| self.snr1.iter().map(|&s1| self.cell(s1, s2).map_or(f64::NAN, |c| c.mean_gap)).collect())
            .collect()
    }

    /// Columns `snr1,snr2,seed,epsilon1,epsilon2,lhs,rhs,gap,satisfied,test_error,train_loss`.
    pub fn to_csv(&self) -> Result<String> {
        let rows = self.rows.iter().map(|r| {
            vec![
                r.snr1.to_string(),
                r.snr2.to_string(),
                r.seed.to_string(),
                fmt_f(r.epsilon1),
                fmt_f(r.epsilon2),
                fmt_f(r.lhs),
                fmt_f(r.rhs),
                fmt_f(r.gap),
                r.satisfied.to_string(),
                fmt_f(r.test_error),
                fmt_f(r.train_loss),
            ]
        });
        csv_text(
            &["snr1", "snr2", "seed", "epsilon1", "epsilon2", "lhs", "rhs", "gap", "satisfied", "test_error", "train_loss"],
            rows,
        )
    }

    /// Columns `snr1,snr2,mean_lhs,mean_rhs,mean_gap,std_gap,mean_error,std_error,violations`.
    pub fn cells_csv(&self) -> Result<String> {
        let rows = self.cells.iter().map(|c| {
            vec![
                c.snr1.to_string(),
                c.snr2.to_string(),
                fmt_f(c.mean_lhs),
                fmt_f(c.mean_rhs),
                fmt_f(c.mean_gap),
                fmt_f(c.std_gap),
                fmt_f(c.mean_error),
                fmt_f(c.std_error),
                c.violations.to_string(),
            ]
        });
        csv_text(
            &["snr1", "snr2", "mean_lhs", "mean_rhs", "mean_gap", "std_gap", "mean_error", "std_error", "violations"],
            rows,
        )
    }
}

fn randn<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn column(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_vec(n, 1, v.data.into())
}

/// Neighbour and own signals for one sample.
struct Sample {
    lower: Option<DVector<f64>>,
    own: DVector<f64>,
    upper: Option<DVector<f64>>,
}

impl Sample {
    fn draw<R: Rng + ?Sized>(maps: &BoundaryMaps, k: usize, rng: &mut R) -> Self {
        Self {
            lower: (k >= 1).then(|| randn(maps.size(k - 1), rng)),
            own: randn(maps.size(k), rng),
            upper: (k <= 1).then(|| randn(maps.size(k + 1), rng)),
        }
    }

    fn filter_inputs(&self, maps: &BoundaryMaps, k: usize) -> Result<FilterInputs> {
        FilterInputs::from_signals(maps, k, self.lower.as_ref(), &self.own, self.upper.as_ref())
    }

    fn signals(&self, k: usize) -> Signals {
        let mut s = Signals::default();
        s.levels[k] = Some(column(self.own.clone()));
        if let Some(x) = &self.lower {
            s.levels[k - 1] = Some(column(x.clone()));
        }
        if let Some(x) = &self.upper {
            s.levels[k + 1] = Some(column(x.clone()));
        }
        s
    }
}

fn realization(cfg: &StabilityConfig, r: usize) -> Result<Vec<StabilityRow>> {
    let r64 = r as u64;
    let k = cfg.level;
    let complex = cfg.complex.sample(&mut stream(cfg.seed, r64, purpose::COMPLEX))?;
    let clean = BoundaryMaps::from_complex(&complex);
    let clean_spectra = LevelSpectra::full(&clean.hodge(k)?)?;

    let mut rng = stream(cfg.seed, r64, purpose::SIGNALS);
    let probe = Sample::draw(&clean, k, &mut rng);
    let probe_inputs = probe.filter_inputs(&clean, k)?;
    let mut data = |n: usize| -> Result<Dataset> {
        let mut d = Dataset::default();
        for _ in 0..n {
            let s = Sample::draw(&clean, k, &mut rng);
            let fi = s.filter_inputs(&clean, k)?;
            let y = cosimo_filter(&clean_spectra, &fi.x_d0, &fi.x_u0, &fi.x_k0, cfg.t_d, cfg.t_u)?;
            d.inputs.push(s.signals(k));
            d.targets.push(Target::Signal(column(y)));
        }
        Ok(d)
    };
    let train_set = data(cfg.train_samples)?;
    let test_set = data(cfg.test_samples)?;

    // One noise draw per realization, rescaled per cell, so cells differ
    // only in noise level.
    let noise_seed = stream(cfg.seed, r64, purpose::NOISE).next_u64();
    let arch = Architecture {
        active_levels: vec![k],
        output_level: k,
        widths: vec![1, 1],
        branches: 1,
        aggregation: AggregationKind::Sum,
        activation: Activation::Identity,
        head: None,
        init_time: cfg.init_time,
        shared_times: true,
    };
    let init = Network::cosimo(&arch, &mut stream(cfg.seed, r64, purpose::MODEL))?;
    let train_cfg = TrainConfig { seed: stream(cfg.seed, r64, purpose::TRAIN).next_u64(), ..cfg.train.clone() };

    let mut rows = Vec::new();
    for &snr1 in &cfg.snr1 {
        for &snr2 in &cfg.snr2 {
            let p = perturb_incidence(&complex, snr1, snr2, noise_seed)?;
            let bound = stability_bound(&p, k, &probe_inputs, cfg.t_d, cfg.t_u)?;
            let ctx = ComplexContext::with_spectra_at(p.perturbed.clone(), &Truncation::default(), &[k])?;
            let mut net = init.clone();
            let trace = train(&mut net, &ctx, &train_set, &Loss::MeanSquared, &train_cfg)?;
            let pred = net.predict(&ctx, &test_set.inputs)?;
            let (test_error, _) = Loss::MeanSquared.evaluate(&pred, &test_set.targets)?;
            rows.push(StabilityRow {
                snr1,
                snr2,
                seed: r,
                epsilon1: p.epsilon1,
                epsilon2: p.epsilon2,
                lhs: bound.lhs,
                rhs: bound.rhs,
                gap: bound.gap,
                satisfied: bound.satisfied,
                test_error,
                train_loss: trace.final_loss,
            });
        }
    }
    Ok(rows)
}

/// The perturbation bound and the error of a model trained on a noisy
/// complex, over an SNR grid.
pub fn run_stability(cfg: &StabilityConfig, jobs: usize) -> Result<StabilityResult> {
    cfg.validate()?;
    let per = par_map(cfg.realizations, jobs, |r| realization(cfg, r))?;
    let cells_per_run = cfg.snr1.len() * cfg.snr2.len();
    let mut rows = Vec::with_capacity(cells_per_run * cfg.realizations);
    let mut cells = Vec::with_capacity(cells_per_run);
    for c in 0..cells_per_run {
        let group: Vec<&StabilityRow> = per.iter().map(|run| &run[c]).collect();
        let pick = |f: fn(&StabilityRow) -> f64| group.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let (gaps, errors) = (pick(|r| r.gap), pick(|r| r.test_error));
        cells.push(StabilityCell {
            snr1: group[0].snr1,
            snr2: group[0].snr2,
            mean_lhs: mean(&pick(|r| r.lhs)),
            mean_rhs: mean(&pick(|r| r.rhs)),
            mean_gap: mean(&gaps),
            std_gap: std_dev(&gaps),
            mean_error: mean(&errors),
            std_error: std_dev(&errors),
            violations: group.iter().filter(|r| !r.satisfied).count(),
        });
        rows.extend(group.into_iter().cloned());
    }
    Ok(StabilityResult { snr1: cfg.snr1.clone(), snr2: cfg.snr2.clone(), rows, cells })
}
