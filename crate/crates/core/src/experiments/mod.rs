//! End-to-end experiment harnesses: layerwise over-smoothing sweeps, the SNR
//! stability study and synthetic trajectory prediction.
//!
//! Every realization draws from its own stream derived from the master seed
//! and the realization index, so results do not depend on the job count.

mod oversmoothing;
mod stability;
mod trajectory;

pub use oversmoothing::{run_oversmoothing, FamilyCurve, OversmoothConfig, OversmoothResult};
pub use stability::{run_stability, StabilityCell, StabilityConfig, StabilityResult, StabilityRow};
pub use trajectory::{
    generate_trajectories, run_trajectory, split_stratified, trajectory_inputs, TrajectoryConfig, TrajectoryDataset,
    TrajectoryResult, TrajectoryRow, TrajectoryTask, WalkModel,
};

use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::complex::{delaunay_complex, random_points_with, HoleDisk, SimplicialComplex};
use crate::{Error, Result};

/// Stream purposes; see [`crate::rng::stream`].
pub(crate) mod purpose {
    pub const COMPLEX: u64 = 1;
    pub const WEIGHTS: u64 = 2;
    pub const SIGNALS: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const TRAIN: u64 = 6;
    pub const WALKS: u64 = 7;
    pub const MODEL: u64 = 8;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Oversmooth,
    Stability,
    Trajectory,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oversmooth" => Ok(Self::Oversmooth),
            "stability" => Ok(Self::Stability),
            "trajectory" => Ok(Self::Trajectory),
            _ => Err(Error::Config(vec![format!("experiment: unknown kind {s:?}")])),
        }
    }
}

/// Random Delaunay complex on the unit square with triangles removed inside
/// hole disks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComplexSpec {
    pub points: usize,
    pub holes: Vec<HoleDisk>,
}

impl Default for ComplexSpec {
    fn default() -> Self {
        Self { points: 30, holes: default_holes() }
    }
}

pub fn default_holes() -> Vec<HoleDisk> {
    vec![HoleDisk { center: [0.3, 0.3], radius: 0.12 }, HoleDisk { center: [0.7, 0.7], radius: 0.12 }]
}

impl ComplexSpec {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SimplicialComplex> {
        delaunay_complex(&random_points_with(self.points, rng)?, &self.holes)
    }

    fn issues(&self, path: &str, out: &mut Vec<String>) {
        if self.points < 3 {
            out.push(format!("{path}.points: need at least 3 points, got {}", self.points));
        }
        for (i, h) in self.holes.iter().enumerate() {
            if !(h.radius >= 0.0) || !h.center.iter().all(|c| c.is_finite()) {
                out.push(format!("{path}.holes[{i}]: center must be finite and radius nonnegative"));
            }
        }
    }
}

/// Schema checks beyond what deserialization enforces.
pub trait Validate {
    /// Every violation, each prefixed with its JSON path.
    fn issues(&self) -> Vec<String>;

    fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

/// Parses and validates a JSON config. Type errors carry the JSON path of the
/// offending field.
pub fn parse_config<T: DeserializeOwned + Validate>(json: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let cfg: T = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(vec![format!("{path}: {}", e.inner())])
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) fn check_positive(out: &mut Vec<String>, path: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        out.push(format!("{path}: must be positive and finite, got {v}"));
    }
}

pub(crate) fn check_nonzero(out: &mut Vec<String>, path: &str, v: usize) {
    if v == 0 {
        out.push(format!("{path}: must be at least 1"));
    }
}

/// Runs `f(0..n)` on up to `jobs` threads and returns the results in index
/// order. The first error wins.
pub fn par_map<T, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect::<Vec<_>>()).into_iter().collect()
}

/// Default job count: the realizations, capped at the available parallelism.
pub fn default_jobs(realizations: usize) -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    realizations.clamp(1, cores)
}

/// Float formatting for CSV payloads: 12 significant digits.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.11e}")
}

pub(crate) fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, fmt_f)
}

/// Writes a header and rows as CSV text.
pub(crate) fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (zero for a single value).
pub(crate) fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
