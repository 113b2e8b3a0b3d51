use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use cosimo::analysis::spectral_entropy_select;
use cosimo::complex::{delaunay_complex, random_points_with, BoundaryMaps, HoleDisk, SimplicialComplex};
use cosimo::experiments::{
    default_holes, default_jobs, fmt_f, parse_config, run_oversmoothing, run_stability, run_trajectory,
    ExperimentKind, OversmoothConfig, StabilityConfig, TrajectoryConfig, TrajectoryTask, Validate,
};
use cosimo::nn::{train as train_network, Checkpoint};
use cosimo::rng::from_seed;
use cosimo::spectral::{eig_sym, nonzero_threshold, OperatorKind};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::{EnvArgs, EvalArgs, Failure, GenerateArgs, InspectArgs, RunArgs, TrainArgs};

type Outcome = Result<(), Failure>;

/// `println!` that tolerates a closed stdout, e.g. when piped into `head`.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

fn read_input(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn load_complex(path: &Path) -> Result<SimplicialComplex, Failure> {
    SimplicialComplex::from_json(&read_input(path)?)
        .map_err(|e| Failure::Usage(format!("{} is not a valid complex: {e}", path.display())))
}

fn load_config<T: DeserializeOwned + Validate + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        Some(p) => Ok(parse_config(&read_input(p)?)?),
        None => {
            let cfg = T::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn sha256(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the outputs plus `manifest.json`. The manifest's `payload` is
/// deterministic; wall-clock data lives under `run`.
fn write_outputs(
    dir: &Path,
    payload: Value,
    outputs: &[(String, String)],
    started: SystemTime,
    clock: Instant,
    jobs: Option<usize>,
) -> Outcome {
    let mut hashes = serde_json::Map::new();
    for (name, text) in outputs {
        write_file(&dir.join(name), text)?;
        hashes.insert(name.clone(), Value::String(sha256(text)));
    }
    let mut payload = payload;
    payload["version"] = json!(env!("CARGO_PKG_VERSION"));
    payload["outputs"] = Value::Object(hashes);
    let started = started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let manifest = json!({
        "payload": payload,
        "run": { "started_unix": started, "wall_seconds": clock.elapsed().as_secs_f64(), "jobs": jobs },
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&dir.join("manifest.json"), &text)?;
    for (name, _) in outputs {
        say!("wrote {}", dir.join(name).display());
    }
    Ok(())
}

fn config_value<T: Serialize>(cfg: &T) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn parse_holes(s: &str) -> Result<Vec<HoleDisk>, Failure> {
    match s.trim() {
        "default" => return Ok(default_holes()),
        "none" | "" => return Ok(Vec::new()),
        _ => {}
    }
    s.split(';')
        .map(|h| {
            let v: Vec<f64> = h
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| Failure::Usage(format!("--holes: cannot parse {h:?}: {e}")))?;
            match v[..] {
                [x, y, r] if r >= 0.0 && x.is_finite() && y.is_finite() => Ok(HoleDisk { center: [x, y], radius: r }),
                _ => Err(Failure::Usage(format!("--holes: expected x,y,r with r >= 0, got {h:?}"))),
            }
        })
        .collect()
}

pub fn generate(a: &GenerateArgs) -> Outcome {
    if a.n < 3 {
        return Err(Failure::Usage(format!("--n: need at least 3 points, got {}", a.n)));
    }
    let holes = parse_holes(&a.holes)?;
    let points = random_points_with(a.n, &mut from_seed(a.seed))?;
    let complex = delaunay_complex(&points, &holes)?;
    let removed = delaunay_complex(&points, &[])?.count(2) - complex.count(2);
    let out = a.out.clone().unwrap_or_else(|| a.env.out_dir.join("complex.json"));
    write_file(&out, &(complex.to_json() + "\n"))?;

    say!("wrote {}", out.display());
    say!(
        "vertices {}, edges {}, triangles {} ({removed} removed by holes)",
        complex.count(0),
        complex.count(1),
        complex.count(2)
    );
    say!("euler characteristic {}", complex.euler_characteristic());
    let maps = BoundaryMaps::from_complex(&complex);
    let mut betti = Vec::new();
    say!("{:<6} {:<5} {:>14} {:>19}", "level", "op", "lambda_max", "lambda_min_nonzero");
    for k in 0..3 {
        let ops = maps.hodge(k)?;
        let full = eig_sym(ops.full())?;
        let tol = nonzero_threshold(full.lambda_max());
        betti.push(full.eigenvalues.iter().filter(|&&l| l <= tol).count());
        for (name, kind) in [("down", OperatorKind::Down), ("up", OperatorKind::Up)] {
            if k == 0 && kind == OperatorKind::Down {
                continue;
            }
            let s = eig_sym(&kind.pick(&ops))?;
            let min = s.lambda_min_nonzero().map_or_else(|| "-".to_string(), fmt_f);
            say!("{k:<6} {name:<5} {:>14} {min:>19}", fmt_f(s.lambda_max()));
        }
    }
    say!("betti numbers {} {} {}", betti[0], betti[1], betti[2]);
    Ok(())
}

fn jobs_for(env: &EnvArgs, realizations: usize) -> Result<usize, Failure> {
    match env.jobs {
        Some(0) => Err(Failure::Usage("--jobs: must be at least 1".into())),
        Some(j) => Ok(j),
        None => Ok(default_jobs(realizations)),
    }
}

pub fn run(a: &RunArgs) -> Outcome {
    let started = SystemTime::now();
    let clock = Instant::now();
    let dir = a.out.clone().unwrap_or_else(|| a.env.out_dir.clone());
    let cfg_path = a.config.as_deref();
    let (name, mut payload, outputs, violations, jobs) = match a.experiment {
        ExperimentKind::Oversmooth => {
            let cfg: OversmoothConfig = load_config(cfg_path)?;
            let jobs = jobs_for(&a.env, cfg.realizations)?;
            let r = run_oversmoothing(&cfg, jobs)?;
            for f in &r.families {
                let t = f.t.map_or_else(|| "discrete".to_string(), |t| format!("t={t}"));
                let c = f.crossing.map_or_else(|| "none".to_string(), |c| c.to_string());
                say!("{t:<12} violations {:<4} median layers to threshold {c}", f.total_violations());
            }
            let mut crossings = String::from("family,t,crossing,mean_curve_crossing,violations\n");
            for f in &r.families {
                let opt = |x: Option<usize>| x.map_or_else(String::new, |c| c.to_string());
                crossings += &format!(
                    "{},{},{},{},{}\n",
                    f.label(),
                    f.t.map_or_else(String::new, fmt_f),
                    opt(f.crossing),
                    opt(f.mean_curve_crossing),
                    f.total_violations()
                );
            }
            let outputs = vec![("oversmooth.csv".to_string(), r.to_csv()?), ("oversmooth_crossings.csv".into(), crossings)];
            ("oversmooth", config_value(&cfg), outputs, r.total_violations(), jobs)
        }
        ExperimentKind::Stability => {
            let cfg: StabilityConfig = load_config(cfg_path)?;
            let jobs = jobs_for(&a.env, cfg.realizations)?;
            let r = run_stability(&cfg, jobs)?;
            for c in &r.cells {
                say!(
                    "snr1 {:>4} snr2 {:>4} mean gap {} mean error {} violations {}",
                    c.snr1.to_string(),
                    c.snr2.to_string(),
                    fmt_f(c.mean_gap),
                    fmt_f(c.mean_error),
                    c.violations
                );
            }
            let outputs = vec![("stability.csv".to_string(), r.to_csv()?), ("stability_cells.csv".into(), r.cells_csv()?)];
            ("stability", config_value(&cfg), outputs, r.violations(), jobs)
        }
        ExperimentKind::Trajectory => {
            let cfg: TrajectoryConfig = load_config(cfg_path)?;
            let jobs = jobs_for(&a.env, cfg.realizations)?;
            let r = run_trajectory(&cfg, jobs)?;
            say!(
                "test accuracy {} (std {}), uniform guess {}, untrained {}",
                fmt_f(r.mean_accuracy),
                fmt_f(r.std_accuracy),
                fmt_f(r.mean_uniform),
                fmt_f(r.mean_untrained)
            );
            ("trajectory", config_value(&cfg), vec![("trajectory.csv".to_string(), r.to_csv()?)], 0, jobs)
        }
    };
    let payload = json!({ "command": "run", "experiment": name, "config": payload.take(), "violations": violations });
    write_outputs(&dir, payload, &outputs, started, clock, Some(jobs))?;
    if a.strict && violations > 0 {
        return Err(Failure::Runtime(format!("{violations} bound violations")));
    }
    Ok(())
}

pub fn inspect(a: &InspectArgs) -> Outcome {
    if a.level > 2 {
        return Err(Failure::Usage(format!("--level: must be 0, 1 or 2, got {}", a.level)));
    }
    if let Some(t) = a.tau.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Failure::Usage(format!("--tau: values must lie in (0, 1), got {t}")));
    }
    let complex = load_complex(&a.complex)?;
    let ops = BoundaryMaps::from_complex(&complex).hodge(a.level)?;
    let kind = OperatorKind::from(a.op);
    let s = eig_sym(&kind.pick(&ops))?;
    say!("level {} operator {:?} size {}", a.level, kind, s.len());
    say!("eigenvalues (ascending):");
    for l in &s.eigenvalues {
        say!("  {}", fmt_f(*l));
    }
    say!("lambda_max {}", fmt_f(s.lambda_max()));
    say!("lambda_min_nonzero {}", s.lambda_min_nonzero().map_or_else(|| "-".to_string(), fmt_f));
    match spectral_entropy_select(&s.eigenvalues, a.tau[0]) {
        Ok(first) => {
            say!("spectral entropy {}", fmt_f(first.entropy));
            say!("tau K");
            for &tau in &a.tau {
                say!("{tau} {}", spectral_entropy_select(&s.eigenvalues, tau)?.k);
            }
        }
        Err(cosimo::Error::Undefined(m)) => say!("spectral entropy undefined: {m}"),
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn trajectory_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrajectoryConfig, Failure> {
    let mut cfg: TrajectoryConfig = load_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Outcome {
    let started = SystemTime::now();
    let clock = Instant::now();
    let cfg = trajectory_config(a.config.as_deref(), a.seed)?;
    let complex = load_complex(&a.complex)?;
    let task = TrajectoryTask::new(&cfg, &complex, 0)?;
    let mut net = cfg.initial_network(0)?;
    let trace = train_network(&mut net, &task.ctx, &task.train_set, &task.loss(), &cfg.train_config(0))?;
    let train_acc = task.accuracy(&net, &task.train_set)?;
    let test_acc = task.accuracy(&net, &task.test_set)?;
    say!("final loss {}", fmt_f(trace.final_loss));
    say!("train accuracy {}, test accuracy {}, uniform guess {}", fmt_f(train_acc), fmt_f(test_acc), fmt_f(task.uniform_accuracy()));

    let mut losses = String::from("epoch,loss\n");
    for (i, l) in trace.losses.iter().enumerate() {
        losses += &format!("{},{}\n", i + 1, fmt_f(*l));
    }
    let ckpt = Checkpoint::new(&net, &task.ctx, &complex);
    let ckpt_text = serde_json::to_string_pretty(&ckpt).map_err(|e| Failure::Runtime(e.to_string()))? + "\n";
    let dir = a.out.clone().unwrap_or_else(|| a.env.out_dir.clone());
    let payload = json!({
        "command": "train",
        "config": config_value(&cfg),
        "complex_checksum": complex.checksum(),
        "train_accuracy": fmt_f(train_acc),
        "test_accuracy": fmt_f(test_acc),
    });
    let outputs = vec![("checkpoint.json".to_string(), ckpt_text), ("train_loss.csv".to_string(), losses)];
    write_outputs(&dir, payload, &outputs, started, clock, None)
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let mut cfg = trajectory_config(a.config.as_deref(), a.seed)?;
    let complex = load_complex(&a.complex)?;
    read_input(&a.checkpoint)?;
    let ckpt = Checkpoint::load(&a.checkpoint)
        .map_err(|e| Failure::Usage(format!("{} is not a valid checkpoint: {e}", a.checkpoint.display())))?;
    ckpt.check_complex(&complex)?;
    cfg.truncation = ckpt.truncation.clone();
    let task = TrajectoryTask::new(&cfg, &complex, 0)?;
    let report = json!({
        "test_size": task.test_idx.len(),
        "test_accuracy": fmt_f(task.accuracy(&ckpt.network, &task.test_set)?),
        "train_accuracy": fmt_f(task.accuracy(&ckpt.network, &task.train_set)?),
        "uniform_accuracy": fmt_f(task.uniform_accuracy()),
    });
    say!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
