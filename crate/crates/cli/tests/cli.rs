use std::path::Path;
use std::process::{Command, Output};

fn cosimo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cosimo"))
        .args(args)
        .current_dir(dir)
        .env_remove("COSIMO_OUT_DIR")
        .env_remove("COSIMO_JOBS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const TRIANGLE: &str = r#"{"vertices":[0,1,2],"edges":[[0,1],[0,2],[1,2]],"triangles":[[0,1,2]]}"#;

#[test]
fn exit_code_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "bad.json", r#"{"realizations": 0, "complex": {"points": "x"}}"#);
    write(d, "invalid.json", r#"{"realizations": 0, "layers": 0}"#);
    write(d, "tri.json", TRIANGLE);
    let cases: &[(&[&str], i32)] = &[
        (&["generate", "--n", "12", "--seed", "1", "--out", "c.json"], 0),
        (&["generate", "--n", "2"], 2),
        (&["generate", "--holes", "1,2"], 2),
        (&["generate", "--bogus"], 2),
        (&[], 2),
        (&["inspect", "--complex", "missing.json"], 2),
        (&["inspect", "--complex", "tri.json", "--level", "5"], 2),
        (&["inspect", "--complex", "tri.json", "--tau", "1.5"], 2),
        (&["inspect", "--complex", "bad.json"], 2),
        (&["run", "--experiment", "nope"], 2),
        (&["run", "--experiment", "stability", "--config", "missing.json"], 2),
        (&["run", "--experiment", "stability", "--config", "bad.json"], 2),
        (&["run", "--experiment", "oversmooth", "--config", "invalid.json"], 2),
        (&["eval", "--checkpoint", "missing.json", "--complex", "tri.json"], 2),
        (&["--help"], 0),
    ];
    for (args, expected) in cases {
        let o = cosimo(d, args);
        assert_eq!(code(&o), *expected, "{args:?}: {}", stderr(&o));
    }

    let o = cosimo(d, &["generate", "--n", "2"]);
    assert!(stderr(&o).contains("need at least 3 points"), "{}", stderr(&o));
    let o = cosimo(d, &["run", "--experiment", "stability", "--config", "bad.json"]);
    assert!(stderr(&o).contains("complex.points"), "{}", stderr(&o));
    let o = cosimo(d, &["run", "--experiment", "oversmooth", "--config", "invalid.json"]);
    assert!(stderr(&o).contains("realizations") && stderr(&o).contains("layers"), "{}", stderr(&o));
}

#[test]
fn generate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let a = cosimo(d, &["generate", "--n", "30", "--seed", "7", "--out", "a.json"]);
    let b = cosimo(d, &["generate", "--n", "30", "--seed", "7", "--out", "b.json"]);
    assert_eq!((code(&a), code(&b)), (0, 0));
    assert_eq!(read(d.join("a.json")), read(d.join("b.json")));
    assert!(stdout(&a).contains("euler characteristic"));
    assert!(stdout(&a).contains("betti numbers 1 "));

    cosimo(d, &["generate", "--n", "30", "--seed", "8", "--out", "c.json"]);
    assert_ne!(read(d.join("a.json")), read(d.join("c.json")));
}

#[test]
fn default_holes_remove_triangles() {
    let tmp = tempfile::tempdir().unwrap();
    let mut removed = 0;
    for seed in 0..10 {
        let o = cosimo(tmp.path(), &["generate", "--n", "30", "--seed", &seed.to_string(), "--out", "c.json"]);
        let s = stdout(&o);
        let n: usize = s.split('(').nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
        removed += (n > 0) as usize;
    }
    assert!(removed >= 8, "{removed}/10 seeds lost a triangle");
}

#[test]
fn env_overrides_output_dir_and_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cosimo"))
        .args(["generate", "--n", "10"])
        .current_dir(tmp.path())
        .env("COSIMO_OUT_DIR", "from_env")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(tmp.path().join("from_env/complex.json").exists());

    let o = Command::new(env!("CARGO_BIN_EXE_cosimo"))
        .args(["run", "--experiment", "oversmooth"])
        .current_dir(tmp.path())
        .env("COSIMO_JOBS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn inspect_reports_spectrum_and_entropy() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "tri.json", TRIANGLE);
    let o = cosimo(d, &["inspect", "--complex", "tri.json", "--level", "0", "--op", "full"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    let eig: Vec<f64> = s
        .lines()
        .skip_while(|l| !l.starts_with("eigenvalues"))
        .skip(1)
        .take_while(|l| l.starts_with("  "))
        .map(|l| l.trim().parse().unwrap())
        .collect();
    assert_eq!(eig.len(), 3);
    assert!(eig.windows(2).all(|w| w[0] <= w[1]));
    assert!(eig[0].abs() < 1e-12 && (eig[2] - 3.0).abs() < 1e-10);

    // Nonzero spectrum {3, 3}: entropy ln 2.
    let h: f64 = s.lines().find_map(|l| l.strip_prefix("spectral entropy ")).unwrap().parse().unwrap();
    assert!((h - 2f64.ln()).abs() < 1e-10, "{h}");

    cosimo(d, &["generate", "--n", "30", "--seed", "2", "--out", "c.json"]);
    let o = cosimo(d, &["inspect", "--complex", "c.json", "--tau", "0.01,0.05,0.1,0.3,0.6,0.9"]);
    let ks: Vec<usize> = stdout(&o)
        .lines()
        .skip_while(|l| *l != "tau K")
        .skip(1)
        .map(|l| l.split(' ').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(ks.len(), 6);
    assert!(ks.windows(2).all(|w| w[0] >= w[1]), "{ks:?}");
}

fn payload(dir: &Path) -> serde_json::Value {
    let m: serde_json::Value = serde_json::from_str(&read(dir.join("manifest.json"))).unwrap();
    assert!(m["run"]["wall_seconds"].is_number());
    m["payload"].clone()
}

#[test]
fn run_outputs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "o.json", r#"{"realizations": 1, "seed": 3}"#);
    for out in ["a", "b"] {
        let o = cosimo(d, &["run", "--experiment", "oversmooth", "--config", "o.json", "--out", out, "--strict"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let csv = read(d.join("a/oversmooth.csv"));
    assert_eq!(csv, read(d.join("b/oversmooth.csv")));
    assert_eq!(read(d.join("a/oversmooth_crossings.csv")), read(d.join("b/oversmooth_crossings.csv")));
    assert_eq!(payload(&d.join("a")), payload(&d.join("b")));
    // One realization: 100 layers for the baseline and each of the four t values.
    assert_eq!(csv.lines().count(), 1 + 5 * 100);
    assert_eq!(payload(&d.join("a"))["violations"], 0);

    write(d, "s.json", r#"{"realizations": 2, "complex": {"points": 12}, "train": {"step_size": 0.05, "epochs": 5}}"#);
    let o = cosimo(d, &["run", "--experiment", "stability", "--config", "s.json", "--out", "s", "--strict"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(d.join("s/stability.csv")).lines().count(), 1 + 16 * 2);
    assert_eq!(read(d.join("s/stability_cells.csv")).lines().count(), 1 + 16);
}

#[test]
fn train_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    cosimo(d, &["generate", "--n", "25", "--seed", "4", "--out", "c.json"]);
    cosimo(d, &["generate", "--n", "25", "--seed", "5", "--out", "other.json"]);
    write(d, "t.json", r#"{"trajectories": 80, "features": 4, "train": {"step_size": 0.1, "epochs": 10}}"#);
    let o = cosimo(d, &["train", "--complex", "c.json", "--config", "t.json", "--out", "m"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(d.join("m/train_loss.csv")).lines().count(), 11);

    let o = cosimo(d, &["eval", "--checkpoint", "m/checkpoint.json", "--complex", "c.json", "--config", "t.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["test_accuracy"], payload(&d.join("m"))["test_accuracy"]);

    let o = cosimo(d, &["eval", "--checkpoint", "m/checkpoint.json", "--complex", "other.json", "--config", "t.json"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}
