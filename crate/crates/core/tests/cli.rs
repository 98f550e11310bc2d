use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kmn::evalkit::integrate_density;

fn kmn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmn"))
        .args(args)
        .output()
        .expect("spawn kmn")
}

fn ok(args: &[&str]) {
    let out = kmn(args);
    assert!(
        out.status.success(),
        "kmn {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Fixture { _dir: dir, root }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn simulate(&self, name: &str, experiment: &str) -> PathBuf {
        let out = self.p(name);
        ok(&[
            "simulate", "--experiment", experiment, "--n-train", "30", "--n-valid", "4",
            "--duration", "1", "--seed", "5", "--out", s(&out),
        ]);
        out
    }

    fn train(&self, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
        let out = self.p(name);
        let mut args = vec![
            "train", "--data", s(data), "--window", "24", "--hidden", "12", "--epochs", "1",
            "--eval-every", "20", "--seed", "2", "--out", s(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn simulate_is_deterministic() {
    let f = Fixture::new();
    let a = f.simulate("a", "oscillator");
    let b = f.simulate("b", "oscillator");
    for file in ["train.jsonl", "valid.jsonl", "manifest.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["params"]["dt"], 0.01);
    assert_eq!(manifest["master_seed"], 5);
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 5);
    assert_eq!(run["flags"]["n_train"], 30);
}

#[test]
fn phase_latents_are_wrapped() {
    let f = Fixture::new();
    let d = f.simulate("phase", "phase");
    let pi = std::f64::consts::PI;
    for line in fs::read_to_string(d.join("train.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for x in v["latent"].as_array().unwrap() {
            let x = x.as_f64().unwrap();
            assert!(x > -pi && x <= pi, "{x}");
        }
    }
}

#[test]
fn manifest_replays_a_run() {
    let f = Fixture::new();
    let a = f.simulate("a", "oscillator");
    let b = f.p("b");
    ok(&["simulate", "--config", s(&a.join("run_manifest.json")), "--out", s(&b)]);
    assert_eq!(
        fs::read(a.join("train.jsonl")).unwrap(),
        fs::read(b.join("train.jsonl")).unwrap()
    );
    let c = f.p("c");
    ok(&["simulate", "--config", s(&a.join("run_manifest.json")), "--seed", "6", "--out", s(&c)]);
    assert_ne!(
        fs::read(a.join("train.jsonl")).unwrap(),
        fs::read(c.join("train.jsonl")).unwrap()
    );
}

#[test]
fn gaussian_kernels_on_phase_data_are_rejected() {
    let f = Fixture::new();
    let d = f.simulate("phase", "phase");
    let out = kmn(&[
        "train", "--data", s(&d), "--head", "kmn", "--kernel", "gaussian", "--out",
        s(&f.p("t")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Circle"));
    assert!(!f.p("t").join("checkpoint.json").exists());
}

#[test]
fn quantized_head_has_48_bins() {
    let f = Fixture::new();
    let d = f.simulate("d", "oscillator");
    let t = f.train(&d, "q", &["--head", "quantized", "--bin-size", "0.25"]);
    let ckpt: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ckpt["centers"].as_array().unwrap().len(), 48);
    assert_eq!(*ckpt["layer_dims"].as_array().unwrap().last().unwrap(), 48);
    let edges = ckpt["kernels"]["params"].as_array().unwrap();
    assert_eq!(edges.first().unwrap().as_f64(), Some(-6.0));
    assert_eq!(edges.last().unwrap().as_f64(), Some(6.0));
}

#[test]
fn curves_and_evaluation() {
    let f = Fixture::new();
    let d = f.simulate("d", "oscillator");
    let a = f.train(&d, "a", &[]);
    let b = f.train(&d, "b", &["--head", "quantized"]);

    let rows = csv_rows(&a.join("curves.csv"));
    let mut last = [0usize, 0usize];
    for r in &rows {
        let it: usize = r[0].parse().unwrap();
        let k = if r[1] == "train" { 0 } else { 1 };
        assert!(it > last[k], "iterations must increase per split");
        last[k] = it;
        r[2].parse::<f64>().unwrap();
    }

    let args = |out: &Path| {
        vec![
            "evaluate".to_string(),
            "--data".into(),
            s(&d).into(),
            "--models".into(),
            s(&a.join("checkpoint.json")).into(),
            s(&b.join("checkpoint.json")).into(),
            "--names".into(),
            "kmn,quantized".into(),
            "--ekf".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let e1 = f.p("e1");
    let e2 = f.p("e2");
    for e in [&e1, &e2] {
        let a: Vec<String> = args(e);
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let text = fs::read_to_string(e1.join("scatter.csv")).unwrap();
    assert_eq!(text, fs::read_to_string(e2.join("scatter.csv")).unwrap());
    assert!(text.starts_with("trial_id,model,mean_nll\n"));
    assert!(text.contains("win_rate,kmn>quantized,"));
    assert!(text.contains("win_rate,kmn>ekf,"));
    // 4 trials x 3 models + 3 means + 3 pairs
    assert_eq!(text.lines().count(), 1 + 12 + 3 + 3);
}

#[test]
fn density_slices_integrate_to_one() {
    let f = Fixture::new();
    let d = f.simulate("d", "oscillator");
    let t = f.train(&d, "t", &[]);
    let out = f.p("dens");
    ok(&[
        "density", "--model", s(&t.join("checkpoint.json")), "--data", s(&d), "--trial", "1",
        "--times", "30,50,99", "--grid-points", "4001", "--out", s(&out),
    ]);
    let rows = csv_rows(&out.join("density.csv"));
    assert_eq!(rows.len(), 3 * 4001);
    for slice in rows.chunks(4001) {
        let xs: Vec<f64> = slice.iter().map(|r| r[1].parse().unwrap()).collect();
        let ds: Vec<f64> = slice.iter().map(|r| r[2].parse().unwrap()).collect();
        let (lo, hi) = (xs[0], xs[xs.len() - 1]);
        let h = (hi - lo) / 4000.0;
        let mass = integrate_density(|x| ds[((x - lo) / h).round() as usize], lo, hi, 4001)
            .unwrap();
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    }

    let bad = kmn(&[
        "density", "--model", s(&t.join("checkpoint.json")), "--data", s(&d), "--times", "5",
        "--out", s(&f.p("bad")),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn circle_density_grid() {
    let f = Fixture::new();
    let d = f.simulate("d", "phase");
    let t = f.train(&d, "t", &["--delta", "0.2", "--kernel-scales", "0.1,0.3"]);
    let out = f.p("dens");
    ok(&[
        "density", "--model", s(&t.join("checkpoint.json")), "--data", s(&d), "--times", "40",
        "--grid-points", "360", "--out", s(&out),
    ]);
    let pi = std::f64::consts::PI;
    let rows = csv_rows(&out.join("density.csv"));
    assert_eq!(rows.len(), 360);
    for r in rows {
        let x: f64 = r[1].parse().unwrap();
        assert!(x > -pi && x <= pi);
    }
}

#[test]
fn sampling() {
    let f = Fixture::new();
    let d = f.simulate("d", "oscillator");
    let t = f.train(&d, "t", &[]);
    let ckpt = t.join("checkpoint.json");
    let run = |name: &str, n: &str| {
        let out = f.p(name);
        ok(&[
            "sample", "--model", s(&ckpt), "--data", s(&d), "--time", "60", "--n", n, "--seed",
            "4", "--out", s(&out),
        ]);
        fs::read_to_string(out.join("samples.csv")).unwrap()
    };
    assert_eq!(run("empty", "0"), "index,x\n");
    let a = run("a", "500");
    assert_eq!(a, run("b", "500"));
    assert_eq!(a.lines().count(), 501);
}

#[test]
fn sample_histogram_matches_density() {
    let f = Fixture::new();
    let d = f.simulate("d", "oscillator");
    let t = f.train(&d, "t", &[]);
    let ckpt = t.join("checkpoint.json");
    ok(&[
        "sample", "--model", s(&ckpt), "--data", s(&d), "--time", "70", "--n", "100000", "--out",
        s(&f.p("smp")),
    ]);
    let (lo, hi, bins) = (-6.0, 6.0, 240usize);
    ok(&[
        "density", "--model", s(&ckpt), "--data", s(&d), "--trial", "0", "--times", "70",
        "--grid-points", "4801", "--lo=-6", "--hi=6", "--out", s(&f.p("dens")),
    ]);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    let samples = csv_rows(&f.p("smp").join("samples.csv"));
    let mut outside = 0.0;
    for r in &samples {
        let x: f64 = r[1].parse().unwrap();
        let b = ((x - lo) / width).floor();
        if b >= 0.0 && (b as usize) < bins {
            counts[b as usize] += 1.0;
        } else {
            outside += 1.0;
        }
    }
    let n = samples.len() as f64;
    let dens: Vec<f64> = csv_rows(&f.p("dens").join("density.csv"))
        .iter()
        .map(|r| r[2].parse().unwrap())
        .collect();
    // 20 grid intervals per bin; trapezoid mass per bin
    let per = (dens.len() - 1) / bins;
    let h = (hi - lo) / (dens.len() - 1) as f64;
    let mut tv = outside / n;
    for (b, c) in counts.iter().enumerate() {
        let seg = &dens[b * per..=(b + 1) * per];
        let mass: f64 = seg.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        tv += (c / n - mass).abs();
    }
    tv *= 0.5;
    assert!(tv < 0.05, "total variation {tv}");
}

#[test]
fn malformed_window_is_a_parse_error() {
    let f = Fixture::new();
    let d = f.simulate("d", "oscillator");
    let t = f.train(&d, "t", &[]);
    let w = f.p("window.txt");
    fs::write(&w, "0.1, 0.2, abc").unwrap();
    let out = kmn(&[
        "sample", "--model", s(&t.join("checkpoint.json")), "--window-file", s(&w), "--out",
        s(&f.p("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("abc"));

    let good: Vec<String> = (0..24).map(|i| format!("{}", i as f64 * 0.1)).collect();
    fs::write(&w, good.join(" ")).unwrap();
    ok(&[
        "sample", "--model", s(&t.join("checkpoint.json")), "--window-file", s(&w), "--n", "5",
        "--out", s(&f.p("o2")),
    ]);
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let f = Fixture::new();
    let d = f.simulate("d", "oscillator");
    let out = kmn(&[
        "evaluate", "--data", s(&d), "--models", "/nonexistent/ckpt.json", "--out", s(&f.p("e")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/ckpt.json"));
}

#[test]
fn train_determinism_through_the_cli() {
    let f = Fixture::new();
    let d = f.simulate("d", "oscillator");
    let a = f.train(&d, "a", &[]);
    let b = f.train(&d, "b", &[]);
    assert_eq!(
        fs::read(a.join("curves.csv")).unwrap(),
        fs::read(b.join("curves.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("checkpoint.json")).unwrap(),
        fs::read(b.join("checkpoint.json")).unwrap()
    );
}
