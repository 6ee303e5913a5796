use std::path::Path;
use std::process::{Command, Output};

use defgpa::geom::{Dataset, PointCloud, View, Visibility};
use defgpa::io;
use defgpa::synth::{self, Deformation, PoseModel, ShapeModel, SynthConfig};
use nalgebra::DMatrix;

fn defgpa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defgpa"))
        .args(args)
        .env("DEFGPA_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn small_config(seed: u64) -> SynthConfig {
    SynthConfig {
        m: 30,
        n: 6,
        d: 3,
        shape: ShapeModel::SphereSamples {
            radii: vec![50.0, 35.0, 25.0],
        },
        deform: Deformation::None,
        noise_sigma: 0.0,
        drop_fraction: 0.0,
        pose_model: PoseModel::RandomRigid,
        seed,
        test_points: 0,
        extent: 100.0,
    }
}

/// Planar views with a small in-plane bend, each rotated out of the plane.
fn flat_dataset(dir: &Path) {
    let (m, n) = (25, 5);
    let views = (0..n)
        .map(|t| {
            let pts = DMatrix::from_fn(3, m, |k, j| {
                let (u, v) = ((j % 5) as f64 * 10.0, (j / 5) as f64 * 10.0);
                let bend = 0.3 * ((u + v) / 15.0 + t as f64).sin();
                let (c, s) = ((0.4 * t as f64).cos(), (0.4 * t as f64).sin());
                match k {
                    0 => u + bend,
                    1 => c * (v - bend),
                    _ => s * (v - bend),
                }
            });
            View::new(t, PointCloud::new(pts).unwrap(), Visibility::full(m)).unwrap()
        })
        .collect();
    let ds = Dataset::new(3, m, views).unwrap();
    io::save_dataset(&ds, dir, None).unwrap();
}

#[test]
fn unknown_flag_exits_with_usage_error() {
    let out = defgpa(&["register", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = defgpa(&["register", "--dataset", arg(&missing), "--out", arg(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flat_views_register_with_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flat");
    flat_dataset(&data);
    let results = dir.path().join("results");
    let out = defgpa(&["register", "--dataset", arg(&data), "--out", arg(&results)]);
    assert!(out.status.success(), "stderr: {}", text(&out.stderr));
    assert!(text(&out.stderr).contains("flat view"), "stderr: {}", text(&out.stderr));
    assert!(results.join(io::TRANSFORMS_FILE).exists());

    let strict = defgpa(&["register", "--dataset", arg(&data), "--strict", "--out", arg(&results)]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn check_reports_zero_deformation() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = synth::generate(&small_config(4)).unwrap();
    io::save_dataset(&ds, dir.path(), None).unwrap();
    let out = defgpa(&["check", "--dataset", arg(dir.path())]);
    assert!(out.status.success(), "stderr: {}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("d+1 near-zero eigenvalues"), "{stdout}");
}

#[test]
fn synth_register_eval_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        deform: Deformation::GaussianBumps {
            count: 3,
            amplitude: 6.0,
            width: 20.0,
        },
        noise_sigma: 0.5,
        drop_fraction: 0.2,
        test_points: 15,
        ..small_config(0)
    };
    let cfg_path = dir.path().join("synth.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let mut reports = Vec::new();
    for run in 0..2 {
        let root = dir.path().join(format!("run{run}"));
        let data = root.join("data");
        let out = defgpa(&["synth", "--config", arg(&cfg_path), "--seed", "11", "--out", arg(&data)]);
        assert!(out.status.success(), "stderr: {}", text(&out.stderr));
        let split = data.join("split.json");
        assert!(split.exists());
        let results = root.join("results");
        let out = defgpa(&[
            "register",
            "--dataset",
            arg(&data),
            "--method",
            "tps",
            "--test-split",
            arg(&split),
            "--out",
            arg(&results),
        ]);
        assert!(out.status.success(), "stderr: {}", text(&out.stderr));
        let report = root.join("report.json");
        let out = defgpa(&[
            "eval",
            "--dataset",
            arg(&data),
            "--results",
            arg(&results),
            "--test-split",
            arg(&split),
            "--out",
            arg(&report),
        ]);
        assert!(out.status.success(), "stderr: {}", text(&out.stderr));
        reports.push(io::load_report(&report).unwrap());
    }
    assert_eq!(reports[0].per_point.len(), 15);
    assert!(reports[0].same_results(&reports[1]));
}

#[test]
fn bench_writes_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = defgpa(&["bench", "--seed", "1", "--out", arg(&csv)]);
    assert!(out.status.success(), "stderr: {}", text(&out.stderr));
    let body = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "method,min,max,mean");
    let methods: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["rigid", "affine", "tps", "kernel"]);
    for line in &lines[1..] {
        let values: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), 3);
        assert!(values[0] <= values[2] && values[2] <= values[1]);
    }
}
