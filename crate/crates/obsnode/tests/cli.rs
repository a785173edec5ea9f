use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn obsnode(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obsnode"))
        .args(args)
        .current_dir(dir)
        .env_remove("OBSNODE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = obsnode(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) {
    fs::write(dir.join(name), serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn cancer_sim(seed: u64, out: &str, n: usize, gamma: f64) -> Value {
    json!({
        "format_version": 1,
        "seed": seed,
        "output_dir": out,
        "simulator": {"cancer": {
            "n_patients": n, "n_cycles": 6, "cycle_days": 30.0, "dt": 0.25,
            "gamma": gamma, "obs_every": 1.0
        }}
    })
}

fn train_cfg(data: &str, run: &str, epochs: usize) -> Value {
    json!({
        "format_version": 1,
        "seed": 5,
        "dataset_dir": data,
        "run_dir": run,
        "model": {
            "d_y": 2, "m": 2, "d_a": 2,
            "phi_hidden_dim": 8, "phi_layers": 2, "phi_activation": "tanh",
            "encoder_hidden_dim": 8,
            "rollout_mode": "long_horizon", "recursive_chunk": 1.0,
            "integration": {"method": "rk4", "step_size": 0.1, "max_steps": 100000},
            "time_scale": 30.0, "treatment_scale": [14.0, 3.0]
        },
        "train": {
            "batch_size": 4, "learning_rate": 0.005, "epochs": epochs,
            "decision_time_grid": [30.0, 60.0, 90.0],
            "decision_sampling": "uniform_random", "t_f": 180.0,
            "train_horizon": 60.0, "grad_clip": 10.0
        }
    })
}

/// Every file but the echoed config, which names its own output directory.
fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() != "config.json")
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

/// Simulates 10 units and trains 5 epochs into `run`.
fn trained(dir: &Path) {
    write_json(dir, "sim.json", &cancer_sim(7, "data", 10, 4.0));
    ok(dir, &["simulate", "--config", "sim.json"]);
    write_json(dir, "train.json", &train_cfg("data", "run", 5));
    ok(dir, &["train", "--config", "train.json"]);
}

#[test]
fn simulate_is_byte_identical_and_sized() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_json(d, "a.json", &cancer_sim(7, "a", 3, 4.0));
    write_json(d, "b.json", &cancer_sim(7, "b", 3, 4.0));
    let out = ok(d, &["simulate", "--config", "a.json"]);
    ok(d, &["simulate", "--config", "b.json"]);
    assert!(out.contains("units: 3"), "{out}");
    assert_eq!(files(&d.join("a")), files(&d.join("b")));
    let lines = fs::read_to_string(d.join("a/units.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[test]
fn stronger_policy_raises_treatment_outcome_correlation() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let corr = |gamma: f64| {
        let name = format!("g{gamma}");
        let mut cfg = cancer_sim(1, &name, 300, gamma);
        cfg["simulator"]["cancer"]["n_cycles"] = json!(12);
        write_json(d, "sim.json", &cfg);
        let out = ok(d, &["simulate", "--config", "sim.json"]);
        let line = out
            .lines()
            .find(|l| l.starts_with("treatment-outcome correlation"))
            .unwrap();
        line.rsplit(' ').next().unwrap().parse::<f64>().unwrap()
    };
    let (weak, strong) = (corr(1.0), corr(8.0));
    assert!(strong > weak, "γ=8 gives {strong}, γ=1 gives {weak}");
}

#[test]
fn configs_are_strict() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let mut cfg = cancer_sim(1, "x", 3, 4.0);
    cfg["extra"] = json!(1);
    write_json(d, "unknown.json", &cfg);
    let mut cfg = cancer_sim(1, "x", 3, 4.0);
    cfg["format_version"] = json!(2);
    write_json(d, "version.json", &cfg);
    let mut cfg = cancer_sim(1, "x", 3, 4.0);
    cfg["simulator"]["cancer"]["seed"] = json!(3);
    write_json(d, "seed.json", &cfg);
    fs::write(d.join("broken.json"), "{\n  \"format_version\": 1,\n  oops\n}").unwrap();
    for (file, needle) in [
        ("unknown.json", "extra"),
        ("version.json", "format_version 2"),
        ("seed.json", "seed"),
        ("broken.json", "line 3"),
    ] {
        let out = obsnode(d, &["simulate", "--config", file]);
        assert_eq!(out.status.code(), Some(2), "{file}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{file}: {err}");
    }
    assert!(!d.join("x").exists());
}

#[test]
fn train_smoke_resume_and_rerun() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let start = std::time::Instant::now();
    trained(d);
    assert!(start.elapsed().as_secs() < 60);
    let metrics = fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("epoch,train_loss,val_loss"));
    assert_eq!(metrics.lines().count(), 6);

    // Same config, fresh directory: identical bytes apart from the echoed run_dir.
    write_json(d, "again.json", &train_cfg("data", "again", 5));
    ok(d, &["train", "--config", "again.json"]);
    for f in ["metrics.csv", "checkpoint.json"] {
        assert_eq!(
            fs::read(d.join("run").join(f)).unwrap(),
            fs::read(d.join("again").join(f)).unwrap(),
            "{f}"
        );
    }

    let mut resume = train_cfg("data", "resumed", 0);
    resume["resume_from"] = json!("run");
    write_json(d, "resume.json", &resume);
    ok(d, &["train", "--config", "resume.json"]);
    assert_eq!(fs::read_to_string(d.join("resumed/metrics.csv")).unwrap(), metrics);
    assert_eq!(
        fs::read(d.join("run/checkpoint.json")).unwrap(),
        fs::read(d.join("resumed/checkpoint.json")).unwrap()
    );

    // The echoed config reruns to the same outputs.
    let echoed: Value = serde_json::from_str(&fs::read_to_string(d.join("run/config.json")).unwrap()).unwrap();
    let mut echoed = echoed;
    echoed["run_dir"] = json!("echo");
    write_json(d, "echo.json", &echoed);
    ok(d, &["train", "--config", "echo.json"]);
    assert_eq!(
        fs::read(d.join("run/metrics.csv")).unwrap(),
        fs::read(d.join("echo/metrics.csv")).unwrap()
    );
}

#[test]
fn missing_dataset_exits_2_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_json(d, "train.json", &train_cfg("no_such_dataset", "run", 1));
    let out = obsnode(d, &["train", "--config", "train.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_dataset"));
}

#[test]
fn forecast_with_factual_treatments_reproduces_evaluate() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    trained(d);
    write_json(
        d,
        "eval.json",
        &json!({
            "format_version": 1, "dataset_dir": "data", "checkpoint": "run/checkpoint.json",
            "output_dir": "eval", "assimilation_times": [30.0, 90.0], "horizons": [30.0, 60.0],
            "heatmap": {"cap": 1.0, "cell": 2}, "predictions": true
        }),
    );
    ok(d, &["evaluate", "--config", "eval.json"]);
    let grid = fs::read_to_string(d.join("eval/rmse.csv")).unwrap();
    assert!(grid.starts_with("t_c,horizon,component,rmse,n_points\n"));
    assert!(fs::read(d.join("eval/heatmap_component_1.pgm"))
        .unwrap()
        .starts_with(b"P5\n4 4\n255\n"));

    let preds = fs::read_to_string(d.join("eval/predictions.csv")).unwrap();
    let unit = preds.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    ok(
        d,
        &[
            "treatment",
            "--dataset",
            "data",
            "--unit",
            &unit,
            "--output",
            "fact.csv",
        ],
    );
    for t_c in ["30", "90"] {
        let fc = ok(
            d,
            &[
                "forecast",
                "--checkpoint",
                "run/checkpoint.json",
                "--dataset",
                "data",
                "--unit",
                &unit,
                "--treatment",
                "fact.csv",
                "--t-c",
                t_c,
                "--horizon",
                "60",
            ],
        );
        let expected: Vec<String> = preds
            .lines()
            .filter(|l| l.starts_with(&format!("{unit},{t_c},")))
            .map(|l| l.splitn(3, ',').nth(2).unwrap().to_string())
            .collect();
        let got: Vec<String> = fc.lines().skip(1).map(String::from).collect();
        assert!(!got.is_empty());
        assert_eq!(got, expected, "t_c = {t_c}");
    }

    // A hypothetical path changes the forecast.
    fs::write(d.join("none.csv"), "start_time,component_1,component_2\n0,0,0\n").unwrap();
    let fc = ok(
        d,
        &[
            "forecast",
            "--checkpoint",
            "run/checkpoint.json",
            "--dataset",
            "data",
            "--unit",
            &unit,
            "--treatment",
            "none.csv",
            "--t-c",
            "30",
            "--times",
            "60,90",
        ],
    );
    assert_eq!(fc.lines().count(), 3);
    assert!(fc.starts_with("time,component_1,component_2\n60,"));

    for (file, body) in [
        ("short.csv", "start_time,component_1\n0,1\n"),
        ("nan.csv", "start_time,component_1,component_2\n0,1,x\n"),
        ("order.csv", "start_time,component_1,component_2\n5,1,1\n2,1,1\n"),
    ] {
        fs::write(d.join(file), body).unwrap();
        let out = obsnode(
            d,
            &[
                "forecast",
                "--checkpoint",
                "run/checkpoint.json",
                "--dataset",
                "data",
                "--unit",
                &unit,
                "--treatment",
                file,
                "--t-c",
                "30",
                "--horizon",
                "30",
            ],
        );
        assert_eq!(out.status.code(), Some(3), "{file}");
    }
}

#[test]
fn verify_identification_default_report() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["verify-identification", "--output", "a.json"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("a.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], json!(true));
    assert_eq!(report["instances"].as_array().unwrap().len(), 200);
    for inst in report["instances"].as_array().unwrap() {
        assert!(inst["max_deviation"].as_f64().unwrap() < 1e-10);
    }
    assert!(report["witness"]["observational_tv"].as_f64().unwrap() < 1e-12);
    assert!(report["witness"]["interventional_tv"].as_f64().unwrap() >= 0.05);

    // Worker count does not change the report.
    let out = Command::new(env!("CARGO_BIN_EXE_obsnode"))
        .args(["verify-identification", "--output", "b.json"])
        .current_dir(d)
        .env("OBSNODE_THREADS", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());

    let out = Command::new(env!("CARGO_BIN_EXE_obsnode"))
        .args(["verify-identification"])
        .current_dir(d)
        .env("OBSNODE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_fails_loudly() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = ok(d, &["gradcheck"]);
    assert!(out.contains("100/100"), "{out}");
    let out = obsnode(d, &["gradcheck", "--tolerance", "1e-300"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn shipped_configs_load() {
    use obsnode::config::{load, EvaluateConfig, SimulateConfig, TrainRunConfig, VerifyConfig};
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for case in ["cancer", "semi"] {
        let sim: SimulateConfig = load(&root.join(case).join("simulate.json")).unwrap();
        sim.simulator().unwrap();
        let run: TrainRunConfig = load(&root.join(case).join("train.json")).unwrap();
        run.train_config().unwrap().validate().unwrap();
        run.model.validate().unwrap();
        assert_eq!(run.dataset_dir, sim.output_dir);
        let eval: EvaluateConfig = load(&root.join(case).join("evaluate.json")).unwrap();
        assert_eq!(eval.checkpoint, run.run_dir.join("checkpoint.json"));
    }
    let verify: VerifyConfig = load(&root.join("verify.json")).unwrap();
    assert_eq!(verify, VerifyConfig::default());
}
