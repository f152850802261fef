use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use ssnn_cli::config::{schema_json, DataSource, ExperimentConfig};
use ssnn_cli::data::obtain_data;
use ssnn_cli::pipeline::run_pipeline;
use ssnn_cli::report::{read_runs_file, RunRow};
use ssnn_core::bench::{load_dataset, BoucWenDataSpec, BoucWenParams};
use ssnn_core::lti::LtiModelFile;
use ssnn_core::optim::StopReason;
use ssnn_core::signal::rms;

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ssnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssnn")).args(args).output().expect("binary runs")
}

fn small_config() -> Value {
    let mut spec = BoucWenDataSpec::with_params(BoucWenParams::nominal(), 512, 1);
    spec.sweep.sweep_rate = 300.0;
    json!({
        "schema_version": 1,
        "data": { "bouc-wen": spec },
        "model": { "nx": 3, "nn": 6 },
        "schemes": ["random-gr", "lti-gr"],
        "lm": { "max_epochs": 4 },
        "monte_carlo": { "runs": 3, "base_seed": 5, "workers": 1 },
        "evaluation": { "periods": 2, "sweep_skip": 500 }
    })
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_configs_validate() {
    let mut n = 0;
    for entry in fs::read_dir(repo().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn schema_file_is_current() {
    let path = repo().join("schema/experiment-config.schema.json");
    let current = schema_json();
    if std::env::var_os("UPDATE_SCHEMA").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, &current).unwrap();
    }
    let stored = fs::read_to_string(&path).expect("schema file exists (UPDATE_SCHEMA=1 writes it)");
    assert_eq!(stored, current, "stale schema; rerun with UPDATE_SCHEMA=1");
    let out = ssnn(&["schema"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), current);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = small_config();
    bad["schema_version"] = json!(2);
    let cfg = write_config(dir.path(), &bad);
    assert_eq!(ssnn(&["sweep", "--config", s(&cfg)]).status.code(), Some(1));

    let mut typo = small_config();
    typo["model"]["neurons"] = json!(4);
    let cfg = write_config(dir.path(), &typo);
    assert_eq!(ssnn(&["sweep", "--config", s(&cfg)]).status.code(), Some(1));

    let mut missing = small_config();
    missing["data"] = json!({ "files": {
        "train": "nowhere/train.csv",
        "tests": [{ "name": "t", "path": "nowhere/test.csv", "protocol": { "kind": "transient", "skip": 0 } }],
        "sample_rate": 750.0
    }});
    let cfg = write_config(dir.path(), &missing);
    let out = ssnn(&["sweep", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

fn sweep_into(cfg: &Path, out: &Path) {
    let o = ssnn(&["sweep", "--config", s(cfg), "--out", s(out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

/// Linear interpolation at position (n − 1)q, written out independently of
/// the report module.
fn quantile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = (v.len() - 1) as f64 * q;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[test]
fn sweep_is_deterministic_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    sweep_into(&cfg, &a);
    sweep_into(&cfg, &b);
    for f in ["aggregate.csv", "runs.csv", "lti.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }

    let hash = LtiModelFile::load(a.join("lti.json")).unwrap().model_hash();
    let mut run_files = 0;
    for scheme in ["random-gr", "lti-gr"] {
        for run in 0..3 {
            let p = a.join(format!("runs/{scheme}/run_{run:03}/run.json"));
            let v: Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
            assert_eq!(v["lti_hash"].as_str(), Some(hash.as_str()));
            assert_eq!(v["seed"].as_u64(), Some(5 + run));
            run_files += 1;
        }
    }
    assert_eq!(run_files, 6);

    let rows = read_runs_file(&a.join("runs.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 3 * 2);
    let mut agg = csv::Reader::from_path(a.join("aggregate.csv")).unwrap();
    let mut groups = 0;
    for rec in agg.records() {
        let rec = rec.unwrap();
        let mine: Vec<f64> = rows
            .iter()
            .filter(|r| r.scheme == rec[0] && r.test_record == rec[1] && !r.diverged)
            .map(|r| r.rmse.unwrap())
            .collect();
        assert_eq!(rec[2].parse::<usize>().unwrap(), 3);
        for (col, q) in [(4, 0.5), (5, 0.1), (6, 0.9)] {
            let stored: f64 = rec[col].parse().unwrap();
            assert_eq!(stored, quantile(mine.clone(), q), "{:?} column {col}", &rec);
        }
        groups += 1;
    }
    assert_eq!(groups, 4);

    let summary = dir.path().join("summary");
    let o = ssnn(&["summarize", s(&a.join("runs.csv")), s(&b.join("runs.csv")), "--out", s(&summary)]);
    assert!(o.status.success());
    let pooled: Vec<RunRow> = read_runs_file(&summary.join("runs.csv")).unwrap();
    assert_eq!(pooled.len(), 2 * rows.len());
}

#[test]
fn train_then_evaluate_reproduces_the_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let out = dir.path().join("single");
    let o = ssnn(&["train", "--config", s(&cfg), "--out", s(&out), "--scheme", "lti-gr", "--run", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run_dir = out.join("runs/lti-gr/run_001");
    let run: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("run.json")).unwrap()).unwrap();

    let eval_dir = dir.path().join("eval");
    let o = ssnn(&["evaluate", "--config", s(&cfg), "--out", s(&eval_dir), "--model", s(&run_dir.join("model.json"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval: Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(eval, run["scores"]);
    let epochs = fs::read_to_string(run_dir.join("epochs.csv")).unwrap();
    assert!(epochs.starts_with("epoch,cost,rmse,lambda,accepted"));
}

#[test]
fn generated_records_load_back_as_file_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), &small_config());
    let data_dir = dir.path().join("data");
    let o = ssnn(&["generate-data", "--config", s(&cfg_path), "--out", s(&data_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(data_dir.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["step_halving_error"].as_f64().unwrap() <= 1e-7);

    let mut files = small_config();
    files["data"] = json!({ "files": {
        "train": "data/train.csv",
        "tests": [
            { "name": "multisine", "path": "data/test_multisine.csv", "protocol": { "kind": "periodic", "periods": 2 } },
            { "name": "sweep", "path": "data/test_sweep.csv", "protocol": { "kind": "transient", "skip": 500 } }
        ]
    }});
    let files_cfg = ExperimentConfig::load(write_config(dir.path(), &files)).unwrap();
    let simulated = obtain_data(&ExperimentConfig::load(&cfg_path).unwrap()).unwrap();
    let loaded = obtain_data(&files_cfg).unwrap();
    assert_eq!(loaded.train.u, simulated.train.u);
    assert_eq!(loaded.train.y, simulated.train.y);
    assert_eq!(loaded.train.sample_rate, 750.0);
    for (a, b) in loaded.tests.iter().zip(&simulated.tests) {
        assert_eq!((&a.name, &a.protocol), (&b.name, &b.protocol));
        assert_eq!(a.data.y, b.data.y);
    }
    assert_eq!(load_dataset(data_dir.join("train.csv"), None).unwrap().y, simulated.train.y);
}

/// On a linear oscillator the linear-approximation initialization is already
/// the answer; training must stop on its tolerance with a negligible error.
#[test]
fn linear_system_is_recovered() {
    let params = BoucWenParams::linear(2.0, 200.0, 5e4, 750.0);
    let mut spec = BoucWenDataSpec::with_params(params, 1024, 3);
    spec.sweep.sweep_rate = 300.0;
    let cfg: ExperimentConfig = serde_json::from_value(json!({
        "schema_version": 1,
        "data": { "bouc-wen": spec },
        "model": { "nx": 2, "nn": 4 },
        "schemes": ["lti-gr"],
        "lm": { "max_epochs": 100 },
        "monte_carlo": { "runs": 2, "base_seed": 0, "workers": 1 },
        "evaluation": { "periods": 2, "sweep_skip": 500 }
    }))
    .unwrap();
    cfg.validate().unwrap();
    let DataSource::BoucWen(spec) = &cfg.data else { unreachable!() };
    assert_eq!(spec.params.alpha, 0.0);
    let report = run_pipeline(&cfg, None).unwrap();
    let data = obtain_data(&cfg).unwrap();
    for r in &report.runs {
        assert_eq!(r.stop_reason, Some(StopReason::Tolerance), "run {}", r.run);
        for (score, test) in r.scores.iter().zip(&data.tests) {
            let e = score.rmse.unwrap();
            assert!(e <= 1e-6 * rms(test.data.y.as_slice()), "{}: {e:e}", score.test_record);
        }
    }
}
