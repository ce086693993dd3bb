use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use osal_core::report::{read_csv, AggregateRow, RoundRow, Summary};
use serde_json::Value;

fn osal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osal"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small synthetic dataset plus a fast config; returns the config path.
fn setup(dir: &Path) -> String {
    let data = dir.join("data");
    let o = osal(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--dim",
        "32",
        "--per-class",
        "40",
        "--test-per-class",
        "10",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut config: Value = serde_json::from_str(&fs::read_to_string(data.join("experiment.json")).unwrap()).unwrap();
    config["budget"] = 10.into();
    config["rounds"] = 3.into();
    config["probe"]["steps"] = 100.into();
    let path = data.join("fast.json");
    fs::write(&path, config.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn with_config_edit(config: &str, edit: impl FnOnce(&mut Value)) -> String {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(config).unwrap()).unwrap();
    edit(&mut v);
    // stays next to the data so relative paths still resolve
    let path = Path::new(config).with_file_name("edited.json");
    fs::write(&path, v.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_rounds_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("run");
    let o = osal(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<RoundRow> = read_csv(out.join("rounds.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    let text = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert!(text.starts_with("round,selected_count,id_selected,precision,test_accuracy,tau,fallback_used\n"));
    assert!(!text.contains('\r'));
    let summary: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.rounds_completed, 4);
}

#[test]
fn seed_override_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("run");
    let o = osal(&[
        "run",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
        "--strategy",
        "random",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.seed, 7);
    assert_eq!(summary.config.seed, 7);
    assert_eq!(summary.config.strategy.name(), "random");
}

#[test]
fn bogus_strategy_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let bad = with_config_edit(&config, |v| v["strategy"] = "bogus".into());
    let o = osal(&["run", "--config", &bad, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("strategy"), "{}", stderr(&o));

    let o = osal(&["run", "--config", &config, "--out", "x", "--strategy", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();

    let missing_key = with_config_edit(&config, |v| {
        v.as_object_mut().unwrap().remove("budget");
    });
    let o = osal(&["run", "--config", &missing_key, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));

    let missing_file = with_config_edit(&config, |v| v["data"]["embeddings"] = "nope.emb1".into());
    assert_eq!(
        osal(&["run", "--config", &missing_file, "--out", out]).status.code(),
        Some(2)
    );

    let too_much_ood = with_config_edit(&config, |v| v["pool"]["ood_ratio"] = 0.9.into());
    assert_eq!(
        osal(&["run", "--config", &too_much_ood, "--out", out]).status.code(),
        Some(2)
    );

    // a diverging probe is only discovered while running
    let diverging = with_config_edit(&config, |v| v["probe"]["learning_rate"] = 1e300.into());
    assert_eq!(
        osal(&["run", "--config", &diverging, "--out", out]).status.code(),
        Some(3)
    );

    assert_eq!(osal(&["run", "--out", out]).status.code(), Some(1));
}

#[test]
fn sweep_writes_seed_dirs_and_consistent_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("sweep");
    let o = osal(&[
        "sweep",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "--seeds",
        "1,2,3,4,5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let runs: Vec<Vec<RoundRow>> = (1..=5)
        .map(|s| {
            let d = out.join(format!("seed_{s}"));
            let summary: Summary = serde_json::from_str(&fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
            assert_eq!(summary.seed, s);
            read_csv(d.join("rounds.csv")).unwrap()
        })
        .collect();
    let agg: Vec<AggregateRow> = read_csv(out.join("aggregate.csv")).unwrap();
    assert_eq!(agg.len(), 4);
    for (round, row) in agg.iter().enumerate() {
        let mean = |f: fn(&RoundRow) -> f64| runs.iter().map(|r| f(&r[round])).sum::<f64>() / 5.0;
        assert_eq!(row.n_seeds, 5);
        assert!((row.precision_mean - mean(|r| r.precision)).abs() < 1e-9);
        assert!((row.test_accuracy_mean - mean(|r| r.test_accuracy)).abs() < 1e-9);
        assert!((row.id_selected_mean - mean(|r| r.id_selected as f64)).abs() < 1e-9);
    }

    // report rebuilds the same aggregate from the per-seed files
    fs::remove_file(out.join("aggregate.csv")).unwrap();
    let o = osal(&["report", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rebuilt: Vec<AggregateRow> = read_csv(out.join("aggregate.csv")).unwrap();
    assert_eq!(rebuilt, agg);
}

#[test]
fn single_seed_sweep_has_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("sweep");
    let o = osal(&[
        "sweep",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "--seeds",
        "9",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let single: Vec<RoundRow> = read_csv(out.join("seed_9/rounds.csv")).unwrap();
    let agg: Vec<AggregateRow> = read_csv(out.join("aggregate.csv")).unwrap();
    for (a, r) in agg.iter().zip(&single) {
        assert_eq!(
            (a.precision_std, a.test_accuracy_std, a.id_selected_std),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(a.precision_mean, r.precision);
        assert_eq!(a.test_accuracy_mean, r.test_accuracy);
    }
}

#[test]
fn pipeline_stages_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("stages");
    let out_s = out.to_str().unwrap();
    for cmd in ["pool", "tune-temp", "score"] {
        let o = osal(&[cmd, "--config", &config, "--out", out_s]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let pool: Value = serde_json::from_str(&fs::read_to_string(out.join("pool.json")).unwrap()).unwrap();
    let unlabeled = pool["unlabeled"].as_array().unwrap().len();
    let tau: Value = serde_json::from_str(&fs::read_to_string(out.join("tau.json")).unwrap()).unwrap();
    assert!(tau["tau"].as_f64().unwrap() > 0.0);

    let text = fs::read_to_string(out.join("scores.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,p_ood,max_p_id,indicator"));
    assert_eq!(lines.count(), unlabeled);
}
