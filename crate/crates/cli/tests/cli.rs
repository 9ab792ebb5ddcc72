use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use chrono_tz::Europe::Berlin;

const HEADER: &str = "timestamp,price_eur_mwh,load_forecast_mw,wind_onshore_mw,wind_offshore_mw,solar_mw\n";

fn dapflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dapflow")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn berlin_midnight(y: i32, m: u32, d: u32) -> DateTime<Utc> {
    Berlin
        .from_local_datetime(&NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(0, 0, 0).unwrap())
        .earliest()
        .unwrap()
        .with_timezone(&Utc)
}

fn hourly_csv(start: DateTime<Utc>, hours: i64) -> String {
    let mut text = HEADER.to_string();
    for k in 0..hours {
        let t = (start + Duration::hours(k)).with_timezone(&Berlin);
        text.push_str(&format!("{},{},{},{},{},{}\n", t.to_rfc3339(), 40.0 + (k % 24) as f64, 50000.0, 9000.0, 2000.0, 1500.0));
    }
    text
}

fn synth(dir: &Path, n_days: usize) -> std::path::PathBuf {
    ok(&dapflow(&["synth", "--out", s(dir), "--seed", "3", "--n-days", &n_days.to_string()]));
    dir.join("dataset.json")
}

#[test]
fn ingest_two_days() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("in.csv");
    fs::write(&csv, hourly_csv(berlin_midnight(2021, 6, 1), 48)).unwrap();
    let out = tmp.path().join("out");
    ok(&dapflow(&["ingest", "--data", s(&csv), "--out", s(&out)]));
    let ds: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(ds["days"].as_array().unwrap().len(), 2);
    assert_eq!(fs::read_to_string(out.join("ingest_events.jsonl")).unwrap(), "");
}

#[test]
fn ingest_missing_column_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("in.csv");
    let text = hourly_csv(berlin_midnight(2021, 6, 1), 24).replace(",solar_mw", ",sun_mw");
    fs::write(&csv, text).unwrap();
    let out = dapflow(&["ingest", "--data", s(&csv), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solar_mw"));
}

#[test]
fn ingest_reports_dst_fill() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("in.csv");
    let start = berlin_midnight(2021, 3, 27);
    let hours = (berlin_midnight(2021, 3, 29) - start).num_hours();
    assert_eq!(hours, 47);
    fs::write(&csv, hourly_csv(start, hours)).unwrap();
    let out = tmp.path().join("out");
    ok(&dapflow(&["ingest", "--data", s(&csv), "--out", s(&out)]));
    let log = fs::read_to_string(out.join("ingest_events.jsonl")).unwrap();
    let events: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(events.iter().any(|e| e["kind"] == "dst_fill" && e["date"] == "2021-03-28"));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seeed = 1\n").unwrap();
    let out = dapflow(&["synth", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_and_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 80);
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "n_scenarios = 7\n[train]\nepochs = 3\nhidden_width = 8\n").unwrap();
    let model_dir = tmp.path().join("model");
    ok(&dapflow(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&model_dir), "--epochs", "5"]));
    let training: serde_json::Value = serde_json::from_str(&fs::read_to_string(model_dir.join("training.json")).unwrap()).unwrap();
    assert_eq!(training["config"]["epochs"], 5);
    assert_eq!(training["config"]["hidden_width"], 8);
    assert_eq!(training["nll_curve"].as_array().unwrap().len(), 6);
    let model = model_dir.join("model.json");

    let sample = |dir: &Path, n: &str, date: &str| {
        dapflow(&[
            "sample", "--config", s(&cfg), "--data", s(&data), "--model", s(&model), "--out", s(dir), "--date", date, "--n-scenarios", n, "--seed", "11",
        ])
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&sample(&a, "50", "2016-02-10"));
    ok(&sample(&b, "50", "2016-02-10"));
    let text = fs::read_to_string(a.join("scenarios.csv")).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 25);
    assert_eq!(text, fs::read_to_string(b.join("scenarios.csv")).unwrap());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("scenarios.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["model_sha256"].as_str().unwrap().len(), 64);

    let c = tmp.path().join("c");
    ok(&sample(&c, "50", "2016-02-11"));
    assert_ne!(text, fs::read_to_string(c.join("scenarios.csv")).unwrap());

    assert_eq!(sample(&tmp.path().join("d"), "0", "2016-02-10").status.code(), Some(2));
    let first = sample(&tmp.path().join("e"), "5", "2016-01-01");
    assert_eq!(first.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&first.stderr).contains("2015-12-31"));
}

fn type7(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[test]
fn backtest_rerun_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 150);
    let run = |dir: &Path| {
        dapflow(&[
            "backtest",
            "--data",
            s(&data),
            "--out",
            s(dir),
            "--epochs",
            "4",
            "--hidden-width",
            "8",
            "--initial-days",
            "60",
            "--interval-days",
            "45",
            "--n-scenarios",
            "12",
            "--batch-size",
            "16",
            "--write-scenarios",
        ])
    };
    let a = tmp.path().join("bt_a");
    let b = tmp.path().join("bt_b");
    ok(&run(&a));
    ok(&run(&b));
    for name in ["scores.csv", "summary.json", "scenarios.csv", "models/window_00.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 0);
    assert_eq!(summary["windows"].as_array().unwrap().len(), 2);

    let r1 = tmp.path().join("rep1");
    let r2 = tmp.path().join("rep2");
    for r in [&r1, &r2] {
        ok(&dapflow(&["report", "--data", s(&data), "--results", s(&a), "--out", s(r), "--split-date", "2016-04-15"]));
    }
    for name in ["moments.csv", "score_quantiles.csv", "kl.csv", "histograms.json", "uncertainty.csv", "report.json"] {
        assert_eq!(fs::read(r1.join(name)).unwrap(), fs::read(r2.join(name)).unwrap(), "{name} differs");
    }

    let mut maes: Vec<f64> = csv::Reader::from_path(a.join("scores.csv"))
        .unwrap()
        .deserialize::<std::collections::HashMap<String, String>>()
        .map(|r| r.unwrap()["flow_mae"].parse().unwrap())
        .collect();
    maes.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut rdr = csv::Reader::from_path(r1.join("score_quantiles.csv")).unwrap();
    let row = rdr
        .deserialize::<std::collections::HashMap<String, String>>()
        .map(|r| r.unwrap())
        .find(|r| r["model"] == "flow" && r["metric"] == "mae" && r["period"] == "full")
        .expect("full-period flow MAE row");
    assert_eq!(row["n"].parse::<usize>().unwrap(), maes.len());
    for (col, q) in [("q02.5", 0.025), ("q25", 0.25), ("q50", 0.5), ("q75", 0.75), ("q97.5", 0.975)] {
        let got: f64 = row[col].parse().unwrap();
        assert!((got - type7(&maes, q)).abs() < 1e-9, "{col}: {got}");
    }
    let mean: f64 = row["mean"].parse().unwrap();
    assert!((mean - maes.iter().sum::<f64>() / maes.len() as f64).abs() < 1e-9);
}

#[test]
fn failed_window_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 100);
    let dir = tmp.path().join("bt");
    let out = dapflow(&["backtest", "--data", s(&data), "--out", s(&dir), "--epochs", "2", "--initial-days", "30", "--interval-days", "40"]);
    assert_eq!(out.status.code(), Some(3));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failed_windows"], 1);
    assert_eq!(summary["windows"][0]["status"]["status"], "failed");
}

#[test]
fn sweep_ranks_configurations() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 120);
    let out = tmp.path().join("sweep");
    ok(&dapflow(&[
        "sweep",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--coupling-layers",
        "2,3",
        "--depth-grid",
        "1",
        "--width-grid",
        "6",
        "--epochs-grid",
        "2",
        "--initial-days",
        "60",
        "--interval-days",
        "60",
        "--n-scenarios",
        "5",
        "--batch-size",
        "16",
    ]));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    let sweep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    let rows = sweep["rows"].as_array().unwrap();
    assert!(rows[0]["mean_mae"].as_f64().unwrap() <= rows[1]["mean_mae"].as_f64().unwrap());
}
