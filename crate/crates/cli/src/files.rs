//! On-disk formats shared by the commands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dapflow_core::backtest::BacktestResult;
use dapflow_core::market_data::{MarketDay, HOURS};
use dapflow_core::metrics::ScenarioSet;

use crate::CliError;

pub const DATASET_FORMAT: &str = "dapflow-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: String,
    pub version: u32,
    /// Where the days came from, e.g. the ingested CSV or the generator settings.
    pub source: serde_json::Value,
    pub days: Vec<MarketDay>,
}

impl Dataset {
    pub fn new(source: serde_json::Value, mut days: Vec<MarketDay>) -> Self {
        days.sort_by_key(|d| d.date);
        Self {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            source,
            days,
        }
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let ds: Dataset = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a dataset file: {e}", path.display())))?;
    if ds.format != DATASET_FORMAT || ds.version != DATASET_VERSION {
        return Err(CliError::Usage(format!("{}: unsupported dataset format {} v{}", path.display(), ds.format, ds.version)));
    }
    if ds.days.windows(2).any(|w| w[0].date >= w[1].date) {
        return Err(CliError::Usage(format!("{}: days are not strictly increasing", path.display())));
    }
    Ok(ds)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Content hashes of input files keyed by their path as given.
pub fn input_hashes(paths: &[&Path]) -> Result<BTreeMap<String, String>, CliError> {
    paths.iter().map(|p| Ok((p.display().to_string(), sha256_file(p)?))).collect()
}

pub fn hour_headers() -> Vec<String> {
    (0..HOURS).map(|h| format!("h{h:02}")).collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// `scenario,h00..h23`, one row per scenario.
pub fn write_scenario_csv(path: &Path, set: &ScenarioSet) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["scenario".to_string()];
    header.extend(hour_headers());
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in set.scenarios().row_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub const SCORE_COLUMNS: [&str; 12] = [
    "date",
    "window",
    "flow_mae",
    "flow_es",
    "flow_vs",
    "uninformed_mae",
    "uninformed_es",
    "uninformed_vs",
    "knn_mae",
    "knn_es",
    "knn_vs",
    "knn_shortfall",
];

/// Per-day scores of every model.
pub fn write_scores_csv(path: &Path, result: &BacktestResult) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(SCORE_COLUMNS).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for d in &result.days {
        w.write_record([
            d.date.to_string(),
            d.window.to_string(),
            d.flow.mae.to_string(),
            d.flow.energy.to_string(),
            d.flow.variogram.to_string(),
            opt(d.uninformed.map(|s| s.mae)),
            opt(d.uninformed.map(|s| s.energy)),
            opt(d.uninformed.map(|s| s.variogram)),
            opt(d.knn.map(|s| s.mae)),
            opt(d.knn.map(|s| s.energy)),
            opt(d.knn.map(|s| s.variogram)),
            d.knn_shortfall.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// One row of `scores.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScoreRow {
    pub date: NaiveDate,
    pub window: usize,
    pub flow_mae: f64,
    pub flow_es: f64,
    pub flow_vs: f64,
    pub uninformed_mae: Option<f64>,
    pub uninformed_es: Option<f64>,
    pub uninformed_vs: Option<f64>,
    pub knn_mae: Option<f64>,
    pub knn_es: Option<f64>,
    pub knn_vs: Option<f64>,
    pub knn_shortfall: bool,
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))).collect()
}

/// `date,model,scenario,h00..h23` for every scored day and model.
pub fn write_backtest_scenarios(path: &Path, result: &BacktestResult) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["date".to_string(), "model".into(), "scenario".into()];
    header.extend(hour_headers());
    w.write_record(&header).map_err(csv_err)?;
    for d in &result.days {
        let sets = [
            ("flow", Some(&d.flow_scenarios)),
            ("uninformed", d.uninformed_scenarios.as_ref()),
            ("knn", d.knn_scenarios.as_ref()),
        ];
        for (name, set) in sets {
            let Some(set) = set else { continue };
            for (i, row) in set.scenarios().row_iter().enumerate() {
                let mut rec = vec![d.date.to_string(), name.to_string(), i.to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(csv_err)
}

/// Scenario profiles from a backtest `scenarios.csv`, keyed by model and date.
pub type ScenarioTable = BTreeMap<String, BTreeMap<NaiveDate, Vec<[f64; HOURS]>>>;

pub fn read_backtest_scenarios(path: &Path) -> Result<ScenarioTable, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut table = ScenarioTable::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let bad = || CliError::Usage(format!("{}: malformed row {}", path.display(), i + 2));
        if rec.len() != 3 + HOURS {
            return Err(bad());
        }
        let date: NaiveDate = rec[0].parse().map_err(|_| bad())?;
        let mut profile = [0.0; HOURS];
        for (h, p) in profile.iter_mut().enumerate() {
            *p = rec[3 + h].parse().map_err(|_| bad())?;
        }
        table.entry(rec[1].to_string()).or_default().entry(date).or_default().push(profile);
    }
    Ok(table)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}
