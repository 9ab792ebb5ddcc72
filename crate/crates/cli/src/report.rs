//! Evaluation bundle built from a backtest output directory.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::Serialize;

use dapflow_core::market_data::{MarketDay, HOURS};
use dapflow_core::metrics::{
    equal_width_edges, increment_histogram, joint_histogram, kl_divergence, moments, quantile, uncertainty_report, HistogramSpec,
    JointHistogram, ScenarioSet,
};

use crate::config::ReportSection;
use crate::files::{self, ScoreRow, ScenarioTable};
use crate::CliError;

pub const QUANTILE_LEVELS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];
pub const MODELS: [&str; 3] = ["flow", "uninformed", "knn"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Period {
    Full,
    Pre,
    Post,
}

impl Period {
    fn name(self) -> &'static str {
        match self {
            Period::Full => "full",
            Period::Pre => "pre",
            Period::Post => "post",
        }
    }

    fn contains(self, date: NaiveDate, split: NaiveDate) -> bool {
        match self {
            Period::Full => true,
            Period::Pre => date < split,
            Period::Post => date >= split,
        }
    }
}

const PERIODS: [Period; 3] = [Period::Full, Period::Pre, Period::Post];

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct HistogramBundle {
    marginal: BTreeMap<String, BTreeMap<String, HistogramSpec>>,
    increments: BTreeMap<String, HistogramSpec>,
    joint: BTreeMap<String, JointHistogram>,
}

#[derive(Serialize)]
struct ReportMeta {
    results_dir: String,
    split_date: NaiveDate,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    scored_days: usize,
    scenarios_available: bool,
    uncertainty_correlation: Option<f64>,
    uncertainty_correlation_defined: bool,
}

/// Builds the bundle in `out` from `results` (a backtest output directory)
/// and the dataset the backtest ran on.
pub fn run_report(days: &[MarketDay], data_path: &Path, results: &Path, settings: &ReportSection, out: &Path) -> Result<(), CliError> {
    let scores_path = results.join("scores.csv");
    let scores = files::read_scores_csv(&scores_path)?;
    let scenarios_path = results.join("scenarios.csv");
    let scenarios = if scenarios_path.exists() {
        Some(files::read_backtest_scenarios(&scenarios_path)?)
    } else {
        log::warn!("{} not found; scenario statistics are skipped", scenarios_path.display());
        None
    };
    let summary_path = results.join("summary.json");
    let seed = std::fs::read_to_string(&summary_path)
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v.get("seed").and_then(|s| s.as_u64()));

    let by_date: BTreeMap<NaiveDate, &MarketDay> = days.iter().map(|d| (d.date, d)).collect();
    let realized: Vec<&MarketDay> = scores
        .iter()
        .map(|s| by_date.get(&s.date).copied().ok_or_else(|| CliError::Usage(format!("scored day {} missing from the dataset", s.date))))
        .collect::<Result<_, _>>()?;
    files::ensure_dir(out)?;
    let split = settings.split_date;

    write_moments(out, &realized, scenarios.as_ref(), split)?;
    write_score_quantiles(out, &scores, split)?;
    let mut correlation = None;
    if let Some(table) = &scenarios {
        write_kl_and_histograms(out, &realized, table, settings)?;
        correlation = write_uncertainty(out, &realized, table)?;
    }
    let mut input_paths: Vec<&Path> = vec![data_path, &scores_path];
    if scenarios.is_some() {
        input_paths.push(&scenarios_path);
    }
    if summary_path.exists() {
        input_paths.push(&summary_path);
    }
    files::write_json(
        &out.join("report.json"),
        &ReportMeta {
            results_dir: results.display().to_string(),
            split_date: split,
            seed,
            inputs: files::input_hashes(&input_paths)?,
            scored_days: scores.len(),
            scenarios_available: scenarios.is_some(),
            uncertainty_correlation: correlation,
            uncertainty_correlation_defined: correlation.is_some(),
        },
    )
}

/// Table-style moments: one row per source and period.
fn write_moments(out: &Path, realized: &[&MarketDay], scenarios: Option<&ScenarioTable>, split: NaiveDate) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(out.join("moments.csv")).map_err(runtime)?;
    w.write_record(["source", "period", "n", "mean", "std", "skewness", "kurtosis"]).map_err(runtime)?;
    let mut sources: Vec<(String, Vec<(NaiveDate, &[f64; HOURS])>)> =
        vec![("realizations".into(), realized.iter().map(|d| (d.date, &d.price)).collect())];
    if let Some(table) = scenarios {
        for model in MODELS {
            if let Some(per_day) = table.get(model) {
                let rows = per_day.iter().flat_map(|(date, profiles)| profiles.iter().map(move |p| (*date, p))).collect();
                sources.push((model.to_string(), rows));
            }
        }
    }
    for (source, rows) in &sources {
        for period in PERIODS {
            let values: Vec<f64> = rows.iter().filter(|(d, _)| period.contains(*d, split)).flat_map(|(_, p)| p.iter().copied()).collect();
            if values.len() < 2 {
                continue;
            }
            let m = moments(&values).map_err(runtime)?;
            w.write_record([
                source.clone(),
                period.name().into(),
                m.n.to_string(),
                m.mean.to_string(),
                m.std.to_string(),
                fmt_opt(m.skewness),
                fmt_opt(m.kurtosis),
            ])
            .map_err(runtime)?;
        }
    }
    w.flush().map_err(runtime)
}

fn score_series(rows: &[&ScoreRow], model: &str, metric: &str) -> Vec<f64> {
    rows.iter()
        .filter_map(|r| match (model, metric) {
            ("flow", "mae") => Some(r.flow_mae),
            ("flow", "es") => Some(r.flow_es),
            ("flow", "vs") => Some(r.flow_vs),
            ("uninformed", "mae") => r.uninformed_mae,
            ("uninformed", "es") => r.uninformed_es,
            ("uninformed", "vs") => r.uninformed_vs,
            ("knn", "mae") => r.knn_mae,
            ("knn", "es") => r.knn_es,
            ("knn", "vs") => r.knn_vs,
            _ => None,
        })
        .collect()
}

/// Box-plot quantiles of the per-day scores by period and by year.
fn write_score_quantiles(out: &Path, scores: &[ScoreRow], split: NaiveDate) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(out.join("score_quantiles.csv")).map_err(runtime)?;
    w.write_record(["model", "metric", "period", "n", "mean", "q02.5", "q25", "q50", "q75", "q97.5"]).map_err(runtime)?;
    let mut groups: Vec<(String, Vec<&ScoreRow>)> = PERIODS
        .iter()
        .map(|p| (p.name().to_string(), scores.iter().filter(|r| p.contains(r.date, split)).collect()))
        .collect();
    let mut years: BTreeMap<i32, Vec<&ScoreRow>> = BTreeMap::new();
    for r in scores {
        years.entry(r.date.year()).or_default().push(r);
    }
    groups.extend(years.into_iter().map(|(y, rows)| (y.to_string(), rows)));
    for model in MODELS {
        for metric in ["mae", "es", "vs"] {
            for (period, rows) in &groups {
                let values = score_series(rows, model, metric);
                if values.is_empty() {
                    continue;
                }
                let mut rec = vec![
                    model.to_string(),
                    metric.to_string(),
                    period.clone(),
                    values.len().to_string(),
                    (values.iter().sum::<f64>() / values.len() as f64).to_string(),
                ];
                for q in QUANTILE_LEVELS {
                    rec.push(quantile(&values, q).map_err(runtime)?.to_string());
                }
                w.write_record(&rec).map_err(runtime)?;
            }
        }
    }
    w.flush().map_err(runtime)
}

fn pooled<'a>(table: &'a ScenarioTable, model: &str, dates: &[NaiveDate]) -> Vec<&'a [f64; HOURS]> {
    let Some(per_day) = table.get(model) else { return Vec::new() };
    dates.iter().filter_map(|d| per_day.get(d)).flatten().collect()
}

fn write_kl_and_histograms(out: &Path, realized: &[&MarketDay], table: &ScenarioTable, settings: &ReportSection) -> Result<(), CliError> {
    let dates: Vec<NaiveDate> = realized.iter().map(|d| d.date).collect();
    let real: Vec<&[f64; HOURS]> = realized.iter().map(|d| &d.price).collect();
    let mut kl = csv::Writer::from_path(out.join("kl.csv")).map_err(runtime)?;
    kl.write_record(["model", "statistic", "kl"]).map_err(runtime)?;
    let mut bundle = HistogramBundle {
        marginal: BTreeMap::new(),
        increments: BTreeMap::new(),
        joint: BTreeMap::new(),
    };
    let (i1, i2) = settings.increment_hours;
    let (j1, j2) = settings.joint_hours;
    for model in MODELS {
        let scen = pooled(table, model, &dates);
        if scen.is_empty() {
            continue;
        }
        for &h in &settings.marginal_hours {
            if h >= HOURS {
                return Err(CliError::Usage(format!("marginal hour {h} out of range")));
            }
            let r: Vec<f64> = real.iter().map(|p| p[h]).collect();
            let s: Vec<f64> = scen.iter().map(|p| p[h]).collect();
            let hist = HistogramSpec::from_samples(&r, &s, settings.bins).map_err(runtime)?;
            let d = kl_divergence(&hist).map_err(runtime)?;
            kl.write_record([model.to_string(), format!("hour_{h:02}"), d.to_string()]).map_err(runtime)?;
            bundle.marginal.entry(model.to_string()).or_default().insert(format!("hour_{h:02}"), hist);
        }
        let inc = increment_histogram(&real, &scen, i1, i2, None).map_err(|e| CliError::Usage(e.to_string()))?;
        let d = kl_divergence(&inc).map_err(runtime)?;
        kl.write_record([model.to_string(), format!("increment_{i1:02}_{i2:02}"), d.to_string()]).map_err(runtime)?;
        bundle.increments.insert(model.to_string(), inc);

        let ex = equal_width_edges(real.iter().map(|p| &p[j1]).chain(scen.iter().map(|p| &p[j1])), settings.bins).map_err(runtime)?;
        let ey = equal_width_edges(real.iter().map(|p| &p[j2]).chain(scen.iter().map(|p| &p[j2])), settings.bins).map_err(runtime)?;
        let joint = joint_histogram(&real, &scen, j1, j2, ex, ey).map_err(|e| CliError::Usage(e.to_string()))?;
        bundle.joint.insert(model.to_string(), joint);
    }
    kl.flush().map_err(runtime)?;
    files::write_json(&out.join("histograms.json"), &bundle)
}

fn write_uncertainty(out: &Path, realized: &[&MarketDay], table: &ScenarioTable) -> Result<Option<f64>, CliError> {
    let Some(flow) = table.get("flow") else { return Ok(None) };
    let mut pairs = Vec::new();
    for d in realized {
        if let Some(profiles) = flow.get(&d.date) {
            pairs.push((d, ScenarioSet::from_profiles(d.date, profiles).map_err(runtime)?));
        }
    }
    if pairs.is_empty() {
        return Ok(None);
    }
    let report = uncertainty_report(pairs.iter().map(|(d, s)| (&d.price[..], s))).map_err(runtime)?;
    let mut w = csv::Writer::from_path(out.join("uncertainty.csv")).map_err(runtime)?;
    w.write_record(["date", "hour", "abs_error_of_mean", "scenario_std"]).map_err(runtime)?;
    for r in &report.rows {
        w.write_record([r.date.to_string(), r.hour.to_string(), r.abs_error_of_mean.to_string(), r.scenario_std.to_string()])
            .map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    if report.correlation.is_none() {
        log::warn!("error/spread correlation undefined: constant column");
    }
    Ok(report.correlation)
}
