//! Expanding-window retraining backtest and the hyperparameter sweep.
//!
//! Every window refits scaling, PCA and a fresh flow on all days up to its
//! training cut, then scores the flow and both baselines on each day of the
//! following test span.

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::baselines::{knn_sample, uninformed_sample, HistoryPool, KnnCondition, DEFAULT_SCENARIOS};
use crate::error::{Error, Result};
use crate::flow::{train, FlowModel, TrainConfig};
use crate::market_data::{MarketDay, Profile, ScalingState};
use crate::metrics::{energy_score, mae_scenario_mean, variogram_score, ScenarioSet, VariogramNorm};
use crate::numerics::{derive_seed, Rng};

pub const DEFAULT_INITIAL_DAYS: usize = 90;
pub const DEFAULT_INTERVAL_DAYS: usize = 90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    /// Last day the window's model may train on.
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

impl Window {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.test_start <= date && date <= self.test_end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub dataset_start: NaiveDate,
    pub dataset_end: NaiveDate,
    pub initial_train_days: usize,
    pub retrain_interval_days: usize,
    pub windows: Vec<Window>,
}

/// Train on `[start, start + initial - 1]`, then test `interval` days at a
/// time, retraining on everything before each test span. The last span may
/// be shorter.
pub fn build_schedule(start: NaiveDate, end: NaiveDate, initial_train_days: usize, interval: usize) -> Result<Schedule> {
    if initial_train_days == 0 || interval == 0 {
        return Err(Error::Schedule("initial and retrain spans must be positive".into()));
    }
    let first_test = start + Duration::days(initial_train_days as i64);
    if first_test > end {
        return Err(Error::Schedule(format!(
            "{start}..{end} leaves no test day after {initial_train_days} training days"
        )));
    }
    let mut windows = Vec::new();
    let mut test_start = first_test;
    while test_start <= end {
        let test_end = (test_start + Duration::days(interval as i64 - 1)).min(end);
        windows.push(Window {
            index: windows.len(),
            train_end: test_start - Duration::days(1),
            test_start,
            test_end,
        });
        test_start = test_end + Duration::days(1);
    }
    Ok(Schedule {
        dataset_start: start,
        dataset_end: end,
        initial_train_days,
        retrain_interval_days: interval,
        windows,
    })
}

impl Schedule {
    /// Schedule spanning the first to the last day of `days`.
    pub fn for_days(days: &[MarketDay], initial_train_days: usize, interval: usize) -> Result<Self> {
        let (first, last) = match (days.iter().map(|d| d.date).min(), days.iter().map(|d| d.date).max()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::EmptyInput("no days to schedule".into())),
        };
        build_schedule(first, last, initial_train_days, interval)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub train: TrainConfig,
    pub n_scenarios: usize,
    pub knn_k: usize,
    pub variogram_gamma: f64,
    pub variogram_norm: VariogramNorm,
    pub seed: u64,
    pub score_baselines: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            n_scenarios: DEFAULT_SCENARIOS,
            knn_k: DEFAULT_SCENARIOS,
            variogram_gamma: 0.5,
            variogram_norm: VariogramNorm::Scaled,
            seed: 0,
            score_baselines: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mae: f64,
    pub energy: f64,
    pub variogram: f64,
}

impl Scores {
    pub fn compute(realized: &Profile, set: &ScenarioSet, config: &BacktestConfig) -> Result<Self> {
        Ok(Self {
            mae: mae_scenario_mean(realized, set)?,
            energy: energy_score(realized, set)?,
            variogram: variogram_score(realized, set, config.variogram_gamma, config.variogram_norm)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayResult {
    pub date: NaiveDate,
    pub window: usize,
    pub realized: Profile,
    pub flow: Scores,
    pub uninformed: Option<Scores>,
    pub knn: Option<Scores>,
    pub knn_shortfall: bool,
    /// Latest target date the scoring model was trained on.
    pub train_max_date: NaiveDate,
    /// Latest date in the baselines' history pool.
    pub pool_max_date: Option<NaiveDate>,
    pub flow_scenarios: ScenarioSet,
    pub uninformed_scenarios: Option<ScenarioSet>,
    pub knn_scenarios: Option<ScenarioSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WindowStatus {
    Trained,
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window: Window,
    pub status: WindowStatus,
    pub train_seed: u64,
    pub n_train_pairs: usize,
    pub train_nll: Option<f64>,
    pub pca_explained_ratio: Option<f64>,
    pub near_zero_components: Vec<usize>,
    pub scaling: Option<ScalingState>,
    pub n_scored: usize,
    pub mean_flow: Option<Scores>,
    pub mean_uninformed: Option<Scores>,
    pub mean_knn: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDay {
    pub date: NaiveDate,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestResult {
    pub schedule: Schedule,
    pub config: BacktestConfig,
    pub days: Vec<DayResult>,
    pub windows: Vec<WindowSummary>,
    pub skipped: Vec<SkippedDay>,
    #[serde(skip)]
    pub models: Vec<Option<FlowModel>>,
}

/// Mean scores of each model over a set of days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_days: usize,
    pub flow: Option<Scores>,
    pub uninformed: Option<Scores>,
    pub knn: Option<Scores>,
}

fn mean_scores<'a>(scores: impl Iterator<Item = &'a Scores>) -> Option<Scores> {
    let mut n = 0usize;
    let mut acc = Scores {
        mae: 0.0,
        energy: 0.0,
        variogram: 0.0,
    };
    for s in scores {
        acc.mae += s.mae;
        acc.energy += s.energy;
        acc.variogram += s.variogram;
        n += 1;
    }
    (n > 0).then(|| Scores {
        mae: acc.mae / n as f64,
        energy: acc.energy / n as f64,
        variogram: acc.variogram / n as f64,
    })
}

pub fn aggregate(days: &[&DayResult]) -> Aggregate {
    Aggregate {
        n_days: days.len(),
        flow: mean_scores(days.iter().map(|d| &d.flow)),
        uninformed: mean_scores(days.iter().filter_map(|d| d.uninformed.as_ref())),
        knn: mean_scores(days.iter().filter_map(|d| d.knn.as_ref())),
    }
}

impl BacktestResult {
    /// Checks that no score used a model or pool that saw its own day.
    pub fn audit(&self) -> Result<()> {
        for d in &self.days {
            if d.train_max_date >= d.date {
                return Err(Error::Schedule(format!("{} scored by a model trained through {}", d.date, d.train_max_date)));
            }
            if let Some(p) = d.pool_max_date {
                if p >= d.date {
                    return Err(Error::Schedule(format!("{} scored from a pool reaching {p}", d.date)));
                }
            }
            let w = &self.schedule.windows[d.window];
            if !w.contains(d.date) || d.train_max_date > w.train_end {
                return Err(Error::Schedule(format!("{} attributed to window {} ({:?})", d.date, d.window, w)));
            }
        }
        Ok(())
    }

    pub fn any_window_failed(&self) -> bool {
        self.windows.iter().any(|w| matches!(w.status, WindowStatus::Failed { .. }))
    }

    pub fn aggregate_all(&self) -> Aggregate {
        aggregate(&self.days.iter().collect::<Vec<_>>())
    }

    /// Aggregate over scored days in `[from, to]`.
    pub fn aggregate_between(&self, from: NaiveDate, to: NaiveDate) -> Aggregate {
        aggregate(&self.days.iter().filter(|d| from <= d.date && d.date <= to).collect::<Vec<_>>())
    }

    /// Aggregates per calendar year.
    pub fn aggregate_by_year(&self) -> BTreeMap<i32, Aggregate> {
        let mut years: BTreeMap<i32, Vec<&DayResult>> = BTreeMap::new();
        for d in &self.days {
            years.entry(d.date.year()).or_default().push(d);
        }
        years.into_iter().map(|(y, ds)| (y, aggregate(&ds))).collect()
    }

    pub fn window_days(&self, index: usize) -> Vec<&DayResult> {
        self.days.iter().filter(|d| d.window == index).collect()
    }
}

fn sorted_days(days: &[MarketDay]) -> Result<Vec<MarketDay>> {
    let mut sorted = days.to_vec();
    sorted.sort_by_key(|d| d.date);
    if sorted.windows(2).any(|w| w[0].date == w[1].date) {
        return Err(Error::Config("duplicate dates in dataset".into()));
    }
    Ok(sorted)
}

fn date_ordinal(date: NaiveDate) -> u64 {
    date.num_days_from_ce() as u64
}

/// Scores `model` and, optionally, both baselines on every day of
/// `window`'s test span. `days` must be sorted and free of duplicates.
pub fn score_window(
    model: &FlowModel,
    days: &[MarketDay],
    window: &Window,
    baseline_scaling: Option<&ScalingState>,
    config: &BacktestConfig,
) -> Result<(Vec<DayResult>, Vec<SkippedDay>)> {
    if model.train_end >= window.test_start {
        return Err(Error::Schedule(format!(
            "model trained through {} cannot score from {}",
            model.train_end, window.test_start
        )));
    }
    let pool = match (config.score_baselines, baseline_scaling) {
        (true, Some(scaling)) => Some(HistoryPool::before(days, window.test_end + Duration::days(1), scaling)?),
        _ => None,
    };
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    let mut date = window.test_start;
    while date <= window.test_end {
        let idx = days.binary_search_by_key(&date, |d| d.date);
        let prev_idx = days.binary_search_by_key(&(date - Duration::days(1)), |d| d.date);
        match (idx, prev_idx) {
            (Err(_), _) => skipped.push(SkippedDay {
                date,
                reason: "day not in dataset".into(),
            }),
            (Ok(_), Err(_)) => skipped.push(SkippedDay {
                date,
                reason: "previous day not in dataset".into(),
            }),
            (Ok(i), Ok(p)) => {
                let (day, previous) = (&days[i], &days[p]);
                let ordinal = date_ordinal(date);
                let y = model.conditioning(day, previous)?;
                let mut rng = Rng::derived(config.seed, "flow-sample", ordinal);
                let flow_set = model.sample(&y, config.n_scenarios, &mut rng, date)?;
                let flow = Scores::compute(&day.price, &flow_set, config)?;
                let mut result = DayResult {
                    date,
                    window: window.index,
                    realized: day.price,
                    flow,
                    uninformed: None,
                    knn: None,
                    knn_shortfall: false,
                    train_max_date: model.train_end,
                    pool_max_date: None,
                    flow_scenarios: flow_set,
                    uninformed_scenarios: None,
                    knn_scenarios: None,
                };
                if let (Some(pool), Some(scaling)) = (&pool, baseline_scaling) {
                    let pool = pool.restricted_to(date);
                    result.pool_max_date = pool.max_date();
                    let mut rng = Rng::derived(config.seed, "uninformed", ordinal);
                    let uninformed = uninformed_sample(&pool, config.n_scenarios, &mut rng)?;
                    result.uninformed = Some(Scores::compute(&day.price, &uninformed, config)?);
                    result.uninformed_scenarios = Some(uninformed);
                    let knn = knn_sample(&pool, &KnnCondition::from_days(day, previous, scaling)?, config.knn_k)?;
                    result.knn = Some(Scores::compute(&day.price, &knn.scenarios, config)?);
                    result.knn_shortfall = knn.shortfall;
                    result.knn_scenarios = Some(knn.scenarios);
                }
                results.push(result);
            }
        }
        date += Duration::days(1);
    }
    Ok((results, skipped))
}

/// Runs every window of `schedule`. A window whose training fails is
/// recorded as failed and its days are skipped; the run continues.
pub fn run_backtest(days: &[MarketDay], schedule: &Schedule, config: &BacktestConfig) -> Result<BacktestResult> {
    let days = sorted_days(days)?;
    let in_span: Vec<MarketDay> = days
        .into_iter()
        .filter(|d| schedule.dataset_start <= d.date && d.date <= schedule.dataset_end)
        .collect();
    let mut result = BacktestResult {
        schedule: schedule.clone(),
        config: *config,
        days: Vec::new(),
        windows: Vec::new(),
        skipped: Vec::new(),
        models: Vec::new(),
    };
    for window in &schedule.windows {
        let train_seed = derive_seed(config.seed, "window", window.index as u64);
        let train_days: Vec<MarketDay> = in_span.iter().filter(|d| d.date <= window.train_end).cloned().collect();
        let mut summary = WindowSummary {
            window: *window,
            status: WindowStatus::Trained,
            train_seed,
            n_train_pairs: 0,
            train_nll: None,
            pca_explained_ratio: None,
            near_zero_components: Vec::new(),
            scaling: None,
            n_scored: 0,
            mean_flow: None,
            mean_uninformed: None,
            mean_knn: None,
        };
        let outcome = train(&train_days, &TrainConfig { seed: train_seed, ..config.train }).and_then(|model| {
            let scored = score_window(&model, &in_span, window, Some(&model.scaling), config)?;
            Ok((model, scored))
        });
        match outcome {
            Ok((model, (scored, skipped))) => {
                summary.n_train_pairs = model.n_train_pairs;
                summary.train_nll = Some(model.history.final_nll);
                summary.pca_explained_ratio = Some(model.codec.cumulative_ratio());
                summary.near_zero_components = model.codec.near_zero_components();
                summary.scaling = Some(model.scaling);
                summary.n_scored = scored.len();
                let refs: Vec<&DayResult> = scored.iter().collect();
                let agg = aggregate(&refs);
                summary.mean_flow = agg.flow;
                summary.mean_uninformed = agg.uninformed;
                summary.mean_knn = agg.knn;
                log::info!(
                    "window {}: trained on {} pairs, NLL {:.4}, scored {} days",
                    window.index,
                    model.n_train_pairs,
                    model.history.final_nll,
                    scored.len()
                );
                result.days.extend(scored);
                result.skipped.extend(skipped);
                result.models.push(Some(model));
            }
            Err(e) => {
                log::error!("window {} failed: {e}", window.index);
                summary.status = WindowStatus::Failed { message: e.to_string() };
                let mut date = window.test_start;
                while date <= window.test_end {
                    result.skipped.push(SkippedDay {
                        date,
                        reason: format!("window {} failed", window.index),
                    });
                    date += Duration::days(1);
                }
                result.models.push(None);
            }
        }
        result.windows.push(summary);
    }
    result.audit()?;
    Ok(result)
}

/// Hyperparameter grid; every combination is backtested `repeats` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub coupling_layers: Vec<usize>,
    pub hidden_depth: Vec<usize>,
    pub hidden_width: Vec<usize>,
    pub epochs: Vec<usize>,
    pub repeats: usize,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.coupling_layers.is_empty() || self.hidden_depth.is_empty() || self.hidden_width.is_empty() || self.epochs.is_empty() || self.repeats == 0 {
            return Err(Error::Config("sweep grid needs nonempty sets and at least one repeat".into()));
        }
        Ok(())
    }

    pub fn configurations(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &n_coupling in &self.coupling_layers {
            for &hidden_depth in &self.hidden_depth {
                for &hidden_width in &self.hidden_width {
                    for &epochs in &self.epochs {
                        out.push(SweepPoint {
                            n_coupling,
                            hidden_depth,
                            hidden_width,
                            epochs,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_coupling: usize,
    pub hidden_depth: usize,
    pub hidden_width: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub mean_mae: f64,
    /// Across repeats, denominator `repeats - 1`; zero for a single repeat.
    pub std_mae: f64,
    pub run_mae: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub point: SweepPoint,
    pub repeat: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Ascending by mean MAE.
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// Flow-only backtests of every grid point; failed points are left out of
/// the ranking.
pub fn run_sweep(days: &[MarketDay], grid: &SweepGrid, schedule: &Schedule, base: &BacktestConfig) -> Result<SweepResult> {
    grid.validate()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (p, point) in grid.configurations().into_iter().enumerate() {
        let mut runs = Vec::with_capacity(grid.repeats);
        for repeat in 0..grid.repeats {
            let config = BacktestConfig {
                train: TrainConfig {
                    n_coupling: point.n_coupling,
                    hidden_depth: point.hidden_depth,
                    hidden_width: point.hidden_width,
                    epochs: point.epochs,
                    ..base.train
                },
                seed: derive_seed(base.seed, "sweep", (p * grid.repeats + repeat) as u64),
                score_baselines: false,
                ..*base
            };
            let outcome = run_backtest(days, schedule, &config).and_then(|r| {
                if let Some(w) = r.windows.iter().find(|w| matches!(w.status, WindowStatus::Failed { .. })) {
                    return Err(Error::Config(format!("window {} failed: {:?}", w.window.index, w.status)));
                }
                r.aggregate_all().flow.map(|s| s.mae).ok_or_else(|| Error::EmptyInput("no scored days".into()))
            });
            match outcome {
                Ok(mae) => runs.push(mae),
                Err(e) => {
                    failures.push(SweepFailure {
                        point,
                        repeat,
                        message: e.to_string(),
                    });
                    break;
                }
            }
        }
        if runs.len() == grid.repeats {
            let n = runs.len() as f64;
            let mean = runs.iter().sum::<f64>() / n;
            let std = if runs.len() > 1 {
                (runs.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            rows.push(SweepRow {
                point,
                mean_mae: mean,
                std_mae: std,
                run_mae: runs,
            });
        }
    }
    rows.sort_by(|a, b| a.mean_mae.total_cmp(&b.mean_mae));
    Ok(SweepResult { rows, failures })
}
