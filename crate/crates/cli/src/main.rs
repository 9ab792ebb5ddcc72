//! `dapflow`: ingest market data, train conditional flows, sample price
//! scenarios, run backtests and sweeps, and build evaluation reports.

mod config;
mod files;
mod report;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{Datelike, NaiveDate};
use chrono_tz::Tz;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dapflow_core::backtest::{run_backtest, run_sweep, Schedule, SweepGrid, WindowStatus};
use dapflow_core::flow::{load_model, save_model, train};
use dapflow_core::market_data::{generate_synthetic, ingest_csv, IngestEventKind};
use dapflow_core::numerics::Rng;

use config::RunConfig;
use files::Dataset;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0} backtest window(s) failed")]
    WindowsFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::WindowsFailed(_) => 3,
        }
    }
}

impl From<dapflow_core::Error> for CliError {
    fn from(e: dapflow_core::Error) -> Self {
        use dapflow_core::Error as E;
        match e {
            E::Parse { .. } | E::MissingColumn(_) | E::Csv(_) | E::Json(_) | E::Config(_) | E::Schedule(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "dapflow", version, about = "Scenario generation for day-ahead electricity prices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input file (CSV for `ingest`, dataset JSON otherwise).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    n_scenarios: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    n_coupling: Option<usize>,
    #[arg(long)]
    hidden_depth: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    n_components: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct ScheduleFlags {
    #[arg(long)]
    initial_days: Option<usize>,
    #[arg(long)]
    interval_days: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an hourly CSV and write the per-day dataset.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// IANA zone of the market's local calendar.
        #[arg(long)]
        timezone: Option<String>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_days: Option<usize>,
        #[arg(long)]
        start_date: Option<NaiveDate>,
        #[arg(long)]
        regime_shift_day: Option<usize>,
        #[arg(long)]
        regime_multiplier: Option<f64>,
        #[arg(long)]
        hourly_noise_amplitude: Option<f64>,
    },
    /// Train one model on every day of the dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Sample price scenarios for one delivery day.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        date: NaiveDate,
    },
    /// Expanding-window retraining backtest against both baselines.
    Backtest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        schedule: ScheduleFlags,
        /// Also write every scenario to scenarios.csv.
        #[arg(long)]
        write_scenarios: bool,
    },
    /// Backtest a grid of flow architectures.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        schedule: ScheduleFlags,
        #[arg(long, value_delimiter = ',')]
        coupling_layers: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        depth_grid: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        width_grid: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        epochs_grid: Option<Vec<usize>>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Evaluation bundle from a backtest output directory.
    Report {
        #[command(flatten)]
        common: Common,
        /// Backtest output directory.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        split_date: Option<NaiveDate>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    if common.data.is_some() {
        cfg.data = common.data.clone();
    }
    if common.model.is_some() {
        cfg.model = common.model.clone();
    }
    if let Some(n) = common.n_scenarios {
        cfg.n_scenarios = n;
    }
    if cfg.n_scenarios == 0 {
        return Err(CliError::Usage("--n-scenarios must be positive".into()));
    }
    Ok(cfg)
}

fn apply_train(cfg: &mut RunConfig, flags: &TrainFlags) {
    let t = &mut cfg.train;
    t.epochs = flags.epochs.unwrap_or(t.epochs);
    t.batch_size = flags.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = flags.learning_rate.unwrap_or(t.learning_rate);
    t.n_coupling = flags.n_coupling.unwrap_or(t.n_coupling);
    t.hidden_depth = flags.hidden_depth.unwrap_or(t.hidden_depth);
    t.hidden_width = flags.hidden_width.unwrap_or(t.hidden_width);
    t.n_components = flags.n_components.unwrap_or(t.n_components);
    t.seed = cfg.seed;
}

fn apply_schedule(cfg: &mut RunConfig, flags: &ScheduleFlags) {
    cfg.schedule.initial_train_days = flags.initial_days.unwrap_or(cfg.schedule.initial_train_days);
    cfg.schedule.retrain_interval_days = flags.interval_days.unwrap_or(cfg.schedule.retrain_interval_days);
}

fn load_dataset(cfg: &RunConfig) -> Result<(PathBuf, Dataset), CliError> {
    let path = cfg.require_data()?.to_path_buf();
    let ds = files::read_dataset(&path)?;
    Ok((path, ds))
}

fn cmd_ingest(common: Common, timezone: Option<String>) -> Result<(), CliError> {
    let mut cfg = resolve(&common)?;
    if let Some(tz) = timezone {
        cfg.timezone = tz;
    }
    let tz: Tz = cfg.timezone.parse().map_err(|_| CliError::Usage(format!("unknown time zone {}", cfg.timezone)))?;
    let input = cfg.require_data()?.to_path_buf();
    let out = cfg.require_out()?.to_path_buf();
    let outcome = ingest_csv(&input, tz)?;
    files::ensure_dir(&out)?;
    let hash = files::sha256_file(&input)?;
    let source = json!({"csv": input.display().to_string(), "sha256": hash, "timezone": cfg.timezone});
    files::write_json(&out.join("dataset.json"), &Dataset::new(source.clone(), outcome.days.clone()))?;
    files::write_text(&out.join("ingest_events.jsonl"), &outcome.event_log()?)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &outcome.events {
        let kind = serde_json::to_value(e.kind).map_err(|e| CliError::Runtime(e.to_string()))?;
        *counts.entry(kind.as_str().unwrap_or_default().to_string()).or_default() += 1;
    }
    files::write_json(
        &out.join("ingest_report.json"),
        &json!({
            "source": source,
            "days": outcome.days.len(),
            "excluded_dates": outcome.excluded_dates(),
            "event_counts": counts,
            "events": outcome.events,
        }),
    )?;
    let imputed = outcome.events.iter().filter(|e| e.kind != IngestEventKind::Excluded).count();
    println!(
        "ingested {} days ({} excluded, {} imputations) into {}",
        outcome.days.len(),
        outcome.excluded_dates().len(),
        imputed,
        out.display()
    );
    Ok(())
}

struct SynthFlags {
    n_days: Option<usize>,
    start_date: Option<NaiveDate>,
    regime_shift_day: Option<usize>,
    regime_multiplier: Option<f64>,
    hourly_noise_amplitude: Option<f64>,
}

fn cmd_synth(common: Common, flags: SynthFlags) -> Result<(), CliError> {
    let cfg = resolve(&common)?;
    let out = cfg.require_out()?.to_path_buf();
    let mut syn = cfg.synthetic.clone();
    syn.seed = cfg.seed;
    syn.n_days = flags.n_days.unwrap_or(syn.n_days);
    syn.start_date = flags.start_date.unwrap_or(syn.start_date);
    if flags.regime_shift_day.is_some() {
        syn.regime_shift_day = flags.regime_shift_day;
    }
    syn.regime_multiplier = flags.regime_multiplier.unwrap_or(syn.regime_multiplier);
    syn.hourly_noise_amplitude = flags.hourly_noise_amplitude.unwrap_or(syn.hourly_noise_amplitude);
    let days = generate_synthetic(&syn)?;
    files::ensure_dir(&out)?;
    let source = json!({"synthetic": syn});
    files::write_json(&out.join("dataset.json"), &Dataset::new(source, days))?;
    println!("wrote {} synthetic days to {}", syn.n_days, out.join("dataset.json").display());
    Ok(())
}

fn cmd_train(common: Common, flags: TrainFlags) -> Result<(), CliError> {
    let mut cfg = resolve(&common)?;
    apply_train(&mut cfg, &flags);
    let (data_path, ds) = load_dataset(&cfg)?;
    let out = cfg.require_out()?.to_path_buf();
    let model = train(&ds.days, &cfg.train)?;
    files::ensure_dir(&out)?;
    let model_path = out.join("model.json");
    save_model(&model, &model_path)?;
    files::write_json(
        &out.join("training.json"),
        &json!({
            "seed": cfg.seed,
            "config": cfg.train,
            "inputs": files::input_hashes(&[&data_path])?,
            "model_sha256": files::sha256_file(&model_path)?,
            "train_start": model.train_start,
            "train_end": model.train_end,
            "n_train_pairs": model.n_train_pairs,
            "pca_explained_ratio": model.codec.cumulative_ratio(),
            "final_nll": model.history.final_nll,
            "nll_curve": model.history.nll_curve,
        }),
    )?;
    println!(
        "trained on {} pairs, final NLL {:.4}, model at {}",
        model.n_train_pairs,
        model.history.final_nll,
        model_path.display()
    );
    Ok(())
}

fn cmd_sample(common: Common, date: NaiveDate) -> Result<(), CliError> {
    let cfg = resolve(&common)?;
    let (data_path, ds) = load_dataset(&cfg)?;
    let model_path = cfg.require_model()?.to_path_buf();
    let out = cfg.require_out()?.to_path_buf();
    let model = load_model(&model_path)?;
    let find = |d: NaiveDate| ds.days.iter().find(|x| x.date == d);
    let day = find(date).ok_or_else(|| CliError::Runtime(format!("no data for {date}")))?;
    let prev_date = date.pred_opt().ok_or_else(|| CliError::Usage(format!("{date} has no previous day")))?;
    let previous = find(prev_date).ok_or_else(|| CliError::Runtime(format!("no data for {prev_date}, the day before {date}")))?;
    let y = model.conditioning(day, previous)?;
    let mut rng = Rng::derived(cfg.seed, "sample", date.num_days_from_ce() as u64);
    let set = model.sample(&y, cfg.n_scenarios, &mut rng, date)?;
    files::ensure_dir(&out)?;
    files::write_scenario_csv(&out.join("scenarios.csv"), &set)?;
    files::write_json(
        &out.join("scenarios.json"),
        &json!({
            "date": date,
            "n_scenarios": cfg.n_scenarios,
            "seed": cfg.seed,
            "model_sha256": files::sha256_file(&model_path)?,
            "inputs": files::input_hashes(&[&data_path, &model_path])?,
            "unit": "EUR/MWh",
        }),
    )?;
    println!("wrote {} scenarios for {date} to {}", set.len(), out.display());
    Ok(())
}

fn cmd_backtest(common: Common, train_flags: TrainFlags, schedule_flags: ScheduleFlags, write_scenarios: bool) -> Result<(), CliError> {
    let mut cfg = resolve(&common)?;
    apply_train(&mut cfg, &train_flags);
    apply_schedule(&mut cfg, &schedule_flags);
    let (data_path, ds) = load_dataset(&cfg)?;
    let out = cfg.require_out()?.to_path_buf();
    let schedule = Schedule::for_days(&ds.days, cfg.schedule.initial_train_days, cfg.schedule.retrain_interval_days)?;
    let config = cfg.backtest_config();
    let result = run_backtest(&ds.days, &schedule, &config)?;
    files::ensure_dir(&out.join("models"))?;
    let mut model_files = BTreeMap::new();
    for (w, model) in result.windows.iter().zip(&result.models) {
        if let Some(model) = model {
            let path = out.join("models").join(format!("window_{:02}.json", w.window.index));
            save_model(model, &path)?;
            model_files.insert(w.window.index, files::sha256_file(&path)?);
        }
    }
    files::write_scores_csv(&out.join("scores.csv"), &result)?;
    if write_scenarios {
        files::write_backtest_scenarios(&out.join("scenarios.csv"), &result)?;
    }
    let failed = result.windows.iter().filter(|w| matches!(w.status, WindowStatus::Failed { .. })).count();
    files::write_json(
        &out.join("summary.json"),
        &json!({
            "seed": cfg.seed,
            "inputs": files::input_hashes(&[&data_path])?,
            "config": config,
            "schedule": result.schedule,
            "windows": result.windows,
            "model_sha256": model_files,
            "aggregate": result.aggregate_all(),
            "by_year": result.aggregate_by_year(),
            "skipped": result.skipped,
            "failed_windows": failed,
            "audit": "passed",
        }),
    )?;
    let agg = result.aggregate_all();
    let mae = |s: Option<dapflow_core::backtest::Scores>| s.map(|s| format!("{:.3}", s.mae)).unwrap_or_else(|| "-".into());
    println!(
        "scored {} days over {} windows; mean MAE flow {} uninformed {} knn {}",
        agg.n_days,
        result.windows.len(),
        mae(agg.flow),
        mae(agg.uninformed),
        mae(agg.knn)
    );
    if failed > 0 {
        return Err(CliError::WindowsFailed(failed));
    }
    Ok(())
}

struct GridFlags {
    coupling_layers: Option<Vec<usize>>,
    depth: Option<Vec<usize>>,
    width: Option<Vec<usize>>,
    epochs: Option<Vec<usize>>,
    repeats: Option<usize>,
}

fn cmd_sweep(common: Common, train_flags: TrainFlags, schedule_flags: ScheduleFlags, grid_flags: GridFlags) -> Result<(), CliError> {
    let mut cfg = resolve(&common)?;
    apply_train(&mut cfg, &train_flags);
    apply_schedule(&mut cfg, &schedule_flags);
    let (data_path, ds) = load_dataset(&cfg)?;
    let out = cfg.require_out()?.to_path_buf();
    let s = &cfg.sweep;
    let grid = SweepGrid {
        coupling_layers: grid_flags.coupling_layers.unwrap_or_else(|| s.coupling_layers.clone()),
        hidden_depth: grid_flags.depth.unwrap_or_else(|| s.hidden_depth.clone()),
        hidden_width: grid_flags.width.unwrap_or_else(|| s.hidden_width.clone()),
        epochs: grid_flags.epochs.unwrap_or_else(|| s.epochs.clone()),
        repeats: grid_flags.repeats.unwrap_or(s.repeats),
    };
    grid.validate()?;
    let schedule = Schedule::for_days(&ds.days, cfg.schedule.initial_train_days, cfg.schedule.retrain_interval_days)?;
    let result = run_sweep(&ds.days, &grid, &schedule, &cfg.backtest_config())?;
    files::ensure_dir(&out)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv")).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_record(["rank", "coupling_layers", "hidden_depth", "hidden_width", "epochs", "mean_mae", "std_mae", "repeats"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for (i, row) in result.rows.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            row.point.n_coupling.to_string(),
            row.point.hidden_depth.to_string(),
            row.point.hidden_width.to_string(),
            row.point.epochs.to_string(),
            row.mean_mae.to_string(),
            row.std_mae.to_string(),
            row.run_mae.len().to_string(),
        ])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    files::write_json(
        &out.join("sweep.json"),
        &json!({
            "seed": cfg.seed,
            "inputs": files::input_hashes(&[&data_path])?,
            "grid": grid,
            "rows": result.rows,
            "failures": result.failures,
        }),
    )?;
    println!("ranked {} configurations ({} failures)", result.rows.len(), result.failures.len());
    Ok(())
}

fn cmd_report(common: Common, results: PathBuf, split_date: Option<NaiveDate>) -> Result<(), CliError> {
    let mut cfg = resolve(&common)?;
    if let Some(d) = split_date {
        cfg.report.split_date = d;
    }
    let (data_path, ds) = load_dataset(&cfg)?;
    let out = cfg.require_out()?.to_path_buf();
    report::run_report(&ds.days, &data_path, &results, &cfg.report, &out)?;
    println!("report written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { common, timezone } => cmd_ingest(common, timezone),
        Command::Synth {
            common,
            n_days,
            start_date,
            regime_shift_day,
            regime_multiplier,
            hourly_noise_amplitude,
        } => cmd_synth(
            common,
            SynthFlags {
                n_days,
                start_date,
                regime_shift_day,
                regime_multiplier,
                hourly_noise_amplitude,
            },
        ),
        Command::Train { common, train } => cmd_train(common, train),
        Command::Sample { common, date } => cmd_sample(common, date),
        Command::Backtest {
            common,
            train,
            schedule,
            write_scenarios,
        } => cmd_backtest(common, train, schedule, write_scenarios),
        Command::Sweep {
            common,
            train,
            schedule,
            coupling_layers,
            depth_grid,
            width_grid,
            epochs_grid,
            repeats,
        } => cmd_sweep(
            common,
            train,
            schedule,
            GridFlags {
                coupling_layers,
                depth: depth_grid,
                width: width_grid,
                epochs: epochs_grid,
                repeats,
            },
        ),
        Command::Report { common, results, split_date } => cmd_report(common, results, split_date),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
