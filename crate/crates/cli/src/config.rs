//! Declarative run configuration. Values come from an optional TOML file
//! and are then overridden by command-line flags.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use dapflow_core::backtest::{BacktestConfig, DEFAULT_INITIAL_DAYS, DEFAULT_INTERVAL_DAYS};
use dapflow_core::baselines::DEFAULT_SCENARIOS;
use dapflow_core::flow::TrainConfig;
use dapflow_core::market_data::SyntheticConfig;
use dapflow_core::metrics::VariogramNorm;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub n_scenarios: usize,
    pub timezone: String,
    pub schedule: ScheduleSection,
    pub train: TrainConfig,
    pub metrics: MetricsSection,
    pub synthetic: SyntheticConfig,
    pub sweep: SweepSection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub initial_train_days: usize,
    pub retrain_interval_days: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub variogram_gamma: f64,
    pub variogram_norm: VariogramNorm,
    pub knn_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub coupling_layers: Vec<usize>,
    pub hidden_depth: Vec<usize>,
    pub hidden_width: Vec<usize>,
    pub epochs: Vec<usize>,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub split_date: NaiveDate,
    pub marginal_hours: Vec<usize>,
    pub increment_hours: (usize, usize),
    pub joint_hours: (usize, usize),
    pub bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            model: None,
            out: None,
            seed: 0,
            n_scenarios: DEFAULT_SCENARIOS,
            timezone: "Europe/Berlin".into(),
            schedule: ScheduleSection::default(),
            train: TrainConfig::default(),
            metrics: MetricsSection::default(),
            synthetic: SyntheticConfig::default(),
            sweep: SweepSection::default(),
            report: ReportSection::default(),
        }
    }
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            initial_train_days: DEFAULT_INITIAL_DAYS,
            retrain_interval_days: DEFAULT_INTERVAL_DAYS,
        }
    }
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            variogram_gamma: 0.5,
            variogram_norm: VariogramNorm::Scaled,
            knn_k: DEFAULT_SCENARIOS,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            coupling_layers: vec![2, 3, 4, 5],
            hidden_depth: vec![1, 2, 3],
            hidden_width: vec![14, 21, 28, 35],
            epochs: vec![500, 750, 1000, 1500],
            repeats: 1,
        }
    }
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            split_date: NaiveDate::from_ymd_opt(2021, 10, 1).unwrap(),
            marginal_hours: vec![6, 12],
            increment_hours: (6, 12),
            joint_hours: (6, 12),
            bins: dapflow_core::metrics::KL_BINS,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn backtest_config(&self) -> BacktestConfig {
        BacktestConfig {
            train: TrainConfig { seed: self.seed, ..self.train },
            n_scenarios: self.n_scenarios,
            knn_k: self.metrics.knn_k,
            variogram_gamma: self.metrics.variogram_gamma,
            variogram_norm: self.metrics.variogram_norm,
            seed: self.seed,
            score_baselines: true,
        }
    }

    pub fn require_data(&self) -> Result<&Path, CliError> {
        self.data.as_deref().ok_or_else(|| CliError::Usage("--data is required".into()))
    }

    pub fn require_model(&self) -> Result<&Path, CliError> {
        self.model.as_deref().ok_or_else(|| CliError::Usage("--model is required".into()))
    }

    pub fn require_out(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 9\n[train]\nepochs = 5\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.hidden_width, 21);
        assert_eq!(cfg.schedule.initial_train_days, 90);
        assert_eq!(cfg.report.split_date, NaiveDate::from_ymd_opt(2021, 10, 1).unwrap());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("seeed = 1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
