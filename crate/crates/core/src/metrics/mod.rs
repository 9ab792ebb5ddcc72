//! Scoring rules and distribution statistics for price scenarios.

mod stats;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::HOURS;
use crate::numerics::Matrix;

pub use stats::{
    equal_width_edges, histogram_counts, increment_histogram, increments, joint_histogram, kl_divergence, moments, pearson, quantile,
    uncertainty_report, HistogramSpec, JointHistogram, MomentReport, UncertaintyReport, UncertaintyRow, KL_BINS, SMOOTHING_EPSILON,
};

/// Price scenarios for one delivery day, one profile per row (EUR/MWh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    date: NaiveDate,
    scenarios: Matrix,
}

impl ScenarioSet {
    pub fn new(date: NaiveDate, scenarios: Matrix) -> Result<Self> {
        if scenarios.rows() == 0 || scenarios.cols() != HOURS {
            return Err(Error::Dimension(format!(
                "scenario set needs N >= 1 rows of {HOURS} hours, got {:?}",
                scenarios.shape()
            )));
        }
        Ok(Self { date, scenarios })
    }

    pub fn from_profiles<R: AsRef<[f64]>>(date: NaiveDate, profiles: &[R]) -> Result<Self> {
        Self::new(date, Matrix::from_rows(profiles)?)
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn scenarios(&self) -> &Matrix {
        &self.scenarios
    }

    pub fn len(&self) -> usize {
        self.scenarios.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.rows() == 0
    }

    /// Hourly mean across scenarios.
    pub fn mean_profile(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.scenarios.cols())
            .map(|t| self.scenarios.row_iter().map(|r| r[t]).sum::<f64>() / n)
            .collect()
    }

    /// Hourly standard deviation across scenarios (population denominator).
    pub fn std_profile(&self) -> Vec<f64> {
        let mean = self.mean_profile();
        let n = self.len() as f64;
        (0..self.scenarios.cols())
            .map(|t| (self.scenarios.row_iter().map(|r| (r[t] - mean[t]).powi(2)).sum::<f64>() / n).sqrt())
            .collect()
    }
}

/// How the variogram score is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariogramNorm {
    /// Sum of squared differences scaled by `1/N`.
    #[default]
    Scaled,
    /// Plain sum, as in most of the scoring-rule literature.
    Literature,
}

fn check_width(realized: &[f64], scen: &Matrix) -> Result<()> {
    if realized.len() != scen.cols() || scen.rows() == 0 {
        return Err(Error::Dimension(format!(
            "realization of length {} against scenarios {:?}",
            realized.len(),
            scen.shape()
        )));
    }
    Ok(())
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean absolute error between the realization and the hourly scenario mean.
pub fn mae_scenario_mean(realized: &[f64], scen: &ScenarioSet) -> Result<f64> {
    check_width(realized, &scen.scenarios)?;
    let mean = scen.mean_profile();
    Ok(realized.iter().zip(&mean).map(|(r, m)| (r - m).abs()).sum::<f64>() / realized.len() as f64)
}

/// Energy score of a scenario matrix (rows are scenarios) against a realization.
pub fn energy_score_matrix(realized: &[f64], scen: &Matrix) -> Result<f64> {
    check_width(realized, scen)?;
    let n = scen.rows();
    let to_obs = scen.row_iter().map(|r| euclidean(realized, r)).sum::<f64>() / n as f64;
    let mut spread = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            spread += euclidean(scen.row(i), scen.row(j));
        }
    }
    // each unordered pair appears twice in the full double sum
    Ok(to_obs - spread / (n * n) as f64)
}

pub fn energy_score(realized: &[f64], scen: &ScenarioSet) -> Result<f64> {
    energy_score_matrix(realized, &scen.scenarios)
}

/// Variogram score of order `gamma`.
pub fn variogram_score_matrix(realized: &[f64], scen: &Matrix, gamma: f64, norm: VariogramNorm) -> Result<f64> {
    check_width(realized, scen)?;
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("variogram order must be positive, got {gamma}")));
    }
    let (n, t) = scen.shape();
    let mut total = 0.0;
    let mut expected = vec![0.0; t];
    for i in 0..t {
        expected.iter_mut().for_each(|e| *e = 0.0);
        for row in scen.row_iter() {
            let ri = row[i];
            for (e, &rj) in expected.iter_mut().zip(row) {
                *e += (ri - rj).abs().powf(gamma);
            }
        }
        for j in 0..t {
            let d = (realized[i] - realized[j]).abs().powf(gamma) - expected[j] / n as f64;
            total += d * d;
        }
    }
    Ok(match norm {
        VariogramNorm::Scaled => total / n as f64,
        VariogramNorm::Literature => total,
    })
}

pub fn variogram_score(realized: &[f64], scen: &ScenarioSet, gamma: f64, norm: VariogramNorm) -> Result<f64> {
    variogram_score_matrix(realized, &scen.scenarios, gamma, norm)
}
