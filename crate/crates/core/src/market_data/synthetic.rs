//! Deterministic synthetic market for offline experiments.
//!
//! Drivers (load, wind, solar) follow seasonal and daily harmonics with
//! seeded noise. Prices follow a merit-order curve of the residual load
//! plus a daily shape and within-day AR(1) noise:
//!
//! `price = m_d · (a·r + b·r² + shape(h) + σ·s_h·ε_h)`
//!
//! where `ε` is a unit-variance stationary AR(1) restarted every day, `s_h`
//! an optional hourly noise profile and `m_d` the regime multiplier. The
//! noise is independent across days, so the price law given the day's
//! drivers is Gaussian with known mean and covariance.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use super::{MarketDay, Profile, HOURS};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_days: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
    /// Days with index greater than this have prices multiplied.
    pub regime_shift_day: Option<usize>,
    pub regime_multiplier: f64,
    /// EUR/MWh.
    pub noise_scale: f64,
    /// `(a, b)` in EUR/MWh per MW and per MW².
    pub merit_coefficients: (f64, f64),
    /// Hour-to-hour correlation of the price noise.
    pub ar_coefficient: f64,
    /// Relative swing of the hourly noise level; 0 is homoskedastic.
    pub hourly_noise_amplitude: f64,
    /// EUR/MWh added to every hour.
    pub price_offset: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_days: 600,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            regime_shift_day: None,
            regime_multiplier: 1.0,
            noise_scale: 25.0,
            merit_coefficients: (0.004, 0.0),
            ar_coefficient: 0.5,
            hourly_noise_amplitude: 0.0,
            price_offset: -70.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_days < 2 {
            return Err(Error::Config(format!("n_days must be at least 2, got {}", self.n_days)));
        }
        if !(self.regime_multiplier > 0.0) {
            return Err(Error::Config(format!(
                "regime_multiplier must be positive, got {}",
                self.regime_multiplier
            )));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Config("noise_scale must be non-negative".into()));
        }
        if !(self.ar_coefficient > -1.0 && self.ar_coefficient < 1.0) {
            return Err(Error::Config("ar_coefficient must lie in (-1, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.hourly_noise_amplitude) {
            return Err(Error::Config("hourly_noise_amplitude must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Generator together with its analytic price law.
#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    config: SyntheticConfig,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<MarketDay>> {
    SyntheticMarket::new(config.clone())?.generate()
}

impl SyntheticMarket {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn day_index(&self, date: NaiveDate) -> i64 {
        (date - self.config.start_date).num_days()
    }

    pub fn multiplier(&self, day_index: i64) -> f64 {
        match self.config.regime_shift_day {
            Some(shift) if day_index > shift as i64 => self.config.regime_multiplier,
            _ => 1.0,
        }
    }

    pub fn daily_shape(&self, hour: usize) -> f64 {
        let h = hour as f64;
        self.config.price_offset + 6.0 * (2.0 * std::f64::consts::PI * (h - 7.0) / 24.0).sin()
    }

    /// Relative noise level of each hour.
    pub fn hourly_noise_level(&self, hour: usize) -> f64 {
        let h = hour as f64;
        1.0 + self.config.hourly_noise_amplitude * (2.0 * std::f64::consts::PI * (h - 6.0) / 24.0).sin()
    }

    /// Expected price profile given the day's drivers.
    pub fn conditional_mean(&self, day: &MarketDay) -> Profile {
        let (a, b) = self.config.merit_coefficients;
        let m = self.multiplier(self.day_index(day.date));
        let r = day.residual_load();
        std::array::from_fn(|h| m * (a * r[h] + b * r[h] * r[h] + self.daily_shape(h)))
    }

    /// Covariance of the price profile given the day's drivers (EUR/MWh)².
    pub fn noise_covariance(&self, date: NaiveDate) -> Matrix {
        let m = self.multiplier(self.day_index(date));
        let sigma = self.config.noise_scale * m;
        let phi = self.config.ar_coefficient;
        let mut cov = Matrix::zeros(HOURS, HOURS);
        for i in 0..HOURS {
            for j in 0..HOURS {
                let lag = i.abs_diff(j) as i32;
                cov.set(
                    i,
                    j,
                    sigma * sigma * self.hourly_noise_level(i) * self.hourly_noise_level(j) * phi.powi(lag),
                );
            }
        }
        cov
    }

    pub fn generate(&self) -> Result<Vec<MarketDay>> {
        let c = &self.config;
        let mut rng = Rng::new(c.seed);
        let phi = c.ar_coefficient;
        let innovation = (1.0 - phi * phi).sqrt();
        let tau = 2.0 * std::f64::consts::PI;
        let mut wind_level = rng.standard_normal();
        let mut days = Vec::with_capacity(c.n_days);
        for d in 0..c.n_days {
            let date = c.start_date + Duration::days(d as i64);
            let season = tau * f64::from(date.ordinal0()) / 365.25;
            let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);

            let load_level = 1500.0 * rng.standard_normal() - if weekend { 5000.0 } else { 0.0 };
            wind_level = 0.7 * wind_level + (1.0f64 - 0.49).sqrt() * rng.standard_normal();
            let wind_phase = rng.uniform(0.0, tau);
            let cloud = rng.uniform(0.3, 1.0);
            let solar_peak = 25000.0 * (0.55 - 0.45 * season.cos()) * cloud;

            let mut load = [0.0; HOURS];
            let mut wind = [0.0; HOURS];
            let mut solar = [0.0; HOURS];
            for h in 0..HOURS {
                let x = h as f64;
                let daily = -0.8 * (tau * (x - 2.0) / 24.0).cos() + 0.2 * (2.0 * tau * x / 24.0).sin();
                load[h] = (52000.0 + 6000.0 * season.cos() + 9000.0 * daily + load_level + 500.0 * rng.standard_normal()).max(0.0);
                wind[h] = (14000.0
                    + 5000.0 * season.cos()
                    + 9000.0 * wind_level
                    + 1500.0 * (tau * x / 24.0 + wind_phase).sin()
                    + 500.0 * rng.standard_normal())
                .max(0.0);
                solar[h] = if (5..=19).contains(&h) {
                    (solar_peak * (std::f64::consts::PI * (x - 5.0) / 14.0).sin()).max(0.0)
                } else {
                    0.0
                };
            }

            let mut day = MarketDay {
                date,
                price: [0.0; HOURS],
                wind,
                solar,
                load,
            };
            let mean = self.conditional_mean(&day);
            let m = self.multiplier(d as i64);
            let mut eps = rng.standard_normal();
            for h in 0..HOURS {
                if h > 0 {
                    eps = phi * eps + innovation * rng.standard_normal();
                }
                day.price[h] = mean[h] + m * c.noise_scale * self.hourly_noise_level(h) * eps;
            }
            days.push(day);
        }
        Ok(days)
    }
}
