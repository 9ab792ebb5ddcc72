//! Per-day market records, feature scaling and conditioning vectors.

mod ingest;
mod synthetic;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{ingest_csv, ingest_reader, read_points, IngestEvent, IngestEventKind, IngestOutcome, CSV_COLUMNS};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticMarket};

pub const HOURS: usize = 24;
/// Seven 24-hour profiles.
pub const CONDITIONING_DIM: usize = 7 * HOURS;

pub type Profile = [f64; HOURS];

/// One hourly observation as it appears in the input feed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HourlyPoint {
    pub timestamp: DateTime<Utc>,
    pub price: f64,
    pub load_forecast: f64,
    pub wind_forecast: f64,
    pub solar_forecast: f64,
}

/// Price realization and forecast drivers for one local calendar day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketDay {
    pub date: NaiveDate,
    pub price: Profile,
    pub wind: Profile,
    pub solar: Profile,
    pub load: Profile,
}

impl MarketDay {
    pub fn residual_load(&self) -> Profile {
        std::array::from_fn(|h| self.load[h] - self.wind[h] - self.solar[h])
    }
}

/// Divisors that map raw features to dimensionless model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingState {
    pub wind_max: f64,
    pub solar_max: f64,
    pub load_max: f64,
    pub power_factor: f64,
    pub price_divisor: f64,
}

pub const POWER_FACTOR: f64 = 1.1;
pub const PRICE_DIVISOR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Wind,
    Solar,
    Load,
}

impl ScalingState {
    pub fn new(wind_max: f64, solar_max: f64, load_max: f64) -> Result<Self> {
        for (name, v) in [("wind", wind_max), ("solar", solar_max), ("load", load_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::DegenerateScale(name));
            }
        }
        Ok(Self {
            wind_max,
            solar_max,
            load_max,
            power_factor: POWER_FACTOR,
            price_divisor: PRICE_DIVISOR,
        })
    }

    pub fn divisor(&self, channel: Channel) -> f64 {
        let max = match channel {
            Channel::Wind => self.wind_max,
            Channel::Solar => self.solar_max,
            Channel::Load => self.load_max,
        };
        self.power_factor * max
    }

    pub fn scale_power(&self, channel: Channel, mw: f64) -> f64 {
        mw / self.divisor(channel)
    }

    pub fn unscale_power(&self, channel: Channel, scaled: f64) -> f64 {
        scaled * self.divisor(channel)
    }

    pub fn scale_price(&self, eur_mwh: f64) -> f64 {
        eur_mwh / self.price_divisor
    }

    pub fn unscale_price(&self, scaled: f64) -> f64 {
        scaled * self.price_divisor
    }

    pub fn scale_profile(&self, channel: Channel, profile: &Profile) -> Profile {
        std::array::from_fn(|h| self.scale_power(channel, profile[h]))
    }

    pub fn scale_price_profile(&self, profile: &Profile) -> Profile {
        std::array::from_fn(|h| self.scale_price(profile[h]))
    }
}

/// Channel-wise maxima over every hour of every day.
pub fn fit_scaling(days: &[MarketDay]) -> Result<ScalingState> {
    if days.is_empty() {
        return Err(Error::EmptyInput("no days to fit scaling on".into()));
    }
    let max_of = |f: fn(&MarketDay) -> &Profile| days.iter().flat_map(|d| f(d).iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    let wind = max_of(|d| &d.wind);
    let solar = max_of(|d| &d.solar);
    let load = max_of(|d| &d.load);
    for (name, v) in [("wind", wind), ("solar", solar), ("load", load)] {
        if v <= 0.0 {
            return Err(Error::DegenerateScale(name));
        }
    }
    ScalingState::new(wind, solar, load)
}

/// Conditioning input for one target day, laid out as
/// `[wind_d, solar_d, load_d, wind_{d-1}, solar_{d-1}, load_{d-1}, price_{d-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningVector(Vec<f64>);

impl ConditioningVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for ConditioningVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn check_consecutive(day: &MarketDay, previous: &MarketDay) -> Result<()> {
    if previous.date.succ_opt() != Some(day.date) {
        return Err(Error::Gap {
            previous: previous.date,
            day: day.date,
        });
    }
    Ok(())
}

pub fn assemble_conditioning(day: &MarketDay, previous: &MarketDay, scaling: &ScalingState) -> Result<ConditioningVector> {
    check_consecutive(day, previous)?;
    let mut values = Vec::with_capacity(CONDITIONING_DIM);
    for d in [day, previous] {
        values.extend(d.wind.iter().map(|&v| scaling.scale_power(Channel::Wind, v)));
        values.extend(d.solar.iter().map(|&v| scaling.scale_power(Channel::Solar, v)));
        values.extend(d.load.iter().map(|&v| scaling.scale_power(Channel::Load, v)));
    }
    values.extend(previous.price.iter().map(|&p| scaling.scale_price(p)));
    Ok(ConditioningVector(values))
}

/// Pairs every day with its immediate predecessor, skipping days whose
/// previous calendar day is absent. Input must be sorted by date.
pub fn consecutive_pairs(days: &[MarketDay]) -> impl Iterator<Item = (&MarketDay, &MarketDay)> {
    days.windows(2)
        .filter(|w| w[0].date.succ_opt() == Some(w[1].date))
        .map(|w| (&w[1], &w[0]))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn flat_day(date: NaiveDate, price: f64, wind: f64, solar: f64, load: f64) -> MarketDay {
        MarketDay {
            date,
            price: [price; HOURS],
            wind: [wind; HOURS],
            solar: [solar; HOURS],
            load: [load; HOURS],
        }
    }

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn scaling_uses_channel_maxima() {
        let mut a = flat_day(date(2020, 1, 1), 250.0, 400.0, 10.0, 5000.0);
        a.wind[7] = 1000.0;
        let b = flat_day(date(2020, 1, 2), 20.0, 300.0, 50.0, 4000.0);
        let s = fit_scaling(&[a, b]).unwrap();
        assert_eq!(s.wind_max, 1000.0);
        assert_eq!(s.solar_max, 50.0);
        assert_eq!(s.load_max, 5000.0);
        assert!((s.divisor(Channel::Wind) - 1100.0).abs() < 1e-9);
        assert!((s.scale_power(Channel::Wind, 1000.0) - 1.0 / 1.1).abs() < 1e-15);
        assert_eq!(s.scale_price(250.0), 2.5);
    }

    #[test]
    fn zero_channel_is_degenerate() {
        let a = flat_day(date(2020, 1, 1), 10.0, 5.0, 0.0, 100.0);
        assert!(matches!(fit_scaling(&[a]), Err(Error::DegenerateScale("solar"))));
        assert!(matches!(fit_scaling(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn conditioning_layout_and_length() {
        let s = ScalingState::new(100.0, 100.0, 100.0).unwrap();
        let prev = flat_day(date(2020, 3, 1), 50.0, 11.0, 22.0, 33.0);
        let day = flat_day(date(2020, 3, 2), 70.0, 44.0, 55.0, 66.0);
        let y = assemble_conditioning(&day, &prev, &s).unwrap();
        assert_eq!(y.len(), CONDITIONING_DIM);
        let block = |k: usize| y[k * HOURS];
        assert!((block(0) - 44.0 / 110.0).abs() < 1e-15);
        assert!((block(1) - 55.0 / 110.0).abs() < 1e-15);
        assert!((block(2) - 66.0 / 110.0).abs() < 1e-15);
        assert!((block(3) - 11.0 / 110.0).abs() < 1e-15);
        assert!((block(4) - 22.0 / 110.0).abs() < 1e-15);
        assert!((block(5) - 33.0 / 110.0).abs() < 1e-15);
        assert!((block(6) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_inputs_give_zero_vector() {
        let s = ScalingState::new(1.0, 1.0, 1.0).unwrap();
        let prev = flat_day(date(2020, 3, 1), 0.0, 0.0, 0.0, 0.0);
        let day = flat_day(date(2020, 3, 2), 0.0, 0.0, 0.0, 0.0);
        let y = assemble_conditioning(&day, &prev, &s).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_consecutive_days_are_a_gap() {
        let s = ScalingState::new(1.0, 1.0, 1.0).unwrap();
        let prev = flat_day(date(2020, 3, 1), 0.0, 0.0, 0.0, 0.0);
        let day = flat_day(date(2020, 3, 3), 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(assemble_conditioning(&day, &prev, &s), Err(Error::Gap { .. })));
    }

    #[test]
    fn pairs_skip_gaps() {
        let days: Vec<_> = [1, 2, 4, 5, 6]
            .iter()
            .map(|&d| flat_day(date(2020, 1, d), 0.0, 1.0, 1.0, 1.0))
            .collect();
        let pairs: Vec<_> = consecutive_pairs(&days).map(|(d, p)| (d.date.format("%d").to_string(), p.date.format("%d").to_string())).collect();
        assert_eq!(pairs, vec![("02".into(), "01".into()), ("05".into(), "04".into()), ("06".into(), "05".into())]);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scaling_round_trip(wind_max in 1.0..1e5f64, v in -1e6..1e6f64, p in -500.0..5000.0f64) {
                let s = ScalingState::new(wind_max, 2.0 * wind_max, 3.0 * wind_max).unwrap();
                for ch in [Channel::Wind, Channel::Solar, Channel::Load] {
                    let back = s.unscale_power(ch, s.scale_power(ch, v));
                    prop_assert!((back - v).abs() <= 1e-12 * v.abs().max(1e-300));
                }
                let back = s.unscale_price(s.scale_price(p));
                prop_assert!((back - p).abs() <= 1e-12 * p.abs().max(1e-300));
            }
        }
    }
}
