//! Reference scenario generators: uninformed draws from past days and
//! nearest neighbours in the space of day-ahead drivers.

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::market_data::{check_consecutive, consecutive_pairs, Channel, MarketDay, Profile, ScalingState, HOURS};
use crate::metrics::ScenarioSet;
use crate::numerics::{Matrix, Rng};

pub const KNN_CONDITION_DIM: usize = 4 * HOURS;
pub const DEFAULT_SCENARIOS: usize = 50;

/// `[wind_d, solar_d, load_d, price_{d-1}]`, scaled like the flow inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnCondition(Vec<f64>);

impl KnnCondition {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != KNN_CONDITION_DIM {
            return Err(Error::Dimension(format!("KNN condition needs {KNN_CONDITION_DIM} values, got {}", values.len())));
        }
        Ok(Self(values))
    }

    pub fn from_days(day: &MarketDay, previous: &MarketDay, scaling: &ScalingState) -> Result<Self> {
        check_consecutive(day, previous)?;
        let mut values = Vec::with_capacity(KNN_CONDITION_DIM);
        values.extend(day.wind.iter().map(|&v| scaling.scale_power(Channel::Wind, v)));
        values.extend(day.solar.iter().map(|&v| scaling.scale_power(Channel::Solar, v)));
        values.extend(day.load.iter().map(|&v| scaling.scale_power(Channel::Load, v)));
        values.extend(previous.price.iter().map(|&p| scaling.scale_price(p)));
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub date: NaiveDate,
    pub price: Profile,
    pub condition: Option<KnnCondition>,
}

/// Past price realizations available on a query date.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryPool {
    query_date: NaiveDate,
    entries: Vec<PoolEntry>,
}

impl HistoryPool {
    /// Every day in `days` strictly before `query_date`. Days whose
    /// predecessor is present also carry a KNN condition under `scaling`.
    pub fn before(days: &[MarketDay], query_date: NaiveDate, scaling: &ScalingState) -> Result<Self> {
        let mut past: Vec<MarketDay> = days.iter().filter(|d| d.date < query_date).cloned().collect();
        past.sort_by_key(|d| d.date);
        let mut entries: Vec<PoolEntry> = past
            .iter()
            .map(|d| PoolEntry {
                date: d.date,
                price: d.price,
                condition: None,
            })
            .collect();
        for (d, p) in consecutive_pairs(&past) {
            let cond = KnnCondition::from_days(d, p, scaling)?;
            if let Ok(i) = entries.binary_search_by_key(&d.date, |e| e.date) {
                entries[i].condition = Some(cond);
            }
        }
        Self::from_entries(query_date, entries)
    }

    pub fn from_entries(query_date: NaiveDate, mut entries: Vec<PoolEntry>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.date >= query_date) {
            return Err(Error::Config(format!("pool entry {} is not before query date {query_date}", e.date)));
        }
        entries.sort_by_key(|e| e.date);
        Ok(Self { query_date, entries })
    }

    /// The same pool as seen from an earlier (or equal) query date.
    pub fn restricted_to(&self, query_date: NaiveDate) -> Self {
        let end = self.entries.partition_point(|e| e.date < query_date);
        Self {
            query_date: query_date.min(self.query_date),
            entries: self.entries[..end].to_vec(),
        }
    }

    pub fn query_date(&self) -> NaiveDate {
        self.query_date
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_date(&self) -> Option<NaiveDate> {
        self.entries.last().map(|e| e.date)
    }
}

/// `n` pool profiles drawn uniformly with replacement.
pub fn uninformed_sample(pool: &HistoryPool, n: usize, rng: &mut Rng) -> Result<ScenarioSet> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut out = Matrix::zeros(n, HOURS);
    for r in 0..n {
        out.row_mut(r).copy_from_slice(&pool.entries[rng.index(pool.len())].price);
    }
    ScenarioSet::new(pool.query_date, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub scenarios: ScenarioSet,
    pub neighbours: Vec<NaiveDate>,
    /// Fewer than `k` conditioned pool days were available.
    pub shortfall: bool,
}

/// Price profiles of the `k` pool days whose condition is closest to
/// `query` in Euclidean distance; ties go to the earlier day.
pub fn knn_sample(pool: &HistoryPool, query: &KnnCondition, k: usize) -> Result<KnnResult> {
    let mut scored: Vec<(f64, &PoolEntry)> = pool
        .entries
        .iter()
        .filter_map(|e| {
            e.condition.as_ref().map(|c| {
                let d2: f64 = c.0.iter().zip(&query.0).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, e)
            })
        })
        .collect();
    if scored.is_empty() || k == 0 {
        return Err(Error::EmptyPool);
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.date.cmp(&b.1.date)));
    let shortfall = scored.len() < k;
    if shortfall {
        log::warn!("KNN pool for {} holds {} conditioned days, fewer than k = {k}", pool.query_date, scored.len());
    }
    scored.truncate(k);
    let profiles: Vec<Profile> = scored.iter().map(|(_, e)| e.price).collect();
    Ok(KnnResult {
        scenarios: ScenarioSet::from_profiles(pool.query_date, &profiles)?,
        neighbours: scored.iter().map(|(_, e)| e.date).collect(),
        shortfall,
    })
}
