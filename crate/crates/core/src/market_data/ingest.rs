//! Hourly CSV ingestion into local-calendar [`MarketDay`] records.
//!
//! Each local day is first laid out on its UTC hour grid (23, 24 or 25
//! slots depending on daylight saving). Up to two missing slots per channel
//! are linearly interpolated; more than that drops the day. The slots are
//! then folded onto the 24 local clock hours: a repeated autumn hour is
//! averaged, the skipped spring hour is filled with the mean of its
//! neighbours.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Timelike, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use super::{HourlyPoint, MarketDay, Profile, HOURS};
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 6] = [
    "timestamp",
    "price_eur_mwh",
    "load_forecast_mw",
    "wind_onshore_mw",
    "wind_offshore_mw",
    "solar_mw",
];

const MAX_MISSING_PER_CHANNEL: usize = 2;
const CHANNELS: [&str; 4] = ["price", "wind", "solar", "load"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestEventKind {
    /// Spring-forward day; the skipped local hour was filled.
    DstFill,
    /// Fall-back day; the repeated local hour was averaged.
    DstMerge,
    /// Missing hours linearly interpolated.
    Interpolated,
    /// Day dropped.
    Excluded,
}

/// One imputation or exclusion, emitted as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestEvent {
    pub date: NaiveDate,
    pub kind: IngestEventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    /// Local clock hours for DST events, UTC slot indices within the day otherwise.
    pub hours: Vec<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    pub days: Vec<MarketDay>,
    pub events: Vec<IngestEvent>,
}

impl IngestOutcome {
    pub fn excluded_dates(&self) -> Vec<NaiveDate> {
        self.events
            .iter()
            .filter(|e| e.kind == IngestEventKind::Excluded)
            .map(|e| e.date)
            .collect()
    }

    /// Events as JSON lines.
    pub fn event_log(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, tz: Tz) -> Result<IngestOutcome> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_reader(file, tz)
}

/// Hourly row with possibly missing cells.
struct RawRow {
    line: u64,
    timestamp: DateTime<Utc>,
    // price, wind, solar, load
    values: [Option<f64>; 4],
}

pub fn ingest_reader<R: Read>(reader: R, tz: Tz) -> Result<IngestOutcome> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyInput("file has no header row".into()));
    }
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }

    let mut rows: BTreeMap<DateTime<Utc>, RawRow> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row = parse_row(&record, &idx, line)?;
        if let Some(prev) = rows.get(&row.timestamp) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate timestamp {} (first seen on line {})", row.timestamp, prev.line),
            });
        }
        rows.insert(row.timestamp, row);
    }
    let (first, last) = match (rows.keys().next(), rows.keys().next_back()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::EmptyInput("no data rows".into())),
    };

    let mut outcome = IngestOutcome::default();
    let mut date = first.with_timezone(&tz).date_naive();
    let last_date = last.with_timezone(&tz).date_naive();
    while date <= last_date {
        if let Some(day) = assemble_day(date, tz, &rows, &mut outcome.events) {
            outcome.days.push(day);
        }
        date = date.succ_opt().expect("date overflow");
    }
    Ok(outcome)
}

fn parse_row(record: &csv::StringRecord, idx: &[usize; 6], line: u64) -> Result<RawRow> {
    let field = |i: usize| record.get(idx[i]).unwrap_or("");
    let ts_text = field(0);
    let timestamp = parse_timestamp(ts_text).ok_or_else(|| Error::Parse {
        line,
        message: format!("invalid timestamp `{ts_text}`"),
    })?;
    if timestamp.minute() != 0 || timestamp.second() != 0 || timestamp.nanosecond() != 0 {
        return Err(Error::Parse {
            line,
            message: format!("timestamp `{ts_text}` is not on a whole hour"),
        });
    }
    let mut nums = [None; 5];
    for (k, slot) in nums.iter_mut().enumerate() {
        let text = field(k + 1);
        if text.is_empty() {
            continue;
        }
        let v: f64 = text.parse().map_err(|_| Error::Parse {
            line,
            message: format!("column `{}`: cannot parse `{text}` as a number", CSV_COLUMNS[k + 1]),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("column `{}`: non-finite value", CSV_COLUMNS[k + 1]),
            });
        }
        // every column after the price is a power quantity
        if k > 0 && v < 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("column `{}`: negative power {v}", CSV_COLUMNS[k + 1]),
            });
        }
        *slot = Some(v);
    }
    let [price, load, onshore, offshore, solar] = nums;
    let wind = match (onshore, offshore) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };
    Ok(RawRow {
        line,
        timestamp,
        values: [price, wind, solar, load],
    })
}

fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%:z", "%Y-%m-%d %H:%M%:z", "%Y-%m-%dT%H:%M%:z"] {
        if let Ok(t) = DateTime::parse_from_str(text, fmt) {
            return Some(t.with_timezone(&Utc));
        }
    }
    None
}

fn local_midnight(date: NaiveDate, tz: Tz) -> DateTime<Utc> {
    let naive = date.and_hms_opt(0, 0, 0).unwrap();
    tz.from_local_datetime(&naive)
        .earliest()
        // zones that skip local midnight start the day at 01:00
        .or_else(|| tz.from_local_datetime(&(naive + Duration::hours(1))).earliest())
        .expect("local midnight exists")
        .with_timezone(&Utc)
}

fn assemble_day(
    date: NaiveDate,
    tz: Tz,
    rows: &BTreeMap<DateTime<Utc>, RawRow>,
    events: &mut Vec<IngestEvent>,
) -> Option<MarketDay> {
    let start = local_midnight(date, tz);
    let end = local_midnight(date.succ_opt()?, tz);
    let n_slots = ((end - start).num_hours()) as usize;
    let slots: Vec<DateTime<Utc>> = (0..n_slots).map(|k| start + Duration::hours(k as i64)).collect();

    // channel-major grid of slot values
    let mut grid: Vec<Vec<Option<f64>>> = (0..CHANNELS.len())
        .map(|c| slots.iter().map(|t| rows.get(t).and_then(|r| r.values[c])).collect())
        .collect();

    let mut excluded = false;
    for (c, values) in grid.iter().enumerate() {
        let missing: Vec<usize> = (0..n_slots).filter(|&k| values[k].is_none()).collect();
        if missing.len() > MAX_MISSING_PER_CHANNEL {
            events.push(IngestEvent {
                date,
                kind: IngestEventKind::Excluded,
                channel: Some(CHANNELS[c].into()),
                hours: missing.clone(),
                detail: format!("{} of {n_slots} hours missing", missing.len()),
            });
            excluded = true;
        }
    }
    if excluded {
        log::warn!("excluding {date}: too many missing hours");
        return None;
    }

    for (c, values) in grid.iter_mut().enumerate() {
        let missing: Vec<usize> = (0..n_slots).filter(|&k| values[k].is_none()).collect();
        if missing.is_empty() {
            continue;
        }
        interpolate_gaps(values);
        events.push(IngestEvent {
            date,
            kind: IngestEventKind::Interpolated,
            channel: Some(CHANNELS[c].into()),
            hours: missing,
            detail: "linear interpolation between neighbouring hours".into(),
        });
    }

    // fold UTC slots onto local clock hours
    let local_hours: Vec<usize> = slots.iter().map(|t| t.with_timezone(&tz).hour() as usize).collect();
    let mut profiles = [[0.0; HOURS]; 4];
    let mut counts = [0usize; HOURS];
    for &h in &local_hours {
        counts[h] += 1;
    }
    for (c, values) in grid.iter().enumerate() {
        let mut sums = [0.0; HOURS];
        for (k, &h) in local_hours.iter().enumerate() {
            sums[h] += values[k].expect("interpolated");
        }
        for h in 0..HOURS {
            if counts[h] > 0 {
                profiles[c][h] = sums[h] / counts[h] as f64;
            }
        }
        for h in 0..HOURS {
            if counts[h] == 0 {
                profiles[c][h] = fill_from_neighbours(&profiles[c], &counts, h);
            }
        }
    }

    let merged: Vec<usize> = (0..HOURS).filter(|&h| counts[h] > 1).collect();
    if !merged.is_empty() {
        events.push(IngestEvent {
            date,
            kind: IngestEventKind::DstMerge,
            channel: None,
            hours: merged,
            detail: format!("{n_slots}-hour day; repeated hour averaged"),
        });
    }
    let filled: Vec<usize> = (0..HOURS).filter(|&h| counts[h] == 0).collect();
    if !filled.is_empty() {
        events.push(IngestEvent {
            date,
            kind: IngestEventKind::DstFill,
            channel: None,
            hours: filled,
            detail: format!("{n_slots}-hour day; skipped hour filled with neighbour mean"),
        });
    }

    let [price, wind, solar, load] = profiles;
    Some(MarketDay {
        date,
        price,
        wind,
        solar,
        load,
    })
}

fn fill_from_neighbours(profile: &Profile, counts: &[usize; HOURS], h: usize) -> f64 {
    let below = (0..h).rev().find(|&k| counts[k] > 0).map(|k| profile[k]);
    let above = (h + 1..HOURS).find(|&k| counts[k] > 0).map(|k| profile[k]);
    match (below, above) {
        (Some(a), Some(b)) => 0.5 * (a + b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => 0.0,
    }
}

/// Linear interpolation of interior gaps; edge gaps copy the nearest value.
fn interpolate_gaps(values: &mut [Option<f64>]) {
    let known: Vec<usize> = (0..values.len()).filter(|&k| values[k].is_some()).collect();
    if known.is_empty() {
        return;
    }
    for k in 0..values.len() {
        if values[k].is_some() {
            continue;
        }
        let lo = known.iter().rev().find(|&&j| j < k).copied();
        let hi = known.iter().find(|&&j| j > k).copied();
        values[k] = Some(match (lo, hi) {
            (Some(a), Some(b)) => {
                let (va, vb) = (values[a].unwrap(), values[b].unwrap());
                va + (vb - va) * (k - a) as f64 / (b - a) as f64
            }
            (Some(a), None) => values[a].unwrap(),
            (None, Some(b)) => values[b].unwrap(),
            (None, None) => unreachable!(),
        });
    }
}

/// Parsed rows without day assembly; used by tooling that wants the raw feed.
pub fn read_points<R: Read>(reader: R) -> Result<Vec<HourlyPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row = parse_row(&record, &idx, line)?;
        if let [Some(price), Some(wind), Some(solar), Some(load)] = row.values {
            out.push(HourlyPoint {
                timestamp: row.timestamp,
                price,
                load_forecast: load,
                wind_forecast: wind,
                solar_forecast: solar,
            });
        }
    }
    Ok(out)
}
