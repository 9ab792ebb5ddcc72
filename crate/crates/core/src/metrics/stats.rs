use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ScenarioSet;
use crate::error::{Error, Result};

pub const KL_BINS: usize = 100;
pub const SMOOTHING_EPSILON: f64 = 1e-9;

/// Realization and scenario counts on shared bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_edges: Vec<f64>,
    pub counts_real: Vec<f64>,
    pub counts_scen: Vec<f64>,
    pub smoothing_epsilon: f64,
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("bin edges must be strictly increasing with at least two entries".into()));
    }
    Ok(())
}

/// Bin of `v`; the last bin is closed on the right. Values outside the
/// edges fall in no bin.
fn bin_index(edges: &[f64], v: f64) -> Option<usize> {
    let last = edges.len() - 1;
    if !(v >= edges[0] && v <= edges[last]) {
        return None;
    }
    let i = edges.partition_point(|&e| e <= v);
    Some(i.min(last) - 1)
}

pub fn histogram_counts(values: &[f64], edges: &[f64]) -> Result<Vec<f64>> {
    check_edges(edges)?;
    let mut counts = vec![0.0; edges.len() - 1];
    for &v in values {
        if let Some(i) = bin_index(edges, v) {
            counts[i] += 1.0;
        }
    }
    Ok(counts)
}

/// `bins` equal-width bins spanning `[min, max]` of all values.
pub fn equal_width_edges<'a>(values: impl IntoIterator<Item = &'a f64>, bins: usize) -> Result<Vec<f64>> {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || bins == 0 {
        return Err(Error::EmptyInput("no finite values to bin".into()));
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64).collect();
    edges.push(hi);
    Ok(edges)
}

impl HistogramSpec {
    pub fn with_edges(bin_edges: Vec<f64>, real: &[f64], scen: &[f64]) -> Result<Self> {
        let counts_real = histogram_counts(real, &bin_edges)?;
        let counts_scen = histogram_counts(scen, &bin_edges)?;
        Ok(Self {
            bin_edges,
            counts_real,
            counts_scen,
            smoothing_epsilon: SMOOTHING_EPSILON,
        })
    }

    /// Equal-width bins over the combined range of both samples.
    pub fn from_samples(real: &[f64], scen: &[f64], bins: usize) -> Result<Self> {
        let edges = equal_width_edges(real.iter().chain(scen), bins)?;
        Self::with_edges(edges, real, scen)
    }

    pub fn kl_divergence(&self) -> Result<f64> {
        kl_divergence(self)
    }
}

/// `KL(real || scen)` in nats with `smoothing_epsilon` added to every
/// scenario bin.
pub fn kl_divergence(hist: &HistogramSpec) -> Result<f64> {
    if hist.counts_real.len() != hist.counts_scen.len() {
        return Err(Error::Dimension("histograms with different bin counts".into()));
    }
    if hist.counts_real.iter().chain(&hist.counts_scen).any(|&c| c < 0.0) {
        return Err(Error::Config("negative histogram count".into()));
    }
    let total_real: f64 = hist.counts_real.iter().sum();
    let total_scen: f64 = hist.counts_scen.iter().sum();
    if total_real <= 0.0 || total_scen <= 0.0 {
        return Err(Error::EmptyInput("histogram without mass".into()));
    }
    let eps = hist.smoothing_epsilon;
    let smoothed_total = total_scen + eps * hist.counts_scen.len() as f64;
    let mut kl = 0.0;
    for (&r, &s) in hist.counts_real.iter().zip(&hist.counts_scen) {
        if r > 0.0 {
            let p = r / total_real;
            let q = (s + eps) / smoothed_total;
            kl += p * (p / q).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Normalised central moments. `skewness` and `kurtosis` are `None` for
/// a constant series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: Option<f64>,
    /// Excess kurtosis.
    pub kurtosis: Option<f64>,
}

pub fn moments(series: &[f64]) -> Result<MomentReport> {
    if series.len() < 2 {
        return Err(Error::EmptyInput(format!("moments need at least 2 values, got {}", series.len())));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in series {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let std = m2.sqrt();
    let defined = std > 0.0 && std > 1e-12 * mean.abs();
    Ok(MomentReport {
        n: series.len(),
        mean,
        std,
        skewness: defined.then(|| m3 / m2.powf(1.5)),
        kurtosis: defined.then(|| m4 / (m2 * m2) - 3.0),
    })
}

/// Linearly interpolated quantile (the common "type 7" definition).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("quantile of an empty series".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn check_hours(t1: usize, t2: usize, width: usize) -> Result<()> {
    if t1 >= width || t2 >= width || t1 == t2 {
        return Err(Error::Config(format!("hours ({t1}, {t2}) must be distinct and below {width}")));
    }
    Ok(())
}

pub fn increments<R: AsRef<[f64]>>(profiles: &[R], t1: usize, t2: usize) -> Vec<f64> {
    profiles.iter().map(|p| p.as_ref()[t2] - p.as_ref()[t1]).collect()
}

/// Histogram of `price(t2) - price(t1)` for realizations and pooled
/// scenarios. Edges default to [`KL_BINS`] equal-width bins over both.
pub fn increment_histogram<R: AsRef<[f64]>, S: AsRef<[f64]>>(
    real: &[R],
    scen: &[S],
    t1: usize,
    t2: usize,
    edges: Option<Vec<f64>>,
) -> Result<HistogramSpec> {
    let width = real.first().map_or(super::HOURS, |p| p.as_ref().len());
    check_hours(t1, t2, width)?;
    let dr = increments(real, t1, t2);
    let ds = increments(scen, t1, t2);
    match edges {
        Some(e) => HistogramSpec::with_edges(e, &dr, &ds),
        None => HistogramSpec::from_samples(&dr, &ds, KL_BINS),
    }
}

/// Two-dimensional counts of `(price(t1), price(t2))`, indexed `[x][y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointHistogram {
    pub t1: usize,
    pub t2: usize,
    pub edges_x: Vec<f64>,
    pub edges_y: Vec<f64>,
    pub counts_real: Vec<Vec<f64>>,
    pub counts_scen: Vec<Vec<f64>>,
}

fn joint_counts<R: AsRef<[f64]>>(profiles: &[R], t1: usize, t2: usize, ex: &[f64], ey: &[f64]) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0; ey.len() - 1]; ex.len() - 1];
    for p in profiles {
        let p = p.as_ref();
        if let (Some(i), Some(j)) = (bin_index(ex, p[t1]), bin_index(ey, p[t2])) {
            counts[i][j] += 1.0;
        }
    }
    counts
}

pub fn joint_histogram<R: AsRef<[f64]>, S: AsRef<[f64]>>(
    real: &[R],
    scen: &[S],
    t1: usize,
    t2: usize,
    edges_x: Vec<f64>,
    edges_y: Vec<f64>,
) -> Result<JointHistogram> {
    check_hours(t1, t2, super::HOURS)?;
    check_edges(&edges_x)?;
    check_edges(&edges_y)?;
    if real.iter().map(|p| p.as_ref().len()).chain(scen.iter().map(|p| p.as_ref().len())).any(|l| l <= t1.max(t2)) {
        return Err(Error::Dimension("profile shorter than the requested hours".into()));
    }
    Ok(JointHistogram {
        t1,
        t2,
        counts_real: joint_counts(real, t1, t2, &edges_x, &edges_y),
        counts_scen: joint_counts(scen, t1, t2, &edges_x, &edges_y),
        edges_x,
        edges_y,
    })
}

impl JointHistogram {
    /// Row sums (over `y`) of the given counts.
    pub fn marginal_x(counts: &[Vec<f64>]) -> Vec<f64> {
        counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_y(counts: &[Vec<f64>]) -> Vec<f64> {
        let cols = counts.first().map_or(0, Vec::len);
        (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub date: NaiveDate,
    pub hour: usize,
    pub abs_error_of_mean: f64,
    pub scenario_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub rows: Vec<UncertaintyRow>,
    /// Pearson correlation of error and spread; `None` when either is constant.
    pub correlation: Option<f64>,
}

/// Hourly absolute error of the scenario mean against the hourly scenario
/// spread, for every scored day.
pub fn uncertainty_report<'a>(days: impl IntoIterator<Item = (&'a [f64], &'a ScenarioSet)>) -> Result<UncertaintyReport> {
    let mut rows = Vec::new();
    for (realized, set) in days {
        if realized.len() != set.scenarios().cols() {
            return Err(Error::Dimension(format!("realization for {} has {} hours", set.date(), realized.len())));
        }
        let mean = set.mean_profile();
        let std = set.std_profile();
        for h in 0..realized.len() {
            rows.push(UncertaintyRow {
                date: set.date(),
                hour: h,
                abs_error_of_mean: (realized[h] - mean[h]).abs(),
                scenario_std: std[h],
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("no scored days".into()));
    }
    let x: Vec<f64> = rows.iter().map(|r| r.scenario_std).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.abs_error_of_mean).collect();
    Ok(UncertaintyReport {
        correlation: pearson(&x, &y),
        rows,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn kl_cases() {
        let mut h = HistogramSpec {
            bin_edges: vec![0.0, 1.0, 2.0],
            counts_real: vec![1.0, 1.0],
            counts_scen: vec![1.0, 3.0],
            smoothing_epsilon: 0.0,
        };
        let expected = 0.5 * 2.0f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&h).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.1438).abs() < 1e-4);
        h.counts_scen = h.counts_real.clone();
        h.smoothing_epsilon = SMOOTHING_EPSILON;
        assert!(kl_divergence(&h).unwrap().abs() < 1e-9);
        h.counts_scen = vec![0.0, 5.0];
        let kl = kl_divergence(&h).unwrap();
        assert!(kl.is_finite() && kl > 0.0);
    }

    #[test]
    fn kl_nonnegative_on_random_histograms() {
        let mut rng = Rng::new(1);
        for _ in 0..200 {
            let a: Vec<f64> = (0..50).map(|_| rng.standard_normal()).collect();
            let b: Vec<f64> = (0..80).map(|_| 0.5 + 2.0 * rng.standard_normal()).collect();
            let h = HistogramSpec::from_samples(&a, &b, KL_BINS).unwrap();
            assert!(kl_divergence(&h).unwrap() >= 0.0);
            assert_eq!(h.counts_real.iter().sum::<f64>(), 50.0);
            assert_eq!(h.counts_scen.iter().sum::<f64>(), 80.0);
        }
    }

    #[test]
    fn moments_cases() {
        let m = moments(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.skewness, Some(0.0));
        assert!((m.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let c = moments(&[4.0; 10]).unwrap();
        assert_eq!((c.std, c.skewness, c.kurtosis), (0.0, None, None));
        assert!(moments(&[1.0]).is_err());
    }

    #[test]
    fn moments_of_standard_normal() {
        let mut rng = Rng::new(2);
        let x = rng.sample_standard_normal(1_000_000);
        let m = moments(&x).unwrap();
        assert!(m.mean.abs() < 0.02);
        assert!((m.std - 1.0).abs() < 0.02);
        assert!(m.skewness.unwrap().abs() < 0.02);
        assert!(m.kurtosis.unwrap().abs() < 0.02);
    }

    #[test]
    fn moments_under_affine_maps() {
        let mut rng = Rng::new(3);
        let x: Vec<f64> = (0..1000).map(|_| rng.standard_normal().exp()).collect();
        let base = moments(&x).unwrap();
        for (a, b) in [(2.5, -3.0), (-0.7, 10.0)] {
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let m = moments(&y).unwrap();
            assert!((m.mean - (a * base.mean + b)).abs() < 1e-10);
            assert!((m.std - a.abs() * base.std).abs() < 1e-10);
            assert!((m.skewness.unwrap() - a.signum() * base.skewness.unwrap()).abs() < 1e-10);
            assert!((m.kurtosis.unwrap() - base.kurtosis.unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn quantile_interpolates() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 4.0);
        assert_eq!(quantile(&v, 0.5).unwrap(), 2.5);
        assert!((quantile(&v, 0.25).unwrap() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn increment_spikes() {
        let flat = vec![[7.0; 24]; 10];
        let h = increment_histogram(&flat, &flat, 3, 9, None).unwrap();
        let nonzero: Vec<usize> = (0..h.counts_real.len()).filter(|&i| h.counts_real[i] > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        let i = nonzero[0];
        assert!(h.bin_edges[i] <= 0.0 && 0.0 <= h.bin_edges[i + 1]);

        let shifted: Vec<[f64; 24]> = (0..10)
            .map(|d| std::array::from_fn(|t| d as f64 + if t == 9 { 5.0 } else { 0.0 }))
            .collect();
        let h = increment_histogram(&shifted, &shifted, 3, 9, Some(vec![0.0, 4.5, 5.5, 10.0])).unwrap();
        assert_eq!(h.counts_real, vec![0.0, 10.0, 0.0]);
    }

    #[test]
    fn increment_counts_match_naive_loop() {
        let mut rng = Rng::new(4);
        let real: Vec<Vec<f64>> = (0..300).map(|_| rng.sample_standard_normal(24)).collect();
        let scen: Vec<Vec<f64>> = (0..500).map(|_| rng.sample_standard_normal(24)).collect();
        let edges: Vec<f64> = (0..=20).map(|i| -4.0 + 0.4 * i as f64).collect();
        let h = increment_histogram(&real, &scen, 5, 17, Some(edges.clone())).unwrap();
        let mut naive = vec![0.0; 20];
        for p in &real {
            let d = p[17] - p[5];
            for b in 0..20 {
                let inside = d >= edges[b] && (d < edges[b + 1] || (b == 19 && d <= edges[20]));
                if inside {
                    naive[b] += 1.0;
                }
            }
        }
        assert_eq!(h.counts_real, naive);
    }

    #[test]
    fn joint_histogram_properties() {
        let mut rng = Rng::new(5);
        let edges: Vec<f64> = (0..=10).map(|i| -3.0 + 0.6 * i as f64).collect();
        let equal: Vec<[f64; 24]> = (0..500)
            .map(|_| {
                let v = rng.standard_normal().clamp(-2.9, 2.9);
                [v; 24]
            })
            .collect();
        let j = joint_histogram(&equal, &equal, 2, 20, edges.clone(), edges.clone()).unwrap();
        for (x, row) in j.counts_real.iter().enumerate() {
            for (y, &c) in row.iter().enumerate() {
                if x != y {
                    assert_eq!(c, 0.0);
                }
            }
        }

        let indep: Vec<Vec<f64>> = (0..20_000).map(|_| rng.sample_standard_normal(24)).collect();
        let j = joint_histogram(&indep, &indep, 2, 20, edges.clone(), edges.clone()).unwrap();
        let mx = JointHistogram::marginal_x(&j.counts_real);
        let my = JointHistogram::marginal_y(&j.counts_real);
        let col = |t: usize| indep.iter().map(|p| p[t]).collect::<Vec<_>>();
        let hx = histogram_counts(&col(2), &edges).unwrap();
        let hy = histogram_counts(&col(20), &edges).unwrap();
        // marginals agree with 1-D histograms for profiles inside both ranges
        let both = |p: &Vec<f64>| bin_index(&edges, p[2]).is_some() && bin_index(&edges, p[20]).is_some();
        let inside: Vec<Vec<f64>> = indep.iter().filter(|p| both(p)).cloned().collect();
        let ix = histogram_counts(&inside.iter().map(|p| p[2]).collect::<Vec<_>>(), &edges).unwrap();
        let iy = histogram_counts(&inside.iter().map(|p| p[20]).collect::<Vec<_>>(), &edges).unwrap();
        assert_eq!(mx, ix);
        assert_eq!(my, iy);
        // product structure: the joint mass is close to the outer product of marginals
        let n = inside.len() as f64;
        let mut worst: f64 = 0.0;
        for x in 0..10 {
            for y in 0..10 {
                let expected = hx[x] * hy[y] / (indep.len() as f64 * indep.len() as f64) * n;
                worst = worst.max((j.counts_real[x][y] - expected).abs() / n);
            }
        }
        assert!(worst < 0.01, "{worst}");
    }

    #[test]
    fn uncertainty_report_cases() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let set = ScenarioSet::from_profiles(d, &[[1.0; 24], [1.0; 24]]).unwrap();
        let realized = [3.0; 24];
        let r = uncertainty_report([(&realized[..], &set), (&realized[..], &set)]).unwrap();
        assert_eq!(r.rows.len(), 48);
        assert!(r.rows.iter().all(|row| row.scenario_std == 0.0 && row.abs_error_of_mean == 2.0));
        assert_eq!(r.correlation, None);
    }
}
