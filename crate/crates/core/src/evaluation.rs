//! Point and probabilistic scores, normalized cross-series aggregates,
//! reliability tables and persistence baselines.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::dataset::{ts_serde, Dataset};
use crate::error::{Error, Result};
use crate::quantile::{pinball, validate_levels};

/// Minimum observations for a reliability estimate.
pub const MIN_RELIABILITY_OBS: usize = 30;

fn check_aligned(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Data("empty forecast window".into()));
    }
    if y.len() != yhat.len() {
        return Err(Error::Data(format!("{} observations but {} forecasts", y.len(), yhat.len())));
    }
    Ok(())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_aligned(y, yhat)?;
    Ok((y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_aligned(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Ranked probability score: pinball losses weighted by `q_{i+1} - q_{i-1}`
/// with `q_0 = 0` and `q_{l+1} = 1`.
pub fn rps(levels: &[f64], values: &[f64], y: f64) -> Result<f64> {
    validate_levels(levels)?;
    if levels.len() != values.len() {
        return Err(Error::Data(format!("{} levels but {} quantile values", levels.len(), values.len())));
    }
    Ok(rps_weights(levels)
        .iter()
        .zip(levels.iter().zip(values))
        .map(|(w, (q, v))| w * pinball(y, *v, *q))
        .sum())
}

pub fn rps_weights(levels: &[f64]) -> Vec<f64> {
    let l = levels.len();
    (0..l)
        .map(|i| {
            let hi = if i + 1 < l { levels[i + 1] } else { 1.0 };
            let lo = if i > 0 { levels[i - 1] } else { 0.0 };
            hi - lo
        })
        .collect()
}

/// Per-series sums from which every normalized aggregate is recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScores {
    pub series_id: String,
    pub n: usize,
    pub y_mean: f64,
    /// Sum of squared and absolute forecast errors.
    pub sse: f64,
    pub sae: f64,
    /// Same sums for the window-mean predictor.
    pub sst: f64,
    pub sad: f64,
    /// Sum of per-step RPS, when quantiles are available.
    pub rps_sum: Option<f64>,
}

impl SeriesScores {
    pub fn compute(series_id: &str, y: &[f64], mean: &[f64], quantiles: Option<(&[f64], &[Vec<f64>])>) -> Result<Self> {
        check_aligned(y, mean)?;
        let n = y.len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let sse = y.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum();
        let sae = y.iter().zip(mean).map(|(a, b)| (a - b).abs()).sum();
        let sst = y.iter().map(|a| (a - y_mean).powi(2)).sum();
        let sad = y.iter().map(|a| (a - y_mean).abs()).sum();
        let rps_sum = match quantiles {
            Some((levels, rows)) => {
                if rows.len() != n {
                    return Err(Error::Data(format!("{n} observations but {} quantile rows", rows.len())));
                }
                let mut s = 0.0;
                for (row, yt) in rows.iter().zip(y) {
                    s += rps(levels, row, *yt)?;
                }
                Some(s)
            }
            None => None,
        };
        Ok(Self { series_id: series_id.to_string(), n, y_mean, sse, sae, sst, sad, rps_sum })
    }

    pub fn rmse(&self) -> f64 {
        (self.sse / self.n as f64).sqrt()
    }

    pub fn mae(&self) -> f64 {
        self.sae / self.n as f64
    }

    pub fn rps(&self) -> Option<f64> {
        self.rps_sum.map(|s| s / self.n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub nrmse: f64,
    pub nmae: f64,
    pub nrps: Option<f64>,
}

impl Aggregate {
    pub fn from_components(series: &[SeriesScores]) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::Data("no series to aggregate".into()));
        }
        for s in series {
            if !(s.sst > 0.0 && s.sad > 0.0) {
                return Err(Error::Data(format!("series `{}` is constant on the test window", s.series_id)));
            }
        }
        let n = series.len() as f64;
        let nrmse = (series.iter().map(|s| s.sse / s.sst).sum::<f64>() / n).sqrt();
        let nmae = series.iter().map(|s| s.sae / s.sad).sum::<f64>() / n;
        let nrps = series
            .iter()
            .map(|s| s.rps_sum.map(|r| r / s.sad))
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        Ok(Self { nrmse, nmae, nrps })
    }
}

/// `sqrt(mean_i SSE_i / SST_i)` over series given as `(y, forecast)` pairs.
pub fn nrmse(series: &[(&[f64], &[f64])]) -> Result<f64> {
    Ok(aggregate_points(series)?.nrmse)
}

pub fn nmae(series: &[(&[f64], &[f64])]) -> Result<f64> {
    Ok(aggregate_points(series)?.nmae)
}

fn aggregate_points(series: &[(&[f64], &[f64])]) -> Result<Aggregate> {
    let comps = series
        .iter()
        .enumerate()
        .map(|(i, (y, f))| SeriesScores::compute(&i.to_string(), y, f, None))
        .collect::<Result<Vec<_>>>()?;
    Aggregate::from_components(&comps)
}

/// Mean over series of total RPS divided by the absolute deviation of y from
/// its window mean. Series are `(y, quantile rows)`.
pub fn nrps(levels: &[f64], series: &[(&[f64], &[Vec<f64>])]) -> Result<f64> {
    let comps = series
        .iter()
        .enumerate()
        .map(|(i, (y, rows))| SeriesScores::compute(&i.to_string(), y, y, Some((levels, rows))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Aggregate::from_components(&comps)?.nrps.expect("quantiles supplied"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub level: f64,
    pub n: usize,
    /// Fraction of steps with `y <= quantile forecast`.
    pub frequency: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

/// Observed frequency of `y <= forecast` with its binomial 95% band.
pub fn reliability(values: &[f64], y: &[f64], q: f64) -> Result<ReliabilityRow> {
    check_aligned(y, values)?;
    let n = y.len();
    if n < MIN_RELIABILITY_OBS {
        return Err(Error::Data(format!("{n} observations for reliability (need {MIN_RELIABILITY_OBS})")));
    }
    let hits = y.iter().zip(values).filter(|(a, b)| a <= b).count();
    let (band_lo, band_hi) = band(q, n);
    Ok(ReliabilityRow { level: q, n, frequency: hits as f64 / n as f64, band_lo, band_hi })
}

fn band(q: f64, n: usize) -> (f64, f64) {
    let half = 1.96 * (q * (1.0 - q) / n as f64).sqrt();
    (q - half, q + half)
}

/// Merges per-series rows of one level into a single row over all their
/// observations.
pub fn pool_reliability(rows: &[ReliabilityRow]) -> Result<ReliabilityRow> {
    let first = rows.first().ok_or_else(|| Error::Data("no reliability rows to pool".into()))?;
    if rows.iter().any(|r| r.level != first.level) {
        return Err(Error::Data("pooling reliability rows of different levels".into()));
    }
    let n: usize = rows.iter().map(|r| r.n).sum();
    let hits: f64 = rows.iter().map(|r| (r.frequency * r.n as f64).round()).sum();
    let (band_lo, band_hi) = band(first.level, n);
    Ok(ReliabilityRow { level: first.level, n, frequency: hits / n as f64, band_lo, band_hi })
}

/// Reliability restricted to steps whose time of day is `time_of_day`.
pub fn reliability_at(
    timestamps: &[NaiveDateTime],
    values: &[f64],
    y: &[f64],
    q: f64,
    time_of_day: Option<NaiveTime>,
) -> Result<ReliabilityRow> {
    match time_of_day {
        None => reliability(values, y, q),
        Some(tod) => {
            let keep: Vec<usize> = (0..timestamps.len()).filter(|&i| timestamps[i].time() == tod).collect();
            let v: Vec<f64> = keep.iter().map(|&i| values[i]).collect();
            let o: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
            reliability(&v, &o, q)
        }
    }
}

/// One-sample Kolmogorov-Smirnov statistic of `u` against the uniform law.
pub fn ks_uniform(u: &[f64]) -> f64 {
    let mut u = u.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).max((i + 1) as f64 / n - v))
        .fold(0.0, f64::max)
}

/// `y_{t - lag}` for each row (None when that timestamp is absent).
pub fn persistence(d: &Dataset, lag: usize, delay: usize) -> Result<Vec<Option<f64>>> {
    if lag <= delay {
        return Err(Error::Config(format!("persistence lag {lag} must exceed the delay {delay}")));
    }
    let back = d.step() * lag as i32;
    Ok(d.timestamps().iter().map(|&t| d.index_of(t - back).map(|j| d.target()[j])).collect())
}

/// Forecast of one series at one step; `quantiles` follow the run's level set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    #[serde(with = "ts_serde")]
    pub timestamp: NaiveDateTime,
    pub series_id: String,
    pub mean: f64,
    pub quantiles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub label: String,
    pub series: Vec<SeriesScores>,
    pub aggregate: Aggregate,
    /// Pooled over series; empty without quantiles or with too few observations.
    pub reliability: Vec<ReliabilityRow>,
    pub reliability_by_series: BTreeMap<String, Vec<ReliabilityRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub levels: Vec<f64>,
    /// Time-of-day filter applied to the reliability tables.
    pub reliability_filter: Option<String>,
    pub windows: Vec<WindowReport>,
}

/// Observations and forecasts of one series over one window.
pub struct SeriesWindow<'a> {
    pub series_id: &'a str,
    pub y: &'a [f64],
    pub records: &'a [ForecastRecord],
}

pub fn evaluate_window(
    label: &str,
    levels: &[f64],
    series: &[SeriesWindow<'_>],
    time_of_day: Option<NaiveTime>,
) -> Result<WindowReport> {
    let with_q = !levels.is_empty();
    let mut scores = Vec::with_capacity(series.len());
    let mut by_series = BTreeMap::new();
    let mut pooled: Vec<(Vec<NaiveDateTime>, Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
    for s in series {
        let mean: Vec<f64> = s.records.iter().map(|r| r.mean).collect();
        let rows: Vec<Vec<f64>> = s.records.iter().map(|r| r.quantiles.clone()).collect();
        if rows.iter().any(|r| r.len() != levels.len()) {
            return Err(Error::Data(format!("series `{}`: quantile rows do not match the level set", s.series_id)));
        }
        let q = with_q.then_some((levels, rows.as_slice()));
        scores.push(SeriesScores::compute(s.series_id, s.y, &mean, q)?);
        if with_q {
            let ts: Vec<NaiveDateTime> = s.records.iter().map(|r| r.timestamp).collect();
            let table = reliability_table(levels, &ts, &rows, s.y, time_of_day);
            if let Ok(t) = table {
                by_series.insert(s.series_id.to_string(), t);
            }
            pooled.push((ts, rows, s.y.to_vec()));
        }
    }
    let aggregate = Aggregate::from_components(&scores)?;
    let reliability = if with_q {
        let ts: Vec<NaiveDateTime> = pooled.iter().flat_map(|p| p.0.iter().copied()).collect();
        let rows: Vec<Vec<f64>> = pooled.iter().flat_map(|p| p.1.iter().cloned()).collect();
        let y: Vec<f64> = pooled.iter().flat_map(|p| p.2.iter().copied()).collect();
        // Too few observations leaves the table empty rather than failing the window.
        reliability_table(levels, &ts, &rows, &y, time_of_day).unwrap_or_default()
    } else {
        Vec::new()
    };
    Ok(WindowReport { label: label.to_string(), series: scores, aggregate, reliability, reliability_by_series: by_series })
}

fn reliability_table(
    levels: &[f64],
    ts: &[NaiveDateTime],
    rows: &[Vec<f64>],
    y: &[f64],
    time_of_day: Option<NaiveTime>,
) -> Result<Vec<ReliabilityRow>> {
    levels
        .iter()
        .enumerate()
        .map(|(k, &q)| {
            let v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            reliability_at(ts, &v, y, q, time_of_day)
        })
        .collect()
}

impl EvaluationReport {
    /// Checks that every stored aggregate is reproduced from its components.
    pub fn verify(&self) -> Result<()> {
        for w in &self.windows {
            if Aggregate::from_components(&w.series)? != w.aggregate {
                return Err(Error::Integrity(format!("window `{}`: aggregate does not match components", w.label)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-series metrics: window,series,n,rmse,mae,rps.
    pub fn write_series_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["window", "series", "n", "rmse", "mae", "rps"])?;
        for win in &self.windows {
            for s in &win.series {
                out.write_record([
                    win.label.clone(),
                    s.series_id.clone(),
                    s.n.to_string(),
                    fmt(s.rmse()),
                    fmt(s.mae()),
                    s.rps().map(fmt).unwrap_or_default(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Aggregates: window,nrmse,nmae,nrps.
    pub fn write_aggregate_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["window", "nrmse", "nmae", "nrps"])?;
        for win in &self.windows {
            let a = &win.aggregate;
            out.write_record([win.label.clone(), fmt(a.nrmse), fmt(a.nmae), a.nrps.map(fmt).unwrap_or_default()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Pooled reliability of one window: level,n,frequency,band_lo,band_hi.
    pub fn write_reliability_csv<W: Write>(&self, window: &str, w: W) -> Result<()> {
        let win = self
            .windows
            .iter()
            .find(|x| x.label == window)
            .ok_or_else(|| Error::Data(format!("no window `{window}` in report")))?;
        write_reliability_rows(&win.reliability, w)
    }
}

pub fn write_reliability_rows<W: Write>(rows: &[ReliabilityRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["level", "n", "frequency", "band_lo", "band_hi"])?;
    for r in rows {
        out.write_record([fmt(r.level), r.n.to_string(), fmt(r.frequency), fmt(r.band_lo), fmt(r.band_hi)])?;
    }
    out.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    crate::dataset::fmt_f64(v)
}
