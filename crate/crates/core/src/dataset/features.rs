use std::collections::{BTreeSet, HashSet};
use std::io::BufRead;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Source name that refers to the dataset target.
pub const TARGET: &str = "target";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagSpec {
    pub source: String,
    /// Delay in grid steps.
    pub delay: usize,
}

/// Mean of `source` over the `window` steps ending `delay` steps ago.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingAverageSpec {
    pub source: String,
    pub delay: usize,
    pub window: usize,
}

/// Product of two same-time covariates (e.g. radiation times installed capacity).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductSpec {
    pub left: String,
    pub right: String,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalendarSpec {
    pub day_of_week: bool,
    pub time_of_day: bool,
    pub time_of_year: bool,
    pub trend: bool,
    pub holidays: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    pub lags: Vec<LagSpec>,
    pub moving_averages: Vec<MovingAverageSpec>,
    pub products: Vec<ProductSpec>,
    pub calendar: CalendarSpec,
    /// Data-availability delay in steps: the target observed at `u` is first
    /// usable by the forecast for `u + delay + 1`.
    pub delay: usize,
    /// Columns removed from the output.
    pub ablations: BTreeSet<String>,
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        // y_u first reaches a forecast at step u + delay + 1.
        let min_target = self.delay + 1;
        for l in &self.lags {
            let min = if l.source == TARGET { min_target } else { self.delay };
            if l.delay < min {
                return Err(Error::Config(format!(
                    "lag of `{}` by {} steps is below the availability delay {min}",
                    l.source, l.delay
                )));
            }
        }
        for m in &self.moving_averages {
            let min = if m.source == TARGET { min_target } else { self.delay };
            if m.delay < min {
                return Err(Error::Config(format!(
                    "moving average of `{}` delayed {} steps is below the availability delay {min}",
                    m.source, m.delay
                )));
            }
            if m.window == 0 {
                return Err(Error::Config(format!("moving average of `{}` has zero window", m.source)));
            }
        }
        for p in &self.products {
            if p.left == TARGET || p.right == TARGET {
                return Err(Error::Config("products cannot use the same-time target".into()));
            }
        }
        Ok(())
    }
}

/// Dates flagged as holidays (or school breaks).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HolidayCalendar {
    dates: HashSet<NaiveDate>,
}

impl HolidayCalendar {
    pub fn new(dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        Self { dates: dates.into_iter().collect() }
    }

    /// One `YYYY-MM-DD` date per line; blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        let mut dates = HashSet::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let s = line.trim();
            if s.is_empty() {
                continue;
            }
            let d = NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map_err(|e| Error::Parse { row: i + 1, message: format!("holiday `{s}`: {e}") })?;
            dates.insert(d);
        }
        Ok(Self { dates })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.dates.contains(&d)
    }
}

/// Fraction of the year, 0 at the first step of January 1st and 1 at the
/// last step of December 31st.
pub fn time_of_year(ts: NaiveDateTime, step_seconds: i64) -> f64 {
    let days = if ts.date().leap_year() { 366.0 } else { 365.0 };
    let frac_day = ts.num_seconds_from_midnight() as f64 / 86_400.0;
    let last_frac = if step_seconds < 86_400 {
        1.0 - step_seconds as f64 / 86_400.0
    } else {
        0.0
    };
    ((ts.ordinal0() as f64 + frac_day) / (days - 1.0 + last_frac)).min(1.0)
}

fn trend_years(ts: NaiveDateTime) -> f64 {
    let epoch = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid").and_hms_opt(0, 0, 0).expect("valid");
    (ts - epoch).num_seconds() as f64 / (365.25 * 86_400.0)
}

fn source<'a>(d: &'a Dataset, name: &str) -> Result<&'a [f64]> {
    if name == TARGET {
        Ok(d.target())
    } else {
        d.require_column(name)
    }
}

/// Adds lag, moving-average, product and calendar columns, then drops the
/// ablated columns. A row whose lagged inputs are missing is flagged
/// unusable and its feature value set to 0.
pub fn build_features(d: &Dataset, spec: &FeatureSpec, holidays: Option<&HolidayCalendar>) -> Result<Dataset> {
    spec.validate()?;
    let n = d.len();
    let step = d.step();
    let mut out = d.clone();

    let max_reach = spec
        .lags
        .iter()
        .map(|l| l.delay)
        .chain(spec.moving_averages.iter().map(|m| m.delay + m.window - 1))
        .max()
        .unwrap_or(0);
    if max_reach >= n && max_reach > 0 {
        return Err(Error::Data(format!(
            "lag reaching {max_reach} steps back exceeds series length {n}"
        )));
    }

    for lag in &spec.lags {
        let src = source(d, &lag.source)?;
        let mut col = vec![0.0; n];
        for t in 0..n {
            let u = d.timestamps()[t] - step * lag.delay as i32;
            match d.index_of(u) {
                Some(j) if d.usable()[j] => col[t] = src[j],
                _ => out.mark_unusable(t),
            }
        }
        out.set_column(format!("{}_lag{}", lag.source, lag.delay), col, false)?;
    }

    for ma in &spec.moving_averages {
        let src = source(d, &ma.source)?;
        let mut col = vec![0.0; n];
        for t in 0..n {
            let mut acc = 0.0;
            let mut ok = true;
            for k in ma.delay..ma.delay + ma.window {
                let u = d.timestamps()[t] - step * k as i32;
                match d.index_of(u) {
                    Some(j) if d.usable()[j] => acc += src[j],
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                col[t] = acc / ma.window as f64;
            } else {
                out.mark_unusable(t);
            }
        }
        out.set_column(format!("{}_ma{}_lag{}", ma.source, ma.window, ma.delay), col, false)?;
    }

    for p in &spec.products {
        let a = d.require_column(&p.left)?;
        let b = d.require_column(&p.right)?;
        let name = p.name.clone().unwrap_or_else(|| format!("{}_x_{}", p.left, p.right));
        out.set_column(name, a.iter().zip(b).map(|(x, y)| x * y).collect(), false)?;
    }

    let cal = &spec.calendar;
    let ts = d.timestamps();
    if cal.day_of_week {
        let dow = ts.iter().map(|t| t.weekday().num_days_from_monday() as f64).collect();
        out.set_column("dow", dow, true)?;
    }
    if cal.time_of_day {
        let secs = step.num_seconds().max(1) as f64;
        let frac = ts.iter().map(|t| t.num_seconds_from_midnight() as f64 / 86_400.0).collect();
        let idx = ts
            .iter()
            .map(|t| (t.num_seconds_from_midnight() as f64 / secs).floor())
            .collect();
        out.set_column("tod", frac, false)?;
        out.set_column("tod_index", idx, true)?;
    }
    if cal.time_of_year {
        let s = step.num_seconds();
        out.set_column("toy", ts.iter().map(|&t| time_of_year(t, s)).collect(), false)?;
    }
    if cal.trend {
        out.set_column("trend", ts.iter().map(|&t| trend_years(t)).collect(), false)?;
    }
    if cal.holidays {
        let h = holidays.ok_or_else(|| Error::Config("holiday feature requested without a calendar".into()))?;
        let col = ts.iter().map(|t| if h.contains(t.date()) { 1.0 } else { 0.0 }).collect();
        out.set_column("holiday", col, true)?;
    }

    for name in &spec.ablations {
        out.remove_column(name);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use chrono::TimeDelta;

    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        super::super::parse_timestamp(s).unwrap()
    }

    fn daily(n: usize) -> Dataset {
        let start = ts("2019-01-01");
        let t = (0..n).map(|i| start + TimeDelta::days(i as i64)).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64).collect();
        let mut cols = BTreeMap::new();
        cols.insert("wind_capacity".to_string(), (0..n).map(|i| i as f64).collect());
        cols.insert("solar_capacity".to_string(), (0..n).map(|i| 2.0 * i as f64).collect());
        cols.insert("temp".to_string(), (0..n).map(|i| (i as f64).sin()).collect());
        Dataset::new("s", t, y, cols).unwrap()
    }

    #[test]
    fn lag_is_shift() {
        let d = daily(30);
        let spec = FeatureSpec {
            lags: vec![LagSpec { source: TARGET.into(), delay: 7 }],
            ..Default::default()
        };
        let f = build_features(&d, &spec, None).unwrap();
        let lag = f.column("target_lag7").unwrap();
        for t in 7..30 {
            assert_eq!(lag[t], d.target()[t - 7]);
            assert!(f.usable()[t]);
        }
        assert!(f.usable()[..7].iter().all(|&u| !u));
    }

    #[test]
    fn time_of_year_endpoints() {
        assert_eq!(time_of_year(ts("2019-01-01"), 86_400), 0.0);
        assert_eq!(time_of_year(ts("2019-12-31"), 86_400), 1.0);
        assert_eq!(time_of_year(ts("2020-12-31"), 86_400), 1.0);
        assert_eq!(time_of_year(ts("2020-01-01T00:00:00"), 1800), 0.0);
        assert_eq!(time_of_year(ts("2020-12-31T23:30:00"), 1800), 1.0);
        let mid = time_of_year(ts("2019-07-02"), 86_400);
        assert!((mid - 182.0 / 364.0).abs() < 1e-15);
    }

    #[test]
    fn ablation_removes_only_named_columns() {
        let d = daily(20);
        let base = FeatureSpec { calendar: CalendarSpec { day_of_week: true, ..Default::default() }, ..Default::default() };
        let ablated = FeatureSpec {
            ablations: ["wind_capacity".to_string(), "solar_capacity".to_string()].into(),
            ..base.clone()
        };
        let full = build_features(&d, &base, None).unwrap();
        let cut = build_features(&d, &ablated, None).unwrap();
        assert!(cut.column("wind_capacity").is_none());
        assert!(cut.column("solar_capacity").is_none());
        for name in cut.column_names() {
            assert_eq!(cut.column(name), full.column(name));
        }
        assert_eq!(full.column_names().count(), cut.column_names().count() + 2);
    }

    #[test]
    fn lag_below_delay_is_rejected() {
        let spec = FeatureSpec {
            delay: 2,
            lags: vec![LagSpec { source: TARGET.into(), delay: 2 }],
            ..Default::default()
        };
        assert!(matches!(build_features(&daily(10), &spec, None), Err(Error::Config(_))));
        let ok = FeatureSpec { lags: vec![LagSpec { source: TARGET.into(), delay: 3 }], ..spec };
        assert!(build_features(&daily(10), &ok, None).is_ok());
    }

    #[test]
    fn lag_longer_than_series_is_an_error() {
        let spec = FeatureSpec { lags: vec![LagSpec { source: TARGET.into(), delay: 10 }], ..Default::default() };
        assert!(matches!(build_features(&daily(10), &spec, None), Err(Error::Data(_))));
    }

    #[test]
    fn unknown_source_is_an_error() {
        let spec = FeatureSpec { lags: vec![LagSpec { source: "nope".into(), delay: 1 }], ..Default::default() };
        assert!(matches!(build_features(&daily(10), &spec, None), Err(Error::Data(_))));
    }

    #[test]
    fn moving_average_and_product() {
        let d = daily(20);
        let spec = FeatureSpec {
            moving_averages: vec![MovingAverageSpec { source: TARGET.into(), delay: 1, window: 3 }],
            products: vec![ProductSpec { left: "temp".into(), right: "wind_capacity".into(), name: None }],
            ..Default::default()
        };
        let f = build_features(&d, &spec, None).unwrap();
        let ma = f.column("target_ma3_lag1").unwrap();
        let y = d.target();
        assert!((ma[10] - (y[9] + y[8] + y[7]) / 3.0).abs() < 1e-12);
        assert!(!f.usable()[2] && f.usable()[3]);
        let p = f.column("temp_x_wind_capacity").unwrap();
        assert_eq!(p[5], (5.0f64).sin() * 5.0);
    }

    #[test]
    fn calendar_columns() {
        let start = ts("2020-03-02T00:00:00"); // a Monday
        let t: Vec<_> = (0..96).map(|i| start + TimeDelta::minutes(30 * i)).collect();
        let d = Dataset::new("s", t, vec![0.0; 96], BTreeMap::new()).unwrap();
        let cal = HolidayCalendar::new([NaiveDate::from_ymd_opt(2020, 3, 3).unwrap()]);
        let spec = FeatureSpec {
            calendar: CalendarSpec { day_of_week: true, time_of_day: true, time_of_year: true, trend: true, holidays: true },
            ..Default::default()
        };
        let f = build_features(&d, &spec, Some(&cal)).unwrap();
        assert_eq!(f.column("dow").unwrap()[0], 0.0);
        assert_eq!(f.column("dow").unwrap()[48], 1.0);
        assert_eq!(f.column("tod").unwrap()[1], 1.0 / 48.0);
        assert_eq!(f.column("tod_index").unwrap()[47], 47.0);
        assert_eq!(f.column("holiday").unwrap()[47], 0.0);
        assert_eq!(f.column("holiday").unwrap()[48], 1.0);
        assert!(f.is_categorical("tod_index") && !f.is_categorical("tod"));
        let trend = f.column("trend").unwrap();
        assert!(trend.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn holidays_without_calendar_is_config_error() {
        let spec = FeatureSpec { calendar: CalendarSpec { holidays: true, ..Default::default() }, ..Default::default() };
        assert!(matches!(build_features(&daily(5), &spec, None), Err(Error::Config(_))));
    }
}
