//! Time-indexed observations, feature construction and train/test splits.

mod features;
mod ingest;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use features::{
    build_features, time_of_year, CalendarSpec, FeatureSpec, HolidayCalendar, LagSpec,
    MovingAverageSpec, ProductSpec,
};
pub use ingest::{load_csv, load_csv_series, parse_timestamp, read_csv, CsvSchema};
pub use synth::{synthesize, RegimeSegment, SynthConfig, SynthOutput};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// One series: strictly increasing timestamps on a constant grid, a target
/// and named covariate columns of the same length.
///
/// Rows may be flagged unusable (a lag without history, a covariate gap too
/// long to interpolate); such rows stay in the timeline but are excluded
/// from fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    series_id: String,
    timestamps: Vec<NaiveDateTime>,
    step: TimeDelta,
    target: Vec<f64>,
    columns: BTreeMap<String, Vec<f64>>,
    categorical: BTreeSet<String>,
    usable: Vec<bool>,
}

impl Dataset {
    pub fn new(
        series_id: impl Into<String>,
        timestamps: Vec<NaiveDateTime>,
        target: Vec<f64>,
        columns: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if target.len() != n {
            return Err(Error::Integrity(format!(
                "target has {} values for {n} timestamps",
                target.len()
            )));
        }
        for (name, col) in &columns {
            if col.len() != n {
                return Err(Error::Integrity(format!(
                    "column `{name}` has {} values for {n} timestamps",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!("column `{name}` has non-finite values")));
            }
        }
        if let Some(i) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!("non-finite target at {}", timestamps[i])));
        }
        let step = grid_step(&timestamps)?;
        Ok(Self {
            series_id: series_id.into(),
            timestamps,
            step,
            target,
            columns,
            categorical: BTreeSet::new(),
            usable: vec![true; n],
        })
    }

    pub fn series_id(&self) -> &str {
        &self.series_id
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn step(&self) -> TimeDelta {
        self.step
    }

    /// Number of grid steps in one day (1 for daily data).
    pub fn steps_per_day(&self) -> usize {
        let s = self.step.num_seconds().max(1);
        ((86_400 + s - 1) / s) as usize
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn require_column(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .ok_or_else(|| Error::Data(format!("unknown column `{name}` in series `{}`", self.series_id)))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn is_categorical(&self, name: &str) -> bool {
        self.categorical.contains(name)
    }

    pub fn usable(&self) -> &[bool] {
        &self.usable
    }

    pub fn usable_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.usable[i]).collect()
    }

    pub fn mark_unusable(&mut self, row: usize) {
        self.usable[row] = false;
    }

    pub fn set_column(&mut self, name: impl Into<String>, values: Vec<f64>, categorical: bool) -> Result<()> {
        let name = name.into();
        if values.len() != self.len() {
            return Err(Error::Integrity(format!(
                "column `{name}` has {} values for {} rows",
                values.len(),
                self.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!("column `{name}` has non-finite values")));
        }
        if categorical {
            self.categorical.insert(name.clone());
        } else {
            self.categorical.remove(&name);
        }
        self.columns.insert(name, values);
        Ok(())
    }

    pub fn remove_column(&mut self, name: &str) -> Option<Vec<f64>> {
        self.categorical.remove(name);
        self.columns.remove(name)
    }

    /// Same rows and columns with a replacement target.
    pub fn with_target(&self, target: Vec<f64>) -> Result<Dataset> {
        if target.len() != self.len() {
            return Err(Error::Integrity(format!("target has {} values for {} rows", target.len(), self.len())));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity("replacement target has non-finite values".into()));
        }
        Ok(Dataset { target, ..self.clone() })
    }

    /// Row index of `ts`, if present.
    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        self.timestamps.binary_search(&ts).ok()
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let end = end.min(self.len());
        let start = start.min(end);
        Dataset {
            series_id: self.series_id.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            step: self.step,
            target: self.target[start..end].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), v[start..end].to_vec()))
                .collect(),
            categorical: self.categorical.clone(),
            usable: self.usable[start..end].to_vec(),
        }
    }

    /// Covariate record at `row`, keyed by column name.
    pub fn row(&self, row: usize) -> BTreeMap<&str, f64> {
        self.columns.iter().map(|(k, v)| (k.as_str(), v[row])).collect()
    }

    /// Canonical CSV: `timestamp,target,<columns...>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_string(), "target".to_string()];
        header.extend(self.columns.keys().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.timestamps[i].format(TIMESTAMP_FORMAT).to_string(),
                fmt_f64(self.target[i]),
            ];
            rec.extend(self.columns.values().map(|c| fmt_f64(c[i])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// SHA-256 of the canonical CSV plus usability flags.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        let mut h = Sha256::new();
        h.update(self.series_id.as_bytes());
        h.update(&buf);
        h.update(self.usable.iter().map(|&u| u as u8).collect::<Vec<_>>());
        hex::encode(h.finalize())
    }
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn grid_step(ts: &[NaiveDateTime]) -> Result<TimeDelta> {
    if ts.len() < 2 {
        return Ok(TimeDelta::days(1));
    }
    let mut step: Option<TimeDelta> = None;
    for w in ts.windows(2) {
        let d = w[1] - w[0];
        if d <= TimeDelta::zero() {
            return Err(Error::Integrity(format!(
                "timestamps not strictly increasing at {}",
                w[1].format(TIMESTAMP_FORMAT)
            )));
        }
        step = Some(match step {
            Some(s) if s <= d => s,
            _ => d,
        });
    }
    let step = step.expect("at least one difference");
    // Gaps left by dropped rows must stay on the grid.
    for w in ts.windows(2) {
        let d = (w[1] - w[0]).num_seconds();
        if d % step.num_seconds().max(1) != 0 {
            return Err(Error::Integrity(format!(
                "timestamp {} is off the {}-second grid",
                w[1].format(TIMESTAMP_FORMAT),
                step.num_seconds()
            )));
        }
    }
    Ok(step)
}

/// A labeled test interval, inclusive on both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestWindow {
    pub label: String,
    #[serde(with = "ts_serde")]
    pub start: NaiveDateTime,
    #[serde(with = "ts_serde")]
    pub end: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// Last timestamp (inclusive) of the training period.
    #[serde(with = "ts_serde")]
    pub train_end: NaiveDateTime,
    pub test_windows: Vec<TestWindow>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.test_windows.is_empty() {
            return Err(Error::Config("split.test_windows is empty".into()));
        }
        let mut sorted: Vec<&TestWindow> = self.test_windows.iter().collect();
        sorted.sort_by_key(|w| w.start);
        for w in &sorted {
            if w.end < w.start {
                return Err(Error::Config(format!("test window `{}` ends before it starts", w.label)));
            }
            if w.start <= self.train_end {
                return Err(Error::Config(format!(
                    "test window `{}` starts before train_end",
                    w.label
                )));
            }
        }
        for p in sorted.windows(2) {
            if p[1].start <= p[0].end {
                return Err(Error::Config(format!(
                    "test windows `{}` and `{}` overlap",
                    p[0].label, p[1].label
                )));
            }
        }
        Ok(())
    }

    /// Window containing `ts`, if any.
    pub fn window_of(&self, ts: NaiveDateTime) -> Option<&TestWindow> {
        self.test_windows.iter().find(|w| w.start <= ts && ts <= w.end)
    }
}

/// Train rows are `timestamp <= train_end`; each window gets the rows it
/// contains. Rows after train_end outside every window are discarded.
pub fn split(d: &Dataset, s: &SplitSpec) -> Result<(Dataset, Vec<(String, Dataset)>)> {
    s.validate()?;
    let n_train = d.timestamps.partition_point(|&t| t <= s.train_end);
    if n_train == 0 {
        return Err(Error::Data(format!(
            "empty training set: train_end {} precedes the first timestamp",
            s.train_end.format(TIMESTAMP_FORMAT)
        )));
    }
    let train = d.slice(0, n_train);
    let mut tests = Vec::with_capacity(s.test_windows.len());
    for w in &s.test_windows {
        let a = d.timestamps.partition_point(|&t| t < w.start);
        let b = d.timestamps.partition_point(|&t| t <= w.end);
        if a >= b {
            return Err(Error::Data(format!("empty test window `{}`", w.label)));
        }
        tests.push((w.label.clone(), d.slice(a, b)));
    }
    Ok((train, tests))
}

pub(crate) mod ts_serde {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::TIMESTAMP_FORMAT;

    pub fn serialize<S: Serializer>(ts: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.format(TIMESTAMP_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_timestamp(&raw).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn daily(n: usize) -> Dataset {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let ts = (0..n).map(|i| start + TimeDelta::days(i as i64)).collect();
        let y = (0..n).map(|i| i as f64).collect();
        Dataset::new("s", ts, y, BTreeMap::new()).unwrap()
    }

    fn spec(train_end: &str, windows: &[(&str, &str, &str)]) -> SplitSpec {
        SplitSpec {
            train_end: parse_timestamp(train_end).unwrap(),
            test_windows: windows
                .iter()
                .map(|(l, a, b)| TestWindow {
                    label: l.to_string(),
                    start: parse_timestamp(a).unwrap(),
                    end: parse_timestamp(b).unwrap(),
                })
                .collect(),
        }
    }

    #[test]
    fn split_counts_rows() {
        let d = daily(100);
        // Row 69 is 2020-03-10.
        let s = spec("2020-03-10", &[("rest", "2020-03-11", "2020-12-31")]);
        let (train, tests) = split(&d, &s).unwrap();
        assert_eq!(train.len(), 70);
        assert_eq!(tests[0].1.len(), 30);
        assert!(train.timestamps().iter().all(|&t| t <= s.train_end));
    }

    #[test]
    fn split_two_labeled_windows_are_disjoint() {
        let d = daily(800);
        let s = spec(
            "2020-06-30",
            &[("2021", "2021-01-01", "2021-12-31"), ("2022", "2022-01-01", "2022-12-31")],
        );
        let (_, tests) = split(&d, &s).unwrap();
        assert_eq!(tests.len(), 2);
        let last_a = *tests[0].1.timestamps().last().unwrap();
        let first_b = tests[1].1.timestamps()[0];
        assert!(last_a < first_b);
    }

    #[test]
    fn split_rejects_empty_train() {
        let d = daily(10);
        let s = spec("2019-01-01", &[("t", "2019-06-01", "2020-12-31")]);
        assert!(matches!(split(&d, &s), Err(Error::Data(_))));
    }

    #[test]
    fn off_grid_timestamp_is_rejected() {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let ts = vec![start, start + TimeDelta::hours(24), start + TimeDelta::hours(60)];
        let r = Dataset::new("s", ts, vec![0.0; 3], BTreeMap::new());
        assert!(matches!(r, Err(Error::Integrity(_))));
    }
}
