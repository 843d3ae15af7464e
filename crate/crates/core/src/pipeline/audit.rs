use std::fmt;
use std::io::{Read, Write};

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::dataset::{parse_timestamp, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};

/// Which part of the engine consumed an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    /// A batch fit (normalization, GAM, variance search, offline QR).
    Fit,
    /// Online mean update: a Kalman step or a persistence read.
    Mean,
    /// Online quantile update.
    Quantile,
    /// Scheduled refit of a batch model.
    Refit,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Fit => "fit",
            Component::Mean => "mean",
            Component::Quantile => "quantile",
            Component::Refit => "refit",
        })
    }
}

impl std::str::FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fit" => Component::Fit,
            "mean" => Component::Mean,
            "quantile" => Component::Quantile,
            "refit" => Component::Refit,
            _ => return Err(Error::Data(format!("unknown update component `{s}`"))),
        })
    }
}

/// An update performed at time `at` that read the newest observation
/// `consumed`. Updates at `at` happen after the forecast for `at` is issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateEntry {
    pub at: NaiveDateTime,
    pub consumed: NaiveDateTime,
    pub component: Component,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub checked: usize,
    pub violations: Vec<UpdateEntry>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// The first violation as a [`Error::Lookahead`].
    pub fn into_result(self, step: TimeDelta, delay: usize) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::Lookahead {
                at: v.at.format(TIMESTAMP_FORMAT).to_string(),
                component: v.component.to_string(),
                consumed: v.consumed.format(TIMESTAMP_FORMAT).to_string(),
                allowed: (v.at - step * delay as i32).format(TIMESTAMP_FORMAT).to_string(),
            }),
        }
    }
}

/// Flags every update at `t` that consumed an observation newer than
/// `t - delay * step`.
pub fn audit_no_lookahead(log: &[UpdateEntry], step: TimeDelta, delay: usize) -> AuditReport {
    let lag = step * delay as i32;
    let violations = log.iter().filter(|e| e.consumed > e.at - lag).copied().collect();
    AuditReport { checked: log.len(), violations }
}

/// CSV with columns `at,consumed,component`.
pub fn write_update_log<W: Write>(log: &[UpdateEntry], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["at", "consumed", "component"])?;
    for e in log {
        out.write_record([
            e.at.format(TIMESTAMP_FORMAT).to_string(),
            e.consumed.format(TIMESTAMP_FORMAT).to_string(),
            e.component.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_update_log<R: Read>(r: R) -> Result<Vec<UpdateEntry>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::Parse { row: i + 1, message: "short row".into() });
        let ts = |k: usize| -> Result<NaiveDateTime> {
            parse_timestamp(field(k)?).map_err(|message| Error::Parse { row: i + 1, message })
        };
        out.push(UpdateEntry { at: ts(0)?, consumed: ts(1)?, component: field(2)?.parse()? });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    #[test]
    fn delay_window_is_inclusive() {
        let day = TimeDelta::days(1);
        let ok = UpdateEntry { at: t("2020-01-03"), consumed: t("2020-01-02"), component: Component::Mean };
        assert!(audit_no_lookahead(&[ok], day, 1).passed());
        let same = UpdateEntry { consumed: t("2020-01-03"), ..ok };
        assert!(!audit_no_lookahead(&[same], day, 1).passed());
        // Without delay an update may use the observation of its own step.
        assert!(audit_no_lookahead(&[same], day, 0).passed());
    }

    #[test]
    fn injected_fault_names_timestamp() {
        let day = TimeDelta::days(1);
        let mut log: Vec<UpdateEntry> = (2..20)
            .map(|d| UpdateEntry {
                at: t(&format!("2020-01-{d:02}")),
                consumed: t(&format!("2020-01-{:02}", d - 1)),
                component: Component::Quantile,
            })
            .collect();
        log[9].consumed = log[9].at;
        let report = audit_no_lookahead(&log, day, 1);
        assert_eq!(report.violations.len(), 1);
        let err = report.into_result(day, 1).unwrap_err();
        assert!(err.to_string().contains("2020-01-11T00:00:00"), "{err}");
    }

    #[test]
    fn log_round_trips_through_csv() {
        let log = vec![
            UpdateEntry { at: t("2020-01-02 10:00:00"), consumed: t("2020-01-01 09:00:00"), component: Component::Fit },
            UpdateEntry { at: t("2020-01-03"), consumed: t("2020-01-02"), component: Component::Refit },
        ];
        let mut buf = Vec::new();
        write_update_log(&log, &mut buf).unwrap();
        assert_eq!(read_update_log(buf.as_slice()).unwrap(), log);
    }
}
