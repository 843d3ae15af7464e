use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{Dataset, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};

/// Longest run of missing covariate values that is linearly interpolated.
pub const MAX_INTERPOLATED_GAP: usize = 3;

/// Column roles for CSV ingestion. Every column that is not the timestamp,
/// target or series column becomes a covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub timestamp: String,
    pub target: String,
    #[serde(default)]
    pub series: Option<String>,
    /// Covariates read as category labels and coded 0, 1, ... in sorted label order.
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl CsvSchema {
    pub fn new(timestamp: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            timestamp: timestamp.into(),
            target: target.into(),
            series: None,
            categorical: Vec::new(),
            delimiter: ',',
        }
    }
}

/// Accepts RFC 3339 (converted to UTC), `YYYY-MM-DDTHH:MM:SS` and `YYYY-MM-DD`.
pub fn parse_timestamp(raw: &str) -> std::result::Result<NaiveDateTime, String> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.naive_utc());
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT) {
        return Ok(dt);
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S") {
        return Ok(dt);
    }
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight"));
    }
    Err(format!("malformed timestamp `{raw}`"))
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let mut all = load_csv_series(path, schema)?;
    match all.len() {
        1 => Ok(all.pop().expect("one series")),
        n => Err(Error::Data(format!("expected one series, found {n}"))),
    }
}

pub fn load_csv_series(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<Dataset>> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let default_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    read_csv(file, schema, &default_id)
}

struct RawRow {
    line: usize,
    ts: NaiveDateTime,
    target: Option<f64>,
    values: Vec<Option<String>>,
}

/// Reads one or more series from CSV. Rows are sorted by timestamp; rows
/// with a missing target are dropped; short covariate gaps are
/// interpolated and longer ones leave the row unusable.
pub fn read_csv<R: Read>(input: R, schema: &CsvSchema, default_series: &str) -> Result<Vec<Dataset>> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::Config("csv delimiter must be ASCII".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column `{name}` not in CSV header")))
    };
    let ts_col = find(&schema.timestamp)?;
    let y_col = find(&schema.target)?;
    let series_col = schema.series.as_deref().map(find).transpose()?;
    for c in &schema.categorical {
        find(c)?;
    }
    let cov_cols: Vec<usize> = (0..header.len())
        .filter(|&i| i != ts_col && i != y_col && Some(i) != series_col)
        .collect();

    let mut groups: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row: line, message: e.to_string() })?;
        let get = |c: usize| rec.get(c).unwrap_or("").to_string();
        let ts = parse_timestamp(&get(ts_col)).map_err(|message| Error::Parse { row: line, message })?;
        let target = parse_number(&get(y_col)).map_err(|message| Error::Parse { row: line, message })?;
        let values = cov_cols.iter().map(|&c| non_missing(&get(c))).collect();
        let id = series_col.map(get).unwrap_or_else(|| default_series.to_string());
        groups.entry(id).or_default().push(RawRow { line, ts, target, values });
    }
    if groups.is_empty() {
        return Err(Error::Data("CSV has no data rows".into()));
    }

    let categorical: BTreeSet<&str> = schema.categorical.iter().map(String::as_str).collect();
    groups
        .into_iter()
        .map(|(id, rows)| assemble(id, rows, &header, &cov_cols, &categorical))
        .collect()
}

fn assemble(
    id: String,
    mut rows: Vec<RawRow>,
    header: &[String],
    cov_cols: &[usize],
    categorical: &BTreeSet<&str>,
) -> Result<Dataset> {
    rows.sort_by_key(|r| r.ts);
    for w in rows.windows(2) {
        if w[0].ts == w[1].ts {
            return Err(Error::Integrity(format!(
                "duplicate timestamp {} in series `{id}` (rows {} and {})",
                w[1].ts.format(TIMESTAMP_FORMAT),
                w[0].line,
                w[1].line
            )));
        }
    }
    rows.retain(|r| r.target.is_some());
    if rows.is_empty() {
        return Err(Error::Data(format!("series `{id}` has no observed target")));
    }

    let timestamps: Vec<NaiveDateTime> = rows.iter().map(|r| r.ts).collect();
    let target: Vec<f64> = rows.iter().map(|r| r.target.expect("retained")).collect();
    let mut columns = BTreeMap::new();
    let mut unusable = vec![false; rows.len()];
    let mut cat_names = Vec::new();
    for (k, &c) in cov_cols.iter().enumerate() {
        let name = &header[c];
        let raw: Vec<Option<&str>> = rows.iter().map(|r| r.values[k].as_deref()).collect();
        let parsed: Vec<Option<f64>> = if categorical.contains(name.as_str()) {
            cat_names.push(name.clone());
            let levels: BTreeSet<&str> = raw.iter().flatten().copied().collect();
            let code: BTreeMap<&str, f64> =
                levels.into_iter().enumerate().map(|(i, l)| (l, i as f64)).collect();
            raw.iter().map(|v| v.map(|s| code[s])).collect()
        } else {
            raw.iter()
                .zip(&rows)
                .map(|(v, r)| match v {
                    None => Ok(None),
                    Some(s) => s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                        row: r.line,
                        message: format!("column `{name}`: `{s}` is not a number"),
                    }),
                })
                .collect::<Result<_>>()?
        };
        let filled = fill_gaps(&parsed, &mut unusable)
            .ok_or_else(|| Error::Data(format!("column `{name}` of series `{id}` is entirely missing")))?;
        columns.insert(name.clone(), filled);
    }

    let mut d = Dataset::new(id, timestamps, target, columns)?;
    for name in cat_names {
        let values = d.remove_column(&name).expect("just inserted");
        d.set_column(name, values, true)?;
    }
    for (i, bad) in unusable.into_iter().enumerate() {
        if bad {
            d.mark_unusable(i);
        }
    }
    Ok(d)
}

fn non_missing(s: &str) -> Option<String> {
    match s {
        "" | "NA" | "NaN" | "nan" | "null" => None,
        _ => Some(s.to_string()),
    }
}

fn parse_number(s: &str) -> std::result::Result<Option<f64>, String> {
    match non_missing(s) {
        None => Ok(None),
        Some(v) => match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Some(x)),
            _ => Err(format!("target `{v}` is not a finite number")),
        },
    }
}

/// Linear interpolation inside gaps of at most `MAX_INTERPOLATED_GAP`
/// rows; other missing values take the nearest observed value and flag the
/// row. `None` when the column has no observation at all.
fn fill_gaps(values: &[Option<f64>], unusable: &mut [bool]) -> Option<Vec<f64>> {
    let known: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    if known.is_empty() {
        return None;
    }
    let mut out: Vec<f64> = values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let first = known[0];
    let last = *known.last().expect("non-empty");
    for i in 0..first {
        out[i] = out[first];
        unusable[i] = true;
    }
    for i in (last + 1)..values.len() {
        out[i] = out[last];
        unusable[i] = true;
    }
    for w in known.windows(2) {
        let (a, b) = (w[0], w[1]);
        let gap = b - a - 1;
        if gap == 0 {
            continue;
        }
        for i in (a + 1)..b {
            if gap <= MAX_INTERPOLATED_GAP {
                let frac = (i - a) as f64 / (b - a) as f64;
                out[i] = out[a] + frac * (out[b] - out[a]);
            } else {
                out[i] = if i - a <= b - i { out[a] } else { out[b] };
                unusable[i] = true;
            }
        }
    }
    Some(out)
}
