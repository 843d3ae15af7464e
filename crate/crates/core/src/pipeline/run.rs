use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use chrono::NaiveTime;
use serde::{Deserialize, Serialize};

use super::audit::{audit_no_lookahead, AuditReport, UpdateEntry};
use super::engine::{Context, Engine, EngineOutput, EngineState, Normalization, TraceRow};
use super::spec::StrategySpec;
use crate::aggregation::WeightRow;
use crate::dataset::{fmt_f64, Dataset, HolidayCalendar, SplitSpec, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_window, EvaluationReport, ForecastRecord, SeriesWindow};
use crate::gam::GamModel;
use crate::kalman::SsmParams;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub holidays: Option<HolidayCalendar>,
    /// Restrict reliability tables to this time of day.
    pub reliability_time: Option<NaiveTime>,
    /// Test rows between two weight-trace samples (default: one day).
    pub weight_stride: Option<usize>,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub strategy: String,
    pub series_id: String,
    pub levels: Vec<f64>,
    pub rows: Vec<TraceRow>,
    pub updates: Vec<UpdateEntry>,
    pub weights: Vec<WeightRow>,
    pub report: EvaluationReport,
    pub audit: AuditReport,
    pub oracle: bool,
    pub normalization: Normalization,
    pub gam: Option<GamModel>,
    pub params: Option<SsmParams>,
    pub dataset_hash: String,
    pub final_state: EngineState,
    pub timings: BTreeMap<String, f64>,
}

impl RunOutput {
    pub fn records(&self) -> Vec<ForecastRecord> {
        self.rows.iter().map(|r| r.record.clone()).collect()
    }
}

/// Runs `spec` on one series: batch fits on the training rows of `split`,
/// then the online loop over every later row up to the last test window.
/// A lookahead found by the audit aborts the run, except for oracle
/// baselines, whose audit failure is only reported.
pub fn run_strategy(spec: &StrategySpec, data: &Dataset, split: &SplitSpec, opts: &RunOptions) -> Result<RunOutput> {
    let ctx = Context::prepare(spec, data, split, opts.holidays.as_ref(), opts.weight_stride)?;
    let clock = Instant::now();
    let mut engine = Engine::new(&ctx);
    engine.run_to_end()?;
    let (state, out) = engine.into_parts();
    let mut timings = ctx.timings.clone();
    timings.insert("online".into(), clock.elapsed().as_secs_f64());
    finish(&ctx, state, out, opts, timings)
}

/// Evaluates and audits the output of a (possibly resumed) engine run.
pub fn finish(
    ctx: &Context,
    state: EngineState,
    out: EngineOutput,
    opts: &RunOptions,
    mut timings: BTreeMap<String, f64>,
) -> Result<RunOutput> {
    let clock = Instant::now();
    let audit = audit_no_lookahead(&out.updates, ctx.step, ctx.delay);
    let oracle = ctx.spec.mean.is_oracle();
    if !oracle {
        audit.clone().into_result(ctx.step, ctx.delay)?;
    }
    let levels = ctx.spec.levels.clone();
    let mut windows = Vec::with_capacity(ctx.split.test_windows.len());
    for (k, w) in ctx.split.test_windows.iter().enumerate() {
        let rows: Vec<&TraceRow> = out.rows.iter().filter(|r| r.window == k).collect();
        if rows.is_empty() {
            return Err(Error::Data(format!("no forecasts in test window `{}`", w.label)));
        }
        let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
        let records: Vec<ForecastRecord> = rows.iter().map(|r| r.record.clone()).collect();
        let series = [SeriesWindow { series_id: &ctx.series_id, y: &y, records: &records }];
        windows.push(evaluate_window(&w.label, &levels, &series, opts.reliability_time)?);
    }
    let report = EvaluationReport {
        levels: levels.clone(),
        reliability_filter: opts.reliability_time.map(|t| t.format("%H:%M").to_string()),
        windows,
    };
    timings.insert("evaluation".into(), clock.elapsed().as_secs_f64());
    Ok(RunOutput {
        strategy: ctx.strategy(),
        series_id: ctx.series_id.clone(),
        levels,
        rows: out.rows,
        updates: out.updates,
        weights: out.weights,
        report,
        audit,
        oracle,
        normalization: ctx.norm,
        gam: ctx.gam.clone(),
        params: ctx.kalman.as_ref().map(|k| k.0.clone()),
        dataset_hash: ctx.dataset_hash.clone(),
        final_state: state,
        timings,
    })
}

/// Header label of a quantile column.
pub fn level_column(q: f64) -> String {
    format!("q{}", fmt_f64(q))
}

/// Forecast trace CSV: `timestamp,series,mean,q<level>...`.
pub fn write_trace<W: Write>(records: &[ForecastRecord], levels: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["timestamp".to_string(), "series".into(), "mean".into()];
    header.extend(levels.iter().map(|q| level_column(*q)));
    out.write_record(&header)?;
    for r in records {
        if r.quantiles.len() != levels.len() {
            return Err(Error::Data(format!("record at {} has the wrong number of quantiles", r.timestamp)));
        }
        let mut row = vec![r.timestamp.format(TIMESTAMP_FORMAT).to_string(), r.series_id.clone(), fmt_f64(r.mean)];
        row.extend(r.quantiles.iter().map(|v| fmt_f64(*v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub const MANIFEST_VERSION: u32 = 1;

/// Provenance of one (series, strategy) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: u32,
    pub strategy: String,
    pub spec: StrategySpec,
    pub split: SplitSpec,
    pub series_id: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub delay: usize,
    pub step_seconds: i64,
    pub oracle: bool,
    pub audit_passed: bool,
    pub normalization: Normalization,
    pub kalman_params: Option<SsmParams>,
    pub checkpoints: Vec<String>,
    /// Output kind (`trace`, `updates`, `report`, ...) to path.
    pub outputs: BTreeMap<String, String>,
    /// SHA-256 of each output file.
    pub output_hashes: BTreeMap<String, String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(out: &RunOutput, spec: &StrategySpec, split: &SplitSpec, seed: u64, step_seconds: i64) -> Self {
        Self {
            version: MANIFEST_VERSION,
            strategy: out.strategy.clone(),
            spec: spec.clone(),
            split: split.clone(),
            series_id: out.series_id.clone(),
            dataset_hash: out.dataset_hash.clone(),
            seed,
            delay: spec.delay(),
            step_seconds,
            oracle: out.oracle,
            audit_passed: out.audit.passed(),
            normalization: out.normalization,
            kalman_params: out.params.clone(),
            checkpoints: Vec::new(),
            outputs: BTreeMap::new(),
            output_hashes: BTreeMap::new(),
            timings: out.timings.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(s)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Data(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }
}
