use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anl_core::dataset::{fmt_f64, SplitSpec};
use anl_core::evaluation::{pool_reliability, Aggregate, EvaluationReport, ReliabilityRow, SeriesScores};
use anl_core::pipeline::{audit_no_lookahead, read_update_log, RunManifest};
use anl_core::Error;
use anyhow::Context;
use chrono::TimeDelta;
use serde::{Deserialize, Serialize};

use crate::files::{check_overwrite, find_manifests, sha256, write_atomic};
use crate::Global;

/// Observations at or below one quantile forecast, before pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCount {
    pub window: String,
    /// `all` or a time of day `HH:MM`.
    pub filter: String,
    pub level: f64,
    pub n: usize,
    pub hits: usize,
}

struct Loaded {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Loaded {
    fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
        let manifest = RunManifest::from_json(&text).with_context(|| format!("parse {}", path.display()))?;
        Ok(Self { dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(), manifest })
    }

    fn output(&self, kind: &str) -> Option<PathBuf> {
        self.manifest.outputs.get(kind).map(|name| self.dir.join(name))
    }

    fn require(&self, kind: &str) -> anyhow::Result<Vec<u8>> {
        let path = self
            .output(kind)
            .ok_or_else(|| Error::Data(format!("{}: manifest lists no `{kind}` output", self.dir.display())))?;
        fs::read(&path).with_context(|| format!("read {}", path.display()))
    }

    fn label(&self) -> String {
        format!("{}/{}", self.manifest.series_id, self.manifest.strategy)
    }
}

fn same_windows(a: &SplitSpec, b: &SplitSpec) -> bool {
    a.test_windows == b.test_windows
}

/// Writes `comparison.csv`, `reliability.csv` and `weights.csv` under
/// `out` for the given manifests (files or directories searched
/// recursively).
pub fn cmd_report(paths: &[PathBuf], out: &Path, global: &Global) -> anyhow::Result<Vec<PathBuf>> {
    let targets = ["comparison.csv", "reliability.csv", "weights.csv"].map(|f| out.join(f));
    for t in &targets {
        check_overwrite(t, global.force)?;
    }
    let runs: Vec<Loaded> = find_manifests(paths)?.iter().map(|p| Loaded::read(p)).collect::<anyhow::Result<_>>()?;
    let first = &runs[0].manifest;
    let mut levels: Option<&[f64]> = None;
    let mut seen = BTreeMap::new();
    for r in &runs {
        let m = &r.manifest;
        if !same_windows(&m.split, &first.split) {
            return Err(Error::Data(format!("{}: test windows differ from {}", r.label(), runs[0].label())).into());
        }
        if !m.spec.levels.is_empty() {
            match levels {
                Some(l) if l != m.spec.levels.as_slice() => {
                    return Err(Error::Data(format!("{}: quantile levels differ from the other runs", r.label())).into());
                }
                _ => levels = Some(&m.spec.levels),
            }
        }
        if seen.insert(r.label(), ()).is_some() {
            return Err(Error::Data(format!("{}: given twice", r.label())).into());
        }
    }

    // Strategy -> per-run evaluation reports, in series order.
    let mut by_strategy: BTreeMap<&str, Vec<(&Loaded, EvaluationReport)>> = BTreeMap::new();
    for r in &runs {
        let report: EvaluationReport = serde_json::from_slice(&r.require("report")?)
            .with_context(|| format!("{}: parse report", r.label()))?;
        by_strategy.entry(&r.manifest.strategy).or_default().push((r, report));
    }

    let mut cmp = csv::Writer::from_writer(Vec::new());
    cmp.write_record(["window", "strategy", "n_series", "nrmse", "nmae", "nrps"])?;
    for w in &first.split.test_windows {
        for (strategy, reports) in &by_strategy {
            let scores: Vec<SeriesScores> = reports
                .iter()
                .map(|(r, rep)| {
                    rep.windows
                        .iter()
                        .find(|x| x.label == w.label)
                        .and_then(|x| x.series.first().cloned())
                        .ok_or_else(|| Error::Data(format!("{}: no scores for window `{}`", r.label(), w.label)))
                })
                .collect::<Result<_, _>>()?;
            let agg = Aggregate::from_components(&scores)?;
            cmp.write_record([
                w.label.clone(),
                strategy.to_string(),
                scores.len().to_string(),
                fmt_f64(agg.nrmse),
                fmt_f64(agg.nmae),
                agg.nrps.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
    }

    let mut rel = csv::Writer::from_writer(Vec::new());
    rel.write_record(["strategy", "window", "filter", "level", "n", "frequency", "band_lo", "band_hi"])?;
    for (strategy, reports) in &by_strategy {
        // (window, filter, level) -> per-series rows, in file order.
        let mut groups: Vec<((String, String, u64), Vec<ReliabilityRow>)> = Vec::new();
        for (r, _) in reports {
            let Some(path) = r.output("reliability") else { continue };
            let counts: Vec<ReliabilityCount> = serde_json::from_slice(&fs::read(&path)?)
                .with_context(|| format!("{}: parse reliability counts", r.label()))?;
            for c in counts {
                let key = (c.window.clone(), c.filter.clone(), c.level.to_bits());
                let row = (c.n > 0).then(|| ReliabilityRow {
                    level: c.level,
                    n: c.n,
                    frequency: c.hits as f64 / c.n as f64,
                    band_lo: 0.0,
                    band_hi: 0.0,
                });
                match groups.iter_mut().find(|g| g.0 == key) {
                    Some(g) => g.1.extend(row),
                    None => groups.push((key, row.into_iter().collect())),
                }
            }
        }
        for ((window, filter, _), rows) in groups {
            if rows.is_empty() {
                log::warn!("{strategy}: no observations for window `{window}` filter `{filter}`");
                continue;
            }
            let p = pool_reliability(&rows)?;
            rel.write_record([
                strategy.to_string(),
                window,
                filter,
                fmt_f64(p.level),
                p.n.to_string(),
                fmt_f64(p.frequency),
                fmt_f64(p.band_lo),
                fmt_f64(p.band_hi),
            ])?;
        }
    }

    let mut wts = csv::Writer::from_writer(Vec::new());
    wts.write_record(["strategy", "series", "timestamp", "level", "alpha", "weight"])?;
    for r in &runs {
        let Some(path) = r.output("weights") else { continue };
        let mut rdr = csv::Reader::from_path(&path).with_context(|| format!("read {}", path.display()))?;
        for rec in rdr.records() {
            let rec = rec?;
            let mut row = vec![r.manifest.strategy.as_str(), r.manifest.series_id.as_str()];
            row.extend(rec.iter());
            wts.write_record(&row)?;
        }
    }

    let bodies = [cmp, rel, wts].map(|w| w.into_inner().map_err(|e| e.into_error()));
    for (path, body) in targets.iter().zip(bodies) {
        write_atomic(path, &body?)?;
    }
    Ok(targets.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditStatus {
    Pass,
    Fail,
    /// Oracle baseline: its lookahead is expected and does not fail the audit.
    Exempt,
}

#[derive(Debug, Clone)]
pub struct AuditLine {
    pub manifest: PathBuf,
    pub status: AuditStatus,
    pub checked: usize,
    /// Description of the first violation, if any.
    pub first: Option<String>,
}

/// Re-audits the update log of every manifest and checks output hashes.
/// Errors on the first non-oracle lookahead after all lines are computed.
pub fn cmd_audit(paths: &[PathBuf]) -> anyhow::Result<Vec<AuditLine>> {
    let mut lines = Vec::new();
    let mut failure = None;
    for path in find_manifests(paths)? {
        let run = Loaded::read(&path)?;
        let m = &run.manifest;
        for (kind, expected) in &m.output_hashes {
            if sha256(&run.require(kind)?) != *expected {
                return Err(Error::Integrity(format!("{}: `{kind}` output does not match its hash", run.label())).into());
            }
        }
        let log = read_update_log(run.require("updates")?.as_slice()).with_context(|| format!("{}: updates", run.label()))?;
        let step = TimeDelta::seconds(m.step_seconds);
        let report = audit_no_lookahead(&log, step, m.delay);
        let checked = report.checked;
        let (status, first) = match report.clone().into_result(step, m.delay) {
            Ok(()) => (AuditStatus::Pass, None),
            Err(e) if m.oracle => (AuditStatus::Exempt, Some(e.to_string())),
            Err(e) => {
                let msg = e.to_string();
                if failure.is_none() {
                    failure = Some(anyhow::Error::from(e).context(format!("audit {}", run.label())));
                }
                (AuditStatus::Fail, Some(msg))
            }
        };
        lines.push(AuditLine { manifest: path, status, checked, first });
    }
    for l in &lines {
        let tag = match l.status {
            AuditStatus::Pass => "PASS",
            AuditStatus::Fail => "FAIL",
            AuditStatus::Exempt => "EXEMPT",
        };
        println!("{tag} {} ({} updates){}", l.manifest.display(), l.checked, l.first.as_deref().map(|f| format!(": {f}")).unwrap_or_default());
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(lines),
    }
}
