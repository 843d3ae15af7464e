use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anl_core::aggregation::write_weight_trace;
use anl_core::dataset::Dataset;
use anl_core::pipeline::{run_strategy, write_trace, write_update_log, RunManifest, RunOptions, RunOutput, StrategySpec};
use anl_core::Error;
use anyhow::Context;
use chrono::NaiveTime;
use rayon::prelude::*;

use crate::config::{parse_time, strip};
use crate::data::{load_holidays, load_series};
use crate::files::{check_overwrite, write_atomic, MANIFEST_FILE};
use crate::report::ReliabilityCount;
use crate::{Config, Global};

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    /// Strategies to run instead of the configured list.
    pub strategies: Vec<String>,
    /// Output root instead of `output.dir`.
    pub out: Option<PathBuf>,
    /// Extra time-of-day reliability filters (`HH:MM`).
    pub reliability_times: Vec<String>,
}

/// Runs every (series, strategy) pair and writes one directory per pair
/// under `<out>/<series>/<strategy>/`. Returns the manifest paths.
pub fn cmd_run(cfg: &Config, global: &Global, args: &RunArgs) -> anyhow::Result<Vec<PathBuf>> {
    let split = cfg.require_split()?;
    let names = if args.strategies.is_empty() { cfg.strategies.clone() } else { args.strategies.clone() };
    if names.is_empty() {
        return Err(Error::Config("strategies: empty".into()).into());
    }
    let specs: Vec<StrategySpec> = names
        .iter()
        .map(|n| cfg.strategy(n).map_err(|e| Error::Config(format!("--strategies `{n}`: {}", strip(&e)))))
        .collect::<Result<_, _>>()?;
    let mut times = cfg.reliability_times()?;
    for t in &args.reliability_times {
        times.push(parse_time(t)?);
    }
    times.sort();
    times.dedup();
    let root = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let series = load_series(cfg)?;
    let holidays = load_holidays(cfg)?;
    let jobs: Vec<(&Dataset, &StrategySpec, PathBuf)> = series
        .iter()
        .flat_map(|d| specs.iter().map(move |s| (d, s)))
        .map(|(d, s)| (d, s, root.join(d.series_id()).join(s.name())))
        .collect();
    for (_, _, dir) in &jobs {
        check_overwrite(&dir.join(MANIFEST_FILE), global.force)?;
    }
    let opts = RunOptions { holidays, reliability_time: None, weight_stride: cfg.output.weight_stride };
    let seed = global.seed.unwrap_or(cfg.seed);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(global.jobs.unwrap_or(0)).build()?;
    pool.install(|| {
        jobs.par_iter()
            .map(|(d, spec, dir)| {
                let tag = format!("run `{}` on series `{}`", spec.name(), d.series_id());
                log::info!("{tag}");
                let out = run_strategy(spec, d, split, &opts).with_context(|| tag.clone())?;
                write_run(&out, spec, cfg, seed, d, &times, dir).with_context(|| format!("{tag}: write outputs"))
            })
            .collect()
    })
}

fn write_run(
    out: &RunOutput,
    spec: &StrategySpec,
    cfg: &Config,
    seed: u64,
    data: &Dataset,
    times: &[NaiveTime],
    dir: &Path,
) -> anyhow::Result<PathBuf> {
    let split = cfg.require_split()?;
    let mut files: BTreeMap<&str, (&str, Vec<u8>)> = BTreeMap::new();
    let mut buf = Vec::new();
    write_trace(&out.records(), &out.levels, &mut buf)?;
    files.insert("trace", ("trace.csv", buf));
    let mut buf = Vec::new();
    write_update_log(&out.updates, &mut buf)?;
    files.insert("updates", ("updates.csv", buf));
    files.insert("report", ("report.json", out.report.to_json()?.into_bytes()));
    let counts = reliability_counts(out, &split.test_windows.iter().map(|w| w.label.clone()).collect::<Vec<_>>(), times);
    files.insert("reliability", ("reliability.json", serde_json::to_vec_pretty(&counts)?));
    if !out.weights.is_empty() {
        let mut buf = Vec::new();
        write_weight_trace(&out.weights, &mut buf)?;
        files.insert("weights", ("weights.csv", buf));
    }
    files.insert("checkpoint", ("checkpoint.json", out.final_state.to_json()?.into_bytes()));
    if let Some(g) = &out.gam {
        files.insert("gam", ("gam.json", g.to_json()?.into_bytes()));
    }

    let mut manifest = RunManifest::new(out, spec, split, seed, data.step().num_seconds());
    manifest.checkpoints.push("checkpoint.json".into());
    for (kind, (name, bytes)) in &files {
        let hash = write_atomic(&dir.join(name), bytes)?;
        manifest.outputs.insert(kind.to_string(), name.to_string());
        manifest.output_hashes.insert(kind.to_string(), hash);
    }
    let path = dir.join(MANIFEST_FILE);
    write_atomic(&path, manifest.to_json()?.as_bytes())?;
    Ok(path)
}

/// Hit counts of every level, per test window and time-of-day filter.
/// Counts rather than frequencies so reports can pool series exactly.
fn reliability_counts(out: &RunOutput, windows: &[String], times: &[NaiveTime]) -> Vec<ReliabilityCount> {
    let mut filters: Vec<(String, Option<NaiveTime>)> = vec![("all".into(), None)];
    filters.extend(times.iter().map(|t| (t.format("%H:%M").to_string(), Some(*t))));
    let mut counts = Vec::new();
    for (k, label) in windows.iter().enumerate() {
        for (fname, tod) in &filters {
            let rows: Vec<_> = out
                .rows
                .iter()
                .filter(|r| r.window == k && tod.is_none_or(|t| r.record.timestamp.time() == t))
                .collect();
            for (j, &level) in out.levels.iter().enumerate() {
                let hits = rows.iter().filter(|r| r.y <= r.record.quantiles[j]).count();
                counts.push(ReliabilityCount {
                    window: label.clone(),
                    filter: fname.clone(),
                    level,
                    n: rows.len(),
                    hits,
                });
            }
        }
    }
    counts
}
