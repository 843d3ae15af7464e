use std::path::{Path, PathBuf};

use anl_core::dataset::{build_features, fmt_f64, load_csv_series, synthesize, Dataset, HolidayCalendar, TIMESTAMP_FORMAT};
use anl_core::gam::fit_gam;
use anl_core::Error;
use anyhow::Context;

use crate::files::{check_overwrite, write_atomic};
use crate::{Config, Global};

/// Writes every configured synthetic series into one CSV with columns
/// `timestamp,series,target,<covariates...>`. Series `k` uses seed `seed + k`.
pub fn cmd_synth(cfg: &Config, global: &Global, out: Option<&Path>) -> anyhow::Result<PathBuf> {
    if cfg.synth.is_empty() {
        return Err(Error::Config("synth: no series configured".into()).into());
    }
    let path = out.map_or_else(|| cfg.data.path.clone(), Path::to_path_buf);
    check_overwrite(&path, global.force)?;
    let seed = global.seed.unwrap_or(cfg.seed);
    let mut sets = Vec::with_capacity(cfg.synth.len());
    for (k, s) in cfg.synth.iter().enumerate() {
        let out = synthesize(s, seed.wrapping_add(k as u64)).with_context(|| format!("synth[{k}]"))?;
        sets.push(out.dataset);
    }
    let columns: Vec<String> = sets[0].column_names().map(str::to_string).collect();
    for (k, d) in sets.iter().enumerate() {
        if !d.column_names().eq(columns.iter().map(String::as_str)) {
            return Err(Error::Config(format!("synth[{k}]: covariates differ from synth[0]")).into());
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["timestamp".to_string(), "series".into(), "target".into()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for d in &sets {
        let cols: Vec<&[f64]> = columns.iter().map(|c| d.column(c).expect("checked above")).collect();
        for i in 0..d.len() {
            let mut rec = vec![
                d.timestamps()[i].format(TIMESTAMP_FORMAT).to_string(),
                d.series_id().to_string(),
                fmt_f64(d.target()[i]),
            ];
            rec.extend(cols.iter().map(|c| fmt_f64(c[i])));
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    write_atomic(&path, &bytes).with_context(|| format!("write {}", path.display()))?;
    log::info!("wrote {} series to {}", sets.len(), path.display());
    Ok(path)
}

/// Fits the configured formula on each series' training rows (original
/// scale) and writes `<out>/<series>.json`.
pub fn cmd_fit_gam(cfg: &Config, global: &Global, out: Option<&Path>) -> anyhow::Result<Vec<PathBuf>> {
    if cfg.formula.is_empty() {
        return Err(Error::Config("formula: empty".into()).into());
    }
    let split = cfg.require_split()?;
    let dir = out.map_or_else(|| cfg.output.dir.join("gam"), Path::to_path_buf);
    let series = load_series(cfg)?;
    let holidays = load_holidays(cfg)?;
    let targets: Vec<PathBuf> = series.iter().map(|d| dir.join(format!("{}.json", d.series_id()))).collect();
    for t in &targets {
        check_overwrite(t, global.force)?;
    }
    for (d, path) in series.iter().zip(&targets) {
        let id = d.series_id();
        let feats = build_features(d, &cfg.features, holidays.as_ref()).with_context(|| format!("features `{id}`"))?;
        let ts = feats.timestamps();
        let n_train = ts.partition_point(|&t| t <= split.train_end);
        if n_train == 0 || n_train == ts.len() {
            return Err(Error::Data(format!("series `{id}`: need rows on both sides of train_end")).into());
        }
        let cutoff = ts[n_train] - feats.step() * (cfg.features.delay as i32 + 1);
        let n_fit = ts.partition_point(|&t| t <= cutoff);
        let gam = fit_gam(&feats.slice(0, n_fit), &cfg.formula).with_context(|| format!("fit-gam `{id}`"))?;
        write_atomic(path, gam.to_json()?.as_bytes())?;
        log::info!("series `{id}`: edf {:.2}, gcv {:.4}", gam.edf, gam.gcv);
    }
    Ok(targets)
}

pub(crate) fn load_series(cfg: &Config) -> anyhow::Result<Vec<Dataset>> {
    load_csv_series(&cfg.data.path, &cfg.data.schema()).with_context(|| format!("load {}", cfg.data.path.display()))
}

pub(crate) fn load_holidays(cfg: &Config) -> anyhow::Result<Option<HolidayCalendar>> {
    cfg.data
        .holidays
        .as_ref()
        .map(|p| HolidayCalendar::load(p).with_context(|| format!("load holidays {}", p.display())))
        .transpose()
}
