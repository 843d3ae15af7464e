use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use super::audit::{Component, UpdateEntry};
use super::spec::{MeanMode, QuantileMode, StrategySpec};
use crate::aggregation::{aggregate, ExpertPool, WeightRow};
use crate::dataset::{build_features, ts_serde, Dataset, HolidayCalendar, SplitSpec};
use crate::error::{Error, Result};
use crate::evaluation::ForecastRecord;
use crate::gam::{fit_gam, incremental_refit, DatasetRow, GamModel};
use crate::kalman::{
    fit_dynamic, gaussian_quantile, kalman_step, predictive_distribution, static_params, Normal, SsmParams,
    SsmState,
};
use crate::quantile::{fit_offline_qr, sort_quantiles, QrModel, QuantileDesign};

/// Affine map between the original target scale and the modeling scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub enabled: bool,
    pub mean: f64,
    pub sd: f64,
}

impl Normalization {
    pub fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.sd
    }

    pub fn back(&self, v: f64) -> f64 {
        self.mean + self.sd * v
    }
}

/// Everything fixed before the online loop starts: the feature-augmented
/// stream, batch fits on the training period, and per-row inputs.
#[derive(Debug, Clone)]
pub struct Context {
    pub spec: StrategySpec,
    pub series_id: String,
    pub split: SplitSpec,
    pub dataset_hash: String,
    pub ts: Vec<NaiveDateTime>,
    pub step: TimeDelta,
    pub delay: usize,
    /// Original-scale target and its normalized copy.
    pub y: Vec<f64>,
    pub y_norm: Vec<f64>,
    pub usable: Vec<bool>,
    /// Rows `< n_train` are training rows; rows `< n_fit` feed batch fits.
    pub n_train: usize,
    pub n_fit: usize,
    /// Index into `split.test_windows` of each row.
    pub window: Vec<Option<usize>>,
    pub norm: Normalization,
    pub gam: Option<GamModel>,
    /// Kalman variances and warm-start prior.
    pub kalman: Option<(SsmParams, SsmState)>,
    pub weight_stride: usize,
    pub timings: BTreeMap<String, f64>,
    effects: Vec<Vec<f64>>,
    z_effects: Vec<Vec<f64>>,
    categorical: Vec<Vec<f64>>,
    base_mean: Vec<f64>,
    /// Original-scale window means of the mean-anchor baseline.
    anchor: Vec<Option<f64>>,
    row_log: BTreeMap<usize, Vec<UpdateEntry>>,
    fit_log: Vec<UpdateEntry>,
}

impl Context {
    /// Builds features, normalizes, and fits every batch model on the
    /// training rows available `delay + 1` steps before the first test row.
    pub fn prepare(
        spec: &StrategySpec,
        data: &Dataset,
        split: &SplitSpec,
        holidays: Option<&HolidayCalendar>,
        weight_stride: Option<usize>,
    ) -> Result<Self> {
        spec.validate()?;
        split.validate()?;
        let mut timings = BTreeMap::new();
        let clock = Instant::now();
        let delay = spec.delay();
        let feats = build_features(data, &spec.features, holidays)?;
        let last = split.test_windows.iter().map(|w| w.end).max().expect("validated non-empty");
        let end = feats.timestamps().partition_point(|&t| t <= last);
        let stream = feats.slice(0, end);
        let ts = stream.timestamps().to_vec();
        let step = stream.step();
        let n_train = ts.partition_point(|&t| t <= split.train_end);
        if n_train == 0 || n_train == ts.len() {
            return Err(Error::Data(format!(
                "series `{}`: need rows on both sides of train_end",
                data.series_id()
            )));
        }
        let cutoff = ts[n_train] - step * (delay as i32 + 1);
        let n_fit = ts.partition_point(|&t| t <= cutoff);
        let usable = stream.usable().to_vec();
        let fit_rows: Vec<usize> = (0..n_fit).filter(|&i| usable[i]).collect();
        if fit_rows.is_empty() {
            return Err(Error::Data(format!("series `{}`: no usable training rows", data.series_id())));
        }
        let window: Vec<Option<usize>> = ts
            .iter()
            .map(|&t| split.test_windows.iter().position(|w| w.start <= t && t <= w.end))
            .collect();
        for (k, w) in split.test_windows.iter().enumerate() {
            if !window.iter().zip(&usable).any(|(x, u)| *x == Some(k) && *u) {
                return Err(Error::Data(format!("series `{}`: empty test window `{}`", data.series_id(), w.label)));
            }
        }
        timings.insert("features".into(), clock.elapsed().as_secs_f64());

        let clock = Instant::now();
        let y = stream.target().to_vec();
        let norm = if spec.normalize {
            let v: Vec<f64> = fit_rows.iter().map(|&i| y[i]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            if !(sd > 0.0) {
                return Err(Error::Data(format!("series `{}`: constant training target", data.series_id())));
            }
            Normalization { enabled: true, mean: m, sd }
        } else {
            Normalization { enabled: false, mean: 0.0, sd: 1.0 }
        };
        let y_norm: Vec<f64> = y.iter().map(|v| norm.forward(*v)).collect();
        let stream = stream.with_target(y_norm.clone())?;
        let train_level = fit_rows.iter().map(|&i| y_norm[i]).sum::<f64>() / fit_rows.len() as f64;

        let gam = if spec.formula.is_empty() {
            None
        } else {
            Some(fit_gam(&stream.slice(0, n_fit), &spec.formula)?)
        };
        timings.insert("gam".into(), clock.elapsed().as_secs_f64());

        let clock = Instant::now();
        let mut effects = Vec::new();
        let mut z_effects = vec![Vec::new(); ts.len()];
        let mut base_mean = vec![train_level; ts.len()];
        if let Some(g) = &gam {
            let contribs = g.contributions_dataset(&stream)?;
            let picks = spec
                .quantile_inputs
                .effects
                .iter()
                .map(|name| {
                    g.effects
                        .iter()
                        .position(|e| &e.covariate == name)
                        .ok_or_else(|| Error::DegenerateCovariate(name.clone()))
                })
                .collect::<Result<Vec<usize>>>()?;
            for (i, c) in contribs.iter().enumerate() {
                effects.push(g.standardize(c));
                z_effects[i] = picks.iter().map(|&j| c[j]).collect();
                base_mean[i] = g.intercept + c.iter().sum::<f64>();
            }
        }
        let categorical: Vec<Vec<f64>> = {
            let cols = spec
                .quantile_inputs
                .categorical
                .iter()
                .map(|c| stream.require_column(c))
                .collect::<Result<Vec<_>>>()?;
            (0..ts.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
        };

        let mut row_log: BTreeMap<usize, Vec<UpdateEntry>> = BTreeMap::new();
        let mut anchor = vec![None; ts.len()];
        match spec.mean {
            MeanMode::Incremental(schedule) => {
                let refits = incremental_refit(&stream, &spec.formula, split.train_end, schedule, delay)?;
                let mut k = 0;
                for (i, &t) in ts.iter().enumerate().skip(n_train) {
                    while k + 1 < refits.len() && refits[k + 1].from <= t {
                        k += 1;
                    }
                    if let Some(r) = refits.get(k).filter(|r| r.from <= t) {
                        base_mean[i] = r.model.predict_mean(&DatasetRow(&stream, i))?;
                        if r.from == t {
                            let cut = t - step * (delay as i32 + 1);
                            let used = ts.partition_point(|&s| s <= cut);
                            if used > 0 {
                                row_log.entry(i).or_default().push(UpdateEntry {
                                    at: t - step,
                                    consumed: ts[used - 1],
                                    component: Component::Refit,
                                });
                            }
                        }
                    }
                }
            }
            MeanMode::Persistence(lag) => {
                let back = step * lag as i32;
                for (i, &t) in ts.iter().enumerate() {
                    match stream.index_of(t - back) {
                        Some(j) => {
                            base_mean[i] = y_norm[j];
                            if i >= n_train {
                                row_log.entry(i).or_default().push(UpdateEntry {
                                    at: t - step,
                                    consumed: ts[j],
                                    component: Component::Mean,
                                });
                            }
                        }
                        None => base_mean[i] = train_level,
                    }
                }
            }
            MeanMode::MeanAnchor => {
                for k in 0..split.test_windows.len() {
                    let rows: Vec<usize> = (0..ts.len()).filter(|&i| window[i] == Some(k)).collect();
                    let used: Vec<usize> = rows.iter().copied().filter(|&i| usable[i]).collect();
                    let m = used.iter().map(|&i| y[i]).sum::<f64>() / used.len() as f64;
                    let newest = ts[*used.last().expect("window has usable rows")];
                    for &i in &rows {
                        base_mean[i] = norm.forward(m);
                        anchor[i] = Some(m);
                        row_log.entry(i).or_default().push(UpdateEntry {
                            at: ts[i] - step,
                            consumed: newest,
                            component: Component::Mean,
                        });
                    }
                }
            }
            _ => {}
        }

        let kalman = if spec.mean.is_kalman() {
            let g = gam.as_ref().expect("kalman modes have a formula");
            let prior = SsmState::with_identity(g.reproducing_state());
            let params = match (spec.mean, &spec.dynamic_params) {
                (MeanMode::KalmanStatic, _) => static_params(g.effects.len()),
                (_, Some(p)) => {
                    if p.dim() != prior.dim() {
                        return Err(Error::Config(format!(
                            "dynamic_params has dimension {}, the fitted model needs {}",
                            p.dim(),
                            prior.dim()
                        )));
                    }
                    p.clone()
                }
                _ => {
                    let f: Vec<Vec<f64>> = fit_rows.iter().map(|&i| effects[i].clone()).collect();
                    let yv: Vec<f64> = fit_rows.iter().map(|&i| y_norm[i]).collect();
                    fit_dynamic(&prior, &f, &yv)?
                }
            };
            Some((params, prior))
        } else {
            None
        };
        timings.insert("batch".into(), clock.elapsed().as_secs_f64());

        let fit_log = vec![UpdateEntry {
            at: ts[n_train] - step,
            consumed: ts[*fit_rows.last().expect("non-empty")],
            component: Component::Fit,
        }];
        let weight_stride = weight_stride.unwrap_or_else(|| stream.steps_per_day()).max(1);
        Ok(Self {
            spec: spec.clone(),
            series_id: data.series_id().to_string(),
            split: split.clone(),
            dataset_hash: data.content_hash(),
            ts,
            step,
            delay,
            y,
            y_norm,
            usable,
            n_train,
            n_fit,
            window,
            norm,
            gam,
            kalman,
            weight_stride,
            timings,
            effects,
            z_effects,
            categorical,
            base_mean,
            anchor,
            row_log,
            fit_log,
        })
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn strategy(&self) -> String {
        self.spec.name()
    }

    fn levels(&self) -> &[f64] {
        &self.spec.levels
    }

    /// Raw continuous quantile inputs of row `i` given its mean forecast.
    fn z_continuous(&self, i: usize, mean: f64) -> Vec<f64> {
        let qi = &self.spec.quantile_inputs;
        let mut v = Vec::with_capacity(2 + self.z_effects[i].len());
        if qi.mean {
            v.push(mean);
        }
        if qi.mean_squared {
            v.push(mean * mean);
        }
        v.extend_from_slice(&self.z_effects[i]);
        v
    }

    fn steps_between(&self, from: NaiveDateTime, to: NaiveDateTime) -> f64 {
        ((to - from).num_seconds() as f64 / self.step.num_seconds() as f64).max(0.0)
    }
}

/// Kalman filter position: `state` describes the coefficients at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanTrack {
    pub params: SsmParams,
    pub state: SsmState,
    #[serde(with = "ts_serde")]
    pub time: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileState {
    /// Before the end of training, or without quantiles.
    Inactive,
    Gaussian,
    Fixed { design: QuantileDesign, models: Vec<QrModel> },
    Pools { design: QuantileDesign, pools: Vec<ExpertPool> },
    /// `history` holds `(row, z, residual)` of every consumed outcome.
    Incremental { design: QuantileDesign, models: Vec<QrModel>, history: Vec<(usize, Vec<f64>, f64)> },
}

/// A forecast whose outcome has not been consumed yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pending {
    pub row: usize,
    pub mean: f64,
    pub z: Option<Vec<f64>>,
    /// Per level: expert forecasts and their mixture, as issued.
    pub issued: Vec<(Vec<f64>, f64)>,
}

/// Serializable engine state; a run resumed from it continues exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub strategy: String,
    pub next_row: usize,
    /// Whether the quantile learners have been fitted.
    pub trained: bool,
    pub kalman: Option<KalmanTrack>,
    pub quantile: QuantileState,
    pub pending: VecDeque<Pending>,
    /// Mean forecasts over the training rows, kept until quantile fitting.
    pub train_means: Vec<f64>,
}

impl EngineState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// A forecast on the original scale together with its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub window: usize,
    pub y: f64,
    pub record: ForecastRecord,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngineOutput {
    pub rows: Vec<TraceRow>,
    pub updates: Vec<UpdateEntry>,
    pub weights: Vec<WeightRow>,
}

impl EngineOutput {
    pub fn append(&mut self, mut other: EngineOutput) {
        self.rows.append(&mut other.rows);
        self.updates.append(&mut other.updates);
        self.weights.append(&mut other.weights);
    }
}

/// Sequential forecast/update loop over one series.
pub struct Engine<'a> {
    ctx: &'a Context,
    state: EngineState,
    out: EngineOutput,
}

impl<'a> Engine<'a> {
    /// Engine positioned before the first row. Crossing into the test
    /// period fits the quantile learners on the training residuals.
    pub fn new(ctx: &'a Context) -> Self {
        let kalman = ctx.kalman.as_ref().map(|(params, prior)| KalmanTrack {
            params: params.clone(),
            state: prior.clone(),
            time: ctx.ts[0],
        });
        let state = EngineState {
            strategy: ctx.strategy(),
            next_row: 0,
            trained: false,
            kalman,
            quantile: QuantileState::Inactive,
            pending: VecDeque::new(),
            train_means: Vec::with_capacity(ctx.n_train),
        };
        Engine { ctx, state, out: EngineOutput::default() }
    }

    pub fn resume(ctx: &'a Context, state: EngineState) -> Result<Self> {
        if state.strategy != ctx.strategy() {
            return Err(Error::Data(format!(
                "checkpoint is for `{}`, not `{}`",
                state.strategy,
                ctx.strategy()
            )));
        }
        if state.next_row > ctx.len() {
            return Err(Error::Data(format!("checkpoint row {} is past the end of the stream", state.next_row)));
        }
        Ok(Engine { ctx, state, out: EngineOutput::default() })
    }

    pub fn next_row(&self) -> usize {
        self.state.next_row
    }

    pub fn checkpoint(&self) -> EngineState {
        self.state.clone()
    }

    pub fn output(&self) -> &EngineOutput {
        &self.out
    }

    pub fn into_parts(self) -> (EngineState, EngineOutput) {
        (self.state, self.out)
    }

    pub fn run_until(&mut self, end: usize) -> Result<()> {
        let end = end.min(self.ctx.len());
        while self.state.next_row < end {
            if self.state.next_row == self.ctx.n_train && !self.state.trained {
                self.out.updates.extend_from_slice(&self.ctx.fit_log);
                self.init_quantiles()?;
                self.state.trained = true;
            }
            self.step_row(self.state.next_row)?;
            self.state.next_row += 1;
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        self.run_until(self.ctx.len())
    }

    fn init_quantiles(&mut self) -> Result<()> {
        let ctx = self.ctx;
        let spec = &ctx.spec;
        self.state.quantile = match spec.quantile {
            QuantileMode::None => QuantileState::Inactive,
            QuantileMode::Gaussian => QuantileState::Gaussian,
            mode => {
                let rows: Vec<usize> = (0..ctx.n_fit).filter(|&i| ctx.usable[i]).collect();
                let means = &self.state.train_means;
                let cont: Vec<Vec<f64>> = rows.iter().map(|&i| ctx.z_continuous(i, means[i])).collect();
                let cat: Vec<Vec<f64>> = rows.iter().map(|&i| ctx.categorical[i].clone()).collect();
                let design = QuantileDesign::fit(&cont, &cat)?;
                let z: Vec<Vec<f64>> = cont.iter().zip(&cat).map(|(c, k)| design.row(c, k)).collect();
                let r: Vec<f64> = rows.iter().map(|&i| ctx.y_norm[i] - means[i]).collect();
                let models = ctx
                    .levels()
                    .iter()
                    .map(|&q| fit_offline_qr(&r, &z, q))
                    .collect::<Result<Vec<QrModel>>>()?;
                match mode {
                    QuantileMode::OfflineQr => QuantileState::Fixed { design, models },
                    QuantileMode::Ogd(a) => {
                        let pools = models
                            .iter()
                            .map(|m| ExpertPool::new(m, &[a], spec.eta))
                            .collect::<Result<Vec<_>>>()?;
                        QuantileState::Pools { design, pools }
                    }
                    QuantileMode::OgdBoa => {
                        let pools = models
                            .iter()
                            .map(|m| ExpertPool::new(m, &spec.alphas, spec.eta))
                            .collect::<Result<Vec<_>>>()?;
                        QuantileState::Pools { design, pools }
                    }
                    QuantileMode::IncrementalQr => {
                        let history = rows.iter().zip(z).zip(r).map(|((&i, z), r)| (i, z, r)).collect();
                        QuantileState::Incremental { design, models, history }
                    }
                    QuantileMode::None | QuantileMode::Gaussian => unreachable!(),
                }
            }
        };
        self.state.train_means = Vec::new();
        Ok(())
    }

    fn mean_forecast(&self, t: usize) -> Result<(f64, Option<Normal>)> {
        let ctx = self.ctx;
        match &self.state.kalman {
            Some(k) => {
                let f = &ctx.effects[t];
                let mut n = predictive_distribution(&k.state, f, &k.params)?;
                let extra = ctx.steps_between(k.time, ctx.ts[t]);
                if extra > 0.0 {
                    n.var += extra * k.params.q.iter().zip(f).map(|(q, v)| q * v * v).sum::<f64>();
                }
                Ok((n.mean, Some(n)))
            }
            None => Ok((ctx.base_mean[t], None)),
        }
    }

    fn step_row(&mut self, t: usize) -> Result<()> {
        let ctx = self.ctx;
        let now = ctx.ts[t];
        if let Some(entries) = ctx.row_log.get(&t) {
            self.out.updates.extend_from_slice(entries);
        }
        let (mean, normal) = self.mean_forecast(t)?;
        let test = t >= ctx.n_train;
        if !test {
            self.state.train_means.push(mean);
        }
        let mut pending = Pending { row: t, mean, z: None, issued: Vec::new() };
        if test {
            let z = match &self.state.quantile {
                QuantileState::Fixed { design, .. }
                | QuantileState::Pools { design, .. }
                | QuantileState::Incremental { design, .. } => {
                    Some(design.row(&ctx.z_continuous(t, mean), &ctx.categorical[t]))
                }
                _ => None,
            };
            let values: Vec<f64> = match &self.state.quantile {
                QuantileState::Inactive => Vec::new(),
                QuantileState::Gaussian => {
                    let n = normal.expect("gaussian mode runs a kalman mean");
                    ctx.levels().iter().map(|&q| gaussian_quantile(&n, q)).collect::<Result<_>>()?
                }
                QuantileState::Fixed { models, .. } | QuantileState::Incremental { models, .. } => {
                    let z = z.as_ref().expect("design present");
                    models.iter().map(|m| mean + m.correction(z)).collect()
                }
                QuantileState::Pools { pools, .. } => {
                    let z = z.as_ref().expect("design present");
                    let mut v = Vec::with_capacity(pools.len());
                    for p in pools {
                        let ex = p.expert_forecasts(z, mean);
                        let agg = aggregate(p, &ex)?;
                        v.push(agg);
                        pending.issued.push((ex, agg));
                    }
                    if (t - ctx.n_train).is_multiple_of(ctx.weight_stride) {
                        for p in pools {
                            for (a, w) in p.alphas.iter().zip(&p.weights) {
                                self.out.weights.push(WeightRow { timestamp: now, level: p.level, alpha: *a, weight: *w });
                            }
                        }
                    }
                    v
                }
            };
            if let (Some(w), true) = (ctx.window[t], ctx.usable[t]) {
                let sorted = if values.is_empty() { values } else { sort_quantiles(ctx.levels(), &values)? };
                let record = ForecastRecord {
                    timestamp: now,
                    series_id: ctx.series_id.clone(),
                    mean: ctx.anchor[t].unwrap_or_else(|| ctx.norm.back(mean)),
                    quantiles: sorted.iter().map(|v| ctx.norm.back(*v)).collect(),
                };
                if !record.mean.is_finite() || record.quantiles.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite forecast at {now}")));
                }
                self.out.rows.push(TraceRow { window: w, y: ctx.y[t], record });
            }
            pending.z = z;
        }
        let online_quantiles = matches!(
            self.state.quantile,
            QuantileState::Pools { .. } | QuantileState::Incremental { .. }
        );
        if self.state.kalman.is_some() || (test && online_quantiles) {
            self.state.pending.push_back(pending);
        }
        self.consume(t)?;
        if let QuantileState::Incremental { .. } = self.state.quantile {
            if t + 1 < ctx.len() && ctx.ts[t + 1].date() != now.date() {
                self.refit_quantiles(t)?;
            }
        }
        Ok(())
    }

    /// Feeds every pending outcome available at row `t`.
    fn consume(&mut self, t: usize) -> Result<()> {
        let ctx = self.ctx;
        let now = ctx.ts[t];
        let newest = now - ctx.step * ctx.delay as i32;
        while self.state.pending.front().is_some_and(|p| ctx.ts[p.row] <= newest) {
            let p = self.state.pending.pop_front().expect("checked non-empty");
            let u = p.row;
            if !ctx.usable[u] {
                continue;
            }
            let y = ctx.y_norm[u];
            if let Some(k) = &mut self.state.kalman {
                let gap = ctx.steps_between(k.time, ctx.ts[u]);
                let mut s = k.state.clone();
                if gap > 0.0 {
                    for (i, q) in k.params.q.iter().enumerate() {
                        s.p[(i, i)] += gap * q;
                    }
                }
                k.state = kalman_step(&s, &ctx.effects[u], y, &k.params)?;
                k.time = ctx.ts[u] + ctx.step;
                self.out.updates.push(UpdateEntry { at: now, consumed: ctx.ts[u], component: Component::Mean });
            }
            let Some(z) = &p.z else { continue };
            match &mut self.state.quantile {
                QuantileState::Pools { pools, .. } => {
                    for (pool, (ex, agg)) in pools.iter_mut().zip(&p.issued) {
                        *pool = pool.observe_issued(z, ex, *agg, y)?;
                    }
                }
                QuantileState::Incremental { history, .. } => {
                    history.push((u, z.clone(), y - p.mean));
                }
                _ => continue,
            }
            self.out.updates.push(UpdateEntry { at: now, consumed: ctx.ts[u], component: Component::Quantile });
        }
        Ok(())
    }

    fn refit_quantiles(&mut self, t: usize) -> Result<()> {
        let ctx = self.ctx;
        let QuantileState::Incremental { models, history, .. } = &mut self.state.quantile else {
            return Ok(());
        };
        let z: Vec<Vec<f64>> = history.iter().map(|h| h.1.clone()).collect();
        let r: Vec<f64> = history.iter().map(|h| h.2).collect();
        *models = ctx.levels().iter().map(|&q| fit_offline_qr(&r, &z, q)).collect::<Result<_>>()?;
        let newest = history.iter().map(|h| h.0).max().expect("history holds the training residuals");
        self.out.updates.push(UpdateEntry { at: ctx.ts[t], consumed: ctx.ts[newest], component: Component::Refit });
        Ok(())
    }
}
