//! Bernstein online aggregation of quantile experts that differ only in
//! their gradient step size.

use std::io::Write;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::dataset::fmt_f64;
use crate::error::{Error, Result};
use crate::quantile::{ogd_step, pinball, QrModel};

/// `10^i` for `i = -8..=0`.
pub fn default_alphas() -> Vec<f64> {
    (-8..=0).map(|i| 10f64.powi(i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaRule {
    Fixed(f64),
    /// Per-expert `min(1/E_k, sqrt(ln K / V_k))` from the running maximum
    /// `E_k` and sum `V_k` of squared instantaneous regrets.
    Adaptive,
}

/// One quantile level: `K` OGD learners and their mixture weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPool {
    pub level: f64,
    pub alphas: Vec<f64>,
    pub experts: Vec<QrModel>,
    pub weights: Vec<f64>,
    pub eta: EtaRule,
    /// Running sum of squared regrets and running max absolute regret.
    pub v: Vec<f64>,
    pub e: Vec<f64>,
}

impl ExpertPool {
    /// Every expert starts from `init`, with uniform weights.
    pub fn new(init: &QrModel, alphas: &[f64], eta: EtaRule) -> Result<Self> {
        let k = alphas.len();
        Self::with_weights(init, alphas, eta, vec![1.0 / k.max(1) as f64; k])
    }

    pub fn with_weights(init: &QrModel, alphas: &[f64], eta: EtaRule, weights: Vec<f64>) -> Result<Self> {
        let k = alphas.len();
        if k == 0 {
            return Err(Error::Config("expert pool needs at least one step size".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::Config(format!("step size {a} must be positive")));
        }
        if let EtaRule::Fixed(e) = eta {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("learning rate {e} must be positive")));
            }
        }
        let sum: f64 = weights.iter().sum();
        if weights.len() != k || weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config("prior weights must be a probability vector over the experts".into()));
        }
        Ok(Self {
            level: init.level,
            alphas: alphas.to_vec(),
            experts: vec![init.clone(); k],
            weights,
            eta,
            v: vec![0.0; k],
            e: vec![0.0; k],
        })
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Quantile forecast of every expert at mean forecast `mean`.
    pub fn expert_forecasts(&self, z: &[f64], mean: f64) -> Vec<f64> {
        self.experts.iter().map(|m| mean + m.correction(z)).collect()
    }

    /// Mixture forecast for this step.
    pub fn predict(&self, z: &[f64], mean: f64) -> Result<f64> {
        aggregate(self, &self.expert_forecasts(z, mean))
    }

    /// Feeds the realized `y`: BOA weight update on the pinball losses of
    /// this step's forecasts, then one OGD step per expert.
    pub fn observe(&self, z: &[f64], mean: f64, y: f64) -> Result<Self> {
        let forecasts = self.expert_forecasts(z, mean);
        let agg = aggregate(self, &forecasts)?;
        self.observe_issued(z, &forecasts, agg, y)
    }

    /// Like [`ExpertPool::observe`] for an outcome revealed after a delay:
    /// losses and subgradient signs come from the forecasts issued back
    /// then, the steps are applied to the current coefficients.
    pub fn observe_issued(&self, z: &[f64], issued: &[f64], issued_agg: f64, y: f64) -> Result<Self> {
        if issued.len() != self.len() {
            return Err(Error::Config(format!("{} issued forecasts for {} experts", issued.len(), self.len())));
        }
        let losses: Vec<f64> = issued.iter().map(|f| pinball(y, *f, self.level)).collect();
        let mut next = boa_update(self, &losses, pinball(y, issued_agg, self.level))?;
        for ((m, a), f) in next.experts.iter_mut().zip(&self.alphas).zip(issued) {
            *m = subgradient_step(m, z, y - f, *a);
        }
        Ok(next)
    }
}

/// OGD step given the sign of the error `y - forecast`.
fn subgradient_step(m: &QrModel, z: &[f64], err: f64, alpha: f64) -> QrModel {
    let probe = QrModel { level: m.level, beta: vec![0.0; z.len()] };
    let step = ogd_step(&probe, z, err, alpha);
    let beta = m.beta.iter().zip(&step.beta).map(|(b, d)| b + d).collect();
    QrModel { level: m.level, beta }
}

/// Weighted average of the expert forecasts.
pub fn aggregate(pool: &ExpertPool, forecasts: &[f64]) -> Result<f64> {
    if forecasts.len() != pool.len() {
        return Err(Error::Config(format!("{} forecasts for {} experts", forecasts.len(), pool.len())));
    }
    if let Some(k) = forecasts.iter().position(|f| !f.is_finite()) {
        return Err(Error::Numerical(format!("expert {k} (step size {}) produced a non-finite forecast", pool.alphas[k])));
    }
    let (lo, hi) = forecasts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), f| (a.min(*f), b.max(*f)));
    let v: f64 = pool.weights.iter().zip(forecasts).map(|(w, f)| w * f).sum();
    // Rounding can leave the average a hair outside the hull.
    Ok(v.clamp(lo, hi))
}

/// Reweights experts by `exp(eta r_k - eta^2 r_k^2)` with instantaneous
/// regrets `r_k = loss - losses[k]`.
pub fn boa_update(pool: &ExpertPool, losses: &[f64], loss: f64) -> Result<ExpertPool> {
    let k = pool.len();
    if losses.len() != k {
        return Err(Error::Config(format!("{} losses for {k} experts", losses.len())));
    }
    if !loss.is_finite() || losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("non-finite loss in expert update".into()));
    }
    let mut next = pool.clone();
    let log_k = (k as f64).ln();
    let mut logw = Vec::with_capacity(k);
    for j in 0..k {
        let r = loss - losses[j];
        let eta = match pool.eta {
            EtaRule::Fixed(e) => e,
            EtaRule::Adaptive => {
                next.v[j] += r * r;
                next.e[j] = next.e[j].max(r.abs());
                if next.v[j] > 0.0 {
                    (1.0 / next.e[j]).min((log_k / next.v[j]).sqrt())
                } else {
                    0.0
                }
            }
        };
        let w = pool.weights[j];
        logw.push(if w > 0.0 { w.ln() + eta * r - eta * eta * r * r } else { f64::NEG_INFINITY });
    }
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(top.is_finite(), "expert weights lost all mass");
    let raw: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let mass: f64 = raw.iter().sum();
    next.weights = raw.iter().map(|w| w / mass).collect();
    Ok(next)
}

/// One observation for a pool: quantile covariates, mean forecast, outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolInput {
    pub z: Vec<f64>,
    pub mean: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolTrace {
    pub forecasts: Vec<f64>,
    /// Weights used for each step's forecast.
    pub weights: Vec<Vec<f64>>,
    pub experts: Vec<Vec<f64>>,
}

/// Runs the pool over a stream in which each outcome is revealed right
/// after its own forecast.
pub fn run_pool(pool: &ExpertPool, stream: &[PoolInput]) -> Result<(PoolTrace, ExpertPool)> {
    let mut p = pool.clone();
    let mut trace = PoolTrace { forecasts: Vec::new(), weights: Vec::new(), experts: Vec::new() };
    for s in stream {
        let ex = p.expert_forecasts(&s.z, s.mean);
        trace.forecasts.push(aggregate(&p, &ex)?);
        trace.weights.push(p.weights.clone());
        trace.experts.push(ex);
        p = p.observe(&s.z, s.mean, s.y)?;
    }
    Ok((trace, p))
}

/// Long-format weight trace row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub timestamp: NaiveDateTime,
    pub level: f64,
    pub alpha: f64,
    pub weight: f64,
}

/// CSV with columns `timestamp,level,alpha,weight`.
pub fn write_weight_trace<W: Write>(rows: &[WeightRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["timestamp", "level", "alpha", "weight"])?;
    for r in rows {
        out.write_record([
            r.timestamp.format(crate::dataset::TIMESTAMP_FORMAT).to_string(),
            fmt_f64(r.level),
            fmt_f64(r.alpha),
            fmt_f64(r.weight),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn pool(k: usize, eta: EtaRule) -> ExpertPool {
        let alphas: Vec<f64> = (0..k).map(|i| 10f64.powi(-(i as i32))).collect();
        ExpertPool::new(&QrModel::zeros(0.5, 1), &alphas, eta).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let p = pool(3, EtaRule::Adaptive);
        assert!((aggregate(&p, &[1.0, 2.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
        let mut p = p;
        p.weights = vec![0.0, 1.0, 0.0];
        assert_eq!(aggregate(&p, &[1.0, 2.5, 3.0]).unwrap(), 2.5);
        match aggregate(&p, &[1.0, f64::NAN, 3.0]) {
            Err(Error::Numerical(m)) => assert!(m.contains("expert 1")),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn aggregate_is_convex(w in prop::collection::vec(0.0f64..1.0, 4), f in prop::collection::vec(-100.0f64..100.0, 4)) {
            let s: f64 = w.iter().sum();
            prop_assume!(s > 1e-6);
            let mut p = pool(4, EtaRule::Adaptive);
            p.weights = w.iter().map(|v| v / s).collect();
            let v = aggregate(&p, &f).unwrap();
            let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn identical_losses_keep_uniform_weights() {
        for eta in [EtaRule::Adaptive, EtaRule::Fixed(0.5)] {
            let p = pool(5, eta);
            let next = boa_update(&p, &[0.3; 5], 0.3).unwrap();
            assert!(next.weights.iter().all(|w| (w - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn better_expert_takes_over() {
        let mut p = pool(2, EtaRule::Fixed(0.1));
        let mut prev = p.weights[0];
        let mut reached = None;
        for t in 0..500 {
            let losses = [0.2, 0.3];
            let loss = p.weights[0] * losses[0] + p.weights[1] * losses[1];
            p = boa_update(&p, &losses, loss).unwrap();
            assert!(p.weights[0] > prev);
            prev = p.weights[0];
            if p.weights[0] > 0.99 && reached.is_none() {
                reached = Some(t);
            }
        }
        assert!(reached.is_some(), "final weight {}", p.weights[0]);
    }

    #[test]
    fn weights_stay_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = pool(9, EtaRule::Adaptive);
        for _ in 0..100_000 {
            let losses: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..2.0)).collect();
            let loss = rng.random_range(0.0..2.0);
            p = boa_update(&p, &losses, loss).unwrap();
            let s: f64 = p.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-9 && p.weights.iter().all(|w| *w >= 0.0));
        }
    }

    fn drift_stream(seed: u64, n: usize) -> Vec<PoolInput> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|t| {
                let shift = if t > n / 2 { 1.5 } else { 0.0 };
                let mean = (t as f64 * 0.05).sin();
                PoolInput { z: vec![1.0], mean, y: mean + shift + rng.sample::<f64, _>(StandardNormal) * 0.5 }
            })
            .collect()
    }

    #[test]
    fn single_expert_pool_equals_the_expert() {
        let stream = drift_stream(2, 500);
        let p = ExpertPool::new(&QrModel::zeros(0.8, 1), &[0.01], EtaRule::Adaptive).unwrap();
        let (trace, _) = run_pool(&p, &stream).unwrap();
        let mut m = QrModel::zeros(0.8, 1);
        for (s, f) in stream.iter().zip(&trace.forecasts) {
            assert_eq!(*f, s.mean + m.correction(&s.z));
            m = ogd_step(&m, &s.z, s.y - s.mean, 0.01);
        }
    }

    #[test]
    fn regret_against_best_expert_is_bounded() {
        let n = 4000;
        let stream = drift_stream(3, n);
        let q = 0.9;
        let p = ExpertPool::new(&QrModel::zeros(q, 1), &default_alphas(), EtaRule::Adaptive).unwrap();
        let (trace, _) = run_pool(&p, &stream).unwrap();
        let agg: f64 = trace.forecasts.iter().zip(&stream).map(|(f, s)| pinball(s.y, *f, q)).sum();
        let mut best = f64::INFINITY;
        let mut range = 0.0f64;
        for k in 0..p.len() {
            let l: Vec<f64> = trace.experts.iter().zip(&stream).map(|(e, s)| pinball(s.y, e[k], q)).collect();
            range = range.max(l.iter().copied().fold(0.0, f64::max));
            best = best.min(l.iter().sum());
        }
        let bound = range * (n as f64).sqrt() * (p.len() as f64).ln();
        assert!(agg <= best + bound, "{agg} > {best} + {bound}");
    }

    #[test]
    fn duplicated_expert_changes_nothing_with_fixed_rate() {
        let stream = drift_stream(4, 2000);
        let init = QrModel::zeros(0.3, 1);
        let eta = EtaRule::Fixed(0.7);
        let a = ExpertPool::with_weights(&init, &[0.1, 0.001], eta, vec![0.5, 0.5]).unwrap();
        let b = ExpertPool::with_weights(&init, &[0.1, 0.1, 0.001], eta, vec![0.25, 0.25, 0.5]).unwrap();
        let (ta, _) = run_pool(&a, &stream).unwrap();
        let (tb, _) = run_pool(&b, &stream).unwrap();
        for (x, y) in ta.forecasts.iter().zip(&tb.forecasts) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn outcome_only_affects_later_forecasts() {
        let stream = drift_stream(5, 300);
        let p = ExpertPool::new(&QrModel::zeros(0.5, 1), &default_alphas(), EtaRule::Adaptive).unwrap();
        let (base, _) = run_pool(&p, &stream).unwrap();
        let t0 = 150;
        let mut shifted = stream.clone();
        shifted[t0].y += 3.0;
        let (alt, _) = run_pool(&p, &shifted).unwrap();
        assert_eq!(base.forecasts[..=t0], alt.forecasts[..=t0]);
        assert_ne!(base.forecasts[t0 + 1], alt.forecasts[t0 + 1]);
    }

    #[test]
    fn pool_state_round_trips_and_trace_csv() {
        let p = pool(3, EtaRule::Fixed(0.2));
        let back: ExpertPool = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        let ts = crate::dataset::parse_timestamp("2020-01-01").unwrap();
        let rows = vec![WeightRow { timestamp: ts, level: 0.5, alpha: 0.01, weight: 0.25 }];
        let mut buf = Vec::new();
        write_weight_trace(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "timestamp,level,alpha,weight\n2020-01-01T00:00:00,0.5,0.01,0.25\n");
        assert!(ExpertPool::new(&QrModel::zeros(0.5, 1), &[], EtaRule::Adaptive).is_err());
    }
}
