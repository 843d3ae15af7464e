use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{time_of_year, ts_serde, Dataset};
use crate::error::{Error, Result};

/// True coefficients in force from row `start` onwards. `theta` has one
/// entry per effect followed by the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSegment {
    pub start: usize,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_series")]
    pub series_id: String,
    #[serde(default = "default_start", with = "ts_serde")]
    pub start: NaiveDateTime,
    #[serde(default = "default_step")]
    pub step_minutes: u32,
    pub length: usize,
    pub n_effects: usize,
    pub noise_sd: f64,
    pub schedule: Vec<RegimeSegment>,
    /// Per-coefficient random-walk standard deviation added on top of the
    /// schedule (empty: piecewise-constant coefficients).
    #[serde(default)]
    pub state_noise_sd: Vec<f64>,
    #[serde(default = "default_knots")]
    pub effect_knots: usize,
}

fn default_series() -> String {
    "synthetic".into()
}

fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid").and_hms_opt(0, 0, 0).expect("valid")
}

fn default_step() -> u32 {
    1440
}

fn default_knots() -> usize {
    6
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let dim = self.n_effects + 1;
        if self.length == 0 {
            return Err(Error::Config("length must be positive".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be finite and non-negative".into()));
        }
        if self.step_minutes == 0 {
            return Err(Error::Config("step_minutes must be positive".into()));
        }
        if self.effect_knots < 2 {
            return Err(Error::Config("effect_knots must be at least 2".into()));
        }
        match self.schedule.first() {
            Some(s) if s.start == 0 => {}
            _ => return Err(Error::Config("schedule must start with a segment at row 0".into())),
        }
        for (i, s) in self.schedule.iter().enumerate() {
            if s.theta.len() != dim {
                return Err(Error::Config(format!(
                    "schedule[{i}].theta has {} entries, expected {dim}",
                    s.theta.len()
                )));
            }
            if i > 0 && s.start <= self.schedule[i - 1].start {
                return Err(Error::Config(format!("schedule[{i}].start is not increasing")));
            }
        }
        if !self.state_noise_sd.is_empty() && self.state_noise_sd.len() != dim {
            return Err(Error::Config(format!(
                "state_noise_sd has {} entries, expected {dim}",
                self.state_noise_sd.len()
            )));
        }
        if self.state_noise_sd.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("state_noise_sd entries must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generated dataset plus the ground truth behind it.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// True coefficient vector per row.
    pub theta: Vec<Vec<f64>>,
    /// Standardized true effects per row, with a trailing 1.
    pub effects: Vec<Vec<f64>>,
    /// Noise-free signal `theta . effects`.
    pub signal: Vec<f64>,
}

/// Cubic Hermite curve through knot values with finite-difference slopes,
/// extended linearly outside the knot range.
struct Shape {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Shape {
    fn new(knots: Vec<f64>, values: Vec<f64>) -> Self {
        let k = knots.len();
        let slopes = (0..k)
            .map(|i| {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(k - 1));
                (values[b] - values[a]) / (knots[b] - knots[a])
            })
            .collect();
        Self { knots, values, slopes }
    }

    fn eval(&self, x: f64) -> f64 {
        let k = self.knots.len();
        if x <= self.knots[0] {
            return self.values[0] + self.slopes[0] * (x - self.knots[0]);
        }
        if x >= self.knots[k - 1] {
            return self.values[k - 1] + self.slopes[k - 1] * (x - self.knots[k - 1]);
        }
        let i = self.knots.partition_point(|&kn| kn <= x) - 1;
        let h = self.knots[i + 1] - self.knots[i];
        let s = (x - self.knots[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.values[i]
            + (s3 - 2.0 * s2 + s) * h * self.slopes[i]
            + (-2.0 * s3 + 3.0 * s2) * self.values[i + 1]
            + (s3 - s2) * h * self.slopes[i + 1]
    }
}

/// Draws a series `y_t = theta_t . f(x_t) + eps_t` with smooth random
/// effect shapes, seasonal autocorrelated covariates `x1..xd`, a piecewise
/// coefficient schedule and optional random-walk drift. Deterministic in
/// `seed`.
pub fn synthesize(cfg: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    cfg.validate()?;
    let n = cfg.length;
    let d = cfg.n_effects;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid");
    let step = TimeDelta::minutes(cfg.step_minutes as i64);
    let timestamps: Vec<NaiveDateTime> = (0..n).map(|i| cfg.start + step * i as i32).collect();
    let sub_daily = cfg.step_minutes < 1440;

    let mut columns = BTreeMap::new();
    let mut effect_cols = Vec::with_capacity(d);
    for j in 0..d {
        let yearly_amp = rng.random_range(0.1..0.35);
        let yearly_phase: f64 = rng.random();
        let daily_amp = if sub_daily { 0.2 } else { 0.0 };
        let daily_phase: f64 = rng.random();
        let rho = 0.9;
        let mut ar = 0.0;
        let x: Vec<f64> = timestamps
            .iter()
            .map(|t| {
                ar = rho * ar + (1.0f64 - rho * rho).sqrt() * std_normal.sample(&mut rng);
                let toy = time_of_year(*t, step.num_seconds());
                let tod = t.num_seconds_from_midnight() as f64 / 86_400.0;
                0.5 + yearly_amp * (2.0 * PI * (toy + yearly_phase)).sin()
                    + daily_amp * (2.0 * PI * (tod + daily_phase)).sin()
                    + 0.15 * ar
            })
            .collect();

        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let k = cfg.effect_knots;
        let knots: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
        let values: Vec<f64> = (0..k).map(|_| std_normal.sample(&mut rng)).collect();
        let shape = Shape::new(knots, values);
        let mut f: Vec<f64> = x.iter().map(|&v| shape.eval(v)).collect();
        let m = f.iter().sum::<f64>() / n as f64;
        let sd = (f.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        f.iter_mut().for_each(|v| *v = (*v - m) / sd);
        effect_cols.push(f);
        columns.insert(format!("x{}", j + 1), x);
    }

    let mut drift = vec![0.0; d + 1];
    let mut seg = 0;
    let mut theta = Vec::with_capacity(n);
    let mut effects = Vec::with_capacity(n);
    let mut signal = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for t in 0..n {
        while seg + 1 < cfg.schedule.len() && cfg.schedule[seg + 1].start <= t {
            seg += 1;
        }
        if t > 0 {
            for (k, sd) in cfg.state_noise_sd.iter().enumerate() {
                drift[k] += sd * std_normal.sample(&mut rng);
            }
        }
        let th: Vec<f64> = cfg.schedule[seg].theta.iter().zip(&drift).map(|(a, b)| a + b).collect();
        let mut f: Vec<f64> = effect_cols.iter().map(|c| c[t]).collect();
        f.push(1.0);
        let s: f64 = th.iter().zip(&f).map(|(a, b)| a * b).sum();
        let noise = if cfg.noise_sd > 0.0 { cfg.noise_sd * std_normal.sample(&mut rng) } else { 0.0 };
        y.push(s + noise);
        signal.push(s);
        theta.push(th);
        effects.push(f);
    }

    let dataset = Dataset::new(cfg.series_id.clone(), timestamps, y, columns)?;
    Ok(SynthOutput { dataset, theta, effects, signal })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_effects: usize, noise_sd: f64, schedule: Vec<RegimeSegment>) -> SynthConfig {
        SynthConfig {
            series_id: "s".into(),
            start: default_start(),
            step_minutes: 1440,
            length: 1000,
            n_effects,
            noise_sd,
            schedule,
            state_noise_sd: vec![],
            effect_knots: 6,
        }
    }

    #[test]
    fn noiseless_reproduces_signal() {
        let c = cfg(3, 0.0, vec![RegimeSegment { start: 0, theta: vec![1.0, -2.0, 0.5, 3.0] }]);
        let out = synthesize(&c, 7).unwrap();
        for t in 0..c.length {
            let s: f64 = out.theta[t].iter().zip(&out.effects[t]).map(|(a, b)| a * b).sum();
            assert_eq!(out.dataset.target()[t], s);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let c = cfg(2, 1.0, vec![RegimeSegment { start: 0, theta: vec![1.0, 1.0, 0.0] }]);
        let a = synthesize(&c, 11).unwrap();
        let b = synthesize(&c, 11).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.dataset.content_hash(), b.dataset.content_hash());
        let other = synthesize(&c, 12).unwrap();
        assert_ne!(a.dataset.target(), other.dataset.target());
    }

    #[test]
    fn jump_shifts_mean_by_offset() {
        let sigma = 1.0;
        let c = cfg(
            0,
            sigma,
            vec![
                RegimeSegment { start: 0, theta: vec![0.0] },
                RegimeSegment { start: 500, theta: vec![2.0] },
            ],
        );
        let y = synthesize(&c, 3).unwrap().dataset.target().to_vec();
        let before = y[..500].iter().sum::<f64>() / 500.0;
        let after = y[500..].iter().sum::<f64>() / 500.0;
        assert!(((after - before) - 2.0).abs() < 3.0 * sigma / 500f64.sqrt());
    }

    #[test]
    fn invalid_configs() {
        let mut c = cfg(1, 1.0, vec![RegimeSegment { start: 0, theta: vec![1.0, 0.0] }]);
        c.length = 0;
        assert!(matches!(synthesize(&c, 0), Err(Error::Config(_))));
        let mut c = cfg(1, -1.0, vec![RegimeSegment { start: 0, theta: vec![1.0, 0.0] }]);
        assert!(matches!(synthesize(&c, 0), Err(Error::Config(_))));
        c.noise_sd = 1.0;
        c.schedule[0].theta.push(1.0);
        assert!(matches!(synthesize(&c, 0), Err(Error::Config(_))));
    }
}
