//! Online adaptation of the frozen-effect linear model: the state-space model
//! `y_t = theta_t . f_t + eps_t`, `theta_{t+1} = theta_t + eta_t`, filtered
//! exactly, with static or likelihood-calibrated noise variances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatrsNormal};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// Minimum number of rows for variance calibration; smaller training sets
/// fall back to the static setting.
pub const MIN_DYNAMIC_ROWS: usize = 200;

/// Noise variances: diagonal state noise `q` (length d+1) and observation noise `sigma2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmParams {
    pub q: Vec<f64>,
    pub sigma2: f64,
}

impl SsmParams {
    pub fn new(q: Vec<f64>, sigma2: f64) -> Result<Self> {
        let p = Self { q, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if let Some(v) = self.q.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("state noise variances must be >= 0, got {v}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

/// Filtering distribution `theta_t | F_{t-1} ~ N(theta, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmState {
    pub theta: DVector<f64>,
    pub p: DMatrix<f64>,
    pub t: u64,
}

impl SsmState {
    pub fn new(theta: Vec<f64>, p: DMatrix<f64>) -> Result<Self> {
        let s = Self { theta: DVector::from_vec(theta), p, t: 0 };
        s.validate()?;
        Ok(s)
    }

    /// Prior with identity covariance.
    pub fn with_identity(theta: Vec<f64>) -> Self {
        let d = theta.len();
        Self { theta: DVector::from_vec(theta), p: DMatrix::identity(d, d), t: 0 }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.theta.len();
        if self.p.shape() != (d, d) {
            return Err(Error::Config(format!("covariance is {:?}, state has length {d}", self.p.shape())));
        }
        if self.theta.iter().chain(self.p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite state".into()));
        }
        let asym = (&self.p - self.p.transpose()).amax();
        if asym > 1e-10 * self.p.amax().max(1.0) {
            return Err(Error::Numerical(format!("state covariance asymmetric by {asym:e}")));
        }
        let min_eig = self.p.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 * self.p.amax().max(1.0) {
            return Err(Error::Numerical(format!("state covariance has eigenvalue {min_eig:e}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let st: SsmState = serde_json::from_str(s)?;
        st.validate()?;
        Ok(st)
    }
}

/// Gaussian predictive law of the next observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normal {
    pub mean: f64,
    pub var: f64,
}

impl Normal {
    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        standard_normal().cdf((y - self.mean) / self.sd())
    }

    pub fn log_density(&self, y: f64) -> f64 {
        -0.5 * ((2.0 * std::f64::consts::PI * self.var).ln() + (y - self.mean).powi(2) / self.var)
    }
}

fn standard_normal() -> StatrsNormal {
    StatrsNormal::new(0.0, 1.0).expect("valid standard normal")
}

fn check_dims(s: &SsmState, f: &[f64], params: &SsmParams) -> Result<()> {
    if f.len() != s.dim() || params.dim() != s.dim() {
        return Err(Error::Config(format!(
            "dimension mismatch: state {}, effects {}, noise {}",
            s.dim(),
            f.len(),
            params.dim()
        )));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite effect vector".into()));
    }
    Ok(())
}

/// One filtering recursion after observing `y` with effects `f`.
pub fn kalman_step(s: &SsmState, f: &[f64], y: f64, params: &SsmParams) -> Result<SsmState> {
    check_dims(s, f, params)?;
    if !y.is_finite() {
        return Err(Error::Numerical(format!("non-finite observation at step {}", s.t)));
    }
    let f = DVector::from_column_slice(f);
    let pf = &s.p * &f;
    let denom = f.dot(&pf) + params.sigma2;
    assert!(denom > 0.0, "innovation variance must be positive");
    // Joseph form of P - P f f' P / denom.
    let gain = &pf / denom;
    let d = s.dim();
    let a = DMatrix::identity(d, d) - &gain * f.transpose();
    let mut post = &a * &s.p * a.transpose() + (&gain * gain.transpose()) * params.sigma2;
    symmetrize(&mut post);
    let innovation = s.theta.dot(&f) - y;
    let theta = &s.theta - (&post * &f) * (innovation / params.sigma2);
    let mut p = post;
    for (i, q) in params.q.iter().enumerate() {
        p[(i, i)] += q;
    }
    if theta.iter().chain(p.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("filter diverged at step {}", s.t)));
    }
    Ok(SsmState { theta, p, t: s.t + 1 })
}

/// `N(theta . f, f' P f + sigma2)`.
pub fn predictive_distribution(s: &SsmState, f: &[f64], params: &SsmParams) -> Result<Normal> {
    check_dims(s, f, params)?;
    let f = DVector::from_column_slice(f);
    let mean = s.theta.dot(&f);
    let var = f.dot(&(&s.p * &f)).max(0.0) + params.sigma2;
    Ok(Normal { mean, var })
}

pub fn gaussian_quantile(n: &Normal, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("quantile level {q} outside (0, 1)")));
    }
    Ok(n.mean + standard_normal().inverse_cdf(q) * n.sd())
}

/// Static setting: constant state, unit observation variance.
pub fn static_params(d: usize) -> SsmParams {
    SsmParams { q: vec![0.0; d + 1], sigma2: 1.0 }
}

/// Sum of one-step-ahead predictive log densities while filtering from `prior`.
pub fn log_likelihood(prior: &SsmState, params: &SsmParams, effects: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let mut s = prior.clone();
    let mut ll = 0.0;
    for (f, &yt) in effects.iter().zip(y) {
        ll += predictive_distribution(&s, f, params)?.log_density(yt);
        s = kalman_step(&s, f, yt, params)?;
    }
    Ok(ll)
}

/// Grid for the observation variance, as multiples of the residual variance.
pub fn sigma2_grid() -> Vec<f64> {
    (-6..=2).map(|i| 10f64.powi(i)).collect()
}

/// Grid for each state-noise variance relative to `sigma2`.
pub fn q_ratio_grid() -> Vec<f64> {
    std::iter::once(0.0).chain((-10..=-2).map(|i| 10f64.powi(i))).collect()
}

/// Switching a state-noise variance on costs this much log-likelihood
/// (one nat per extra free parameter); other moves need a strict gain.
pub const MIN_LOGLIK_GAIN: f64 = 1.0;
const MAX_SWEEPS: usize = 50;
/// Multiplicative steps of the local refinement after the grid search.
const REFINE_STEPS: [f64; 4] = [0.5, 0.25, 0.125, 0.0625];

/// Greedy coordinate search for `(Q, sigma2)` maximizing the predictive
/// log-likelihood on the training stream, first over fixed grids, then by
/// shrinking multiplicative steps around the grid optimum. The result is
/// never worse than the static setting.
pub fn fit_dynamic(prior: &SsmState, effects: &[Vec<f64>], y: &[f64]) -> Result<SsmParams> {
    let d1 = prior.dim();
    if effects.len() != y.len() {
        return Err(Error::Config("effects and targets differ in length".into()));
    }
    let fixed = static_params(d1 - 1);
    if y.len() < MIN_DYNAMIC_ROWS {
        log::warn!("{} training rows is below {MIN_DYNAMIC_ROWS}; using static variances", y.len());
        return Ok(fixed);
    }
    let static_ll = log_likelihood(prior, &fixed, effects, y)?;
    // Residual variance of the prior state's predictions.
    let resvar = {
        let r: Vec<f64> = effects
            .iter()
            .zip(y)
            .map(|(f, yt)| yt - f.iter().zip(prior.theta.iter()).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        let v = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / r.len() as f64;
        if v > 0.0 && v.is_finite() {
            v
        } else {
            1.0
        }
    };
    // Coordinate 0 is sigma2 / resvar, coordinate j > 0 is Q_{j-1} / sigma2.
    let build = |c: &[f64]| SsmParams { q: c[1..].iter().map(|r| r * c[0] * resvar).collect(), sigma2: c[0] * resvar };
    let eval = |c: &[f64]| match log_likelihood(prior, &build(c), effects, y) {
        Ok(v) if v.is_finite() => v,
        _ => f64::NEG_INFINITY,
    };
    let accept = |old: f64, new: f64, ll_old: f64, ll_new: f64| {
        let gain = if old == 0.0 && new != 0.0 { MIN_LOGLIK_GAIN } else { 0.0 };
        ll_new > ll_old + gain
    };
    let s_grid = sigma2_grid();
    let q_grid = q_ratio_grid();
    let mut coords = vec![1.0; d1 + 1];
    coords[1..].iter_mut().for_each(|v| *v = 0.0);
    let mut best = eval(&coords);

    // Try every candidate for one coordinate and keep the best acceptable move.
    let search = |coords: &mut Vec<f64>, best: &mut f64, cand: &dyn Fn(usize, f64) -> Vec<f64>| {
        let mut moved = false;
        for j in 0..coords.len() {
            let current = coords[j];
            let mut pick: Option<(f64, f64)> = None;
            for v in cand(j, current) {
                if v == current {
                    continue;
                }
                let mut trial = coords.clone();
                trial[j] = v;
                let ll = eval(&trial);
                if accept(current, v, *best, ll) && pick.is_none_or(|(_, b)| ll > b) {
                    pick = Some((v, ll));
                }
            }
            if let Some((v, ll)) = pick {
                coords[j] = v;
                *best = ll;
                moved = true;
            }
        }
        moved
    };

    let grid = |j: usize, _: f64| if j == 0 { s_grid.clone() } else { q_grid.clone() };
    for _ in 0..MAX_SWEEPS {
        // Deterministic search: a sweep without a move is a fixed point.
        if !search(&mut coords, &mut best, &grid) {
            break;
        }
    }
    for step in REFINE_STEPS {
        let factor = 10f64.powf(step);
        let local = move |_: usize, v: f64| if v > 0.0 { vec![v * factor, v / factor] } else { Vec::new() };
        for _ in 0..MAX_SWEEPS {
            if !search(&mut coords, &mut best, &local) {
                break;
            }
        }
    }
    if !(best.is_finite() && best >= static_ll) {
        log::warn!("variance search did not improve on the static setting; using static variances");
        return Ok(fixed);
    }
    Ok(build(&coords))
}

/// Draws a stream from the state-space model: `theta_1 ~ N(prior)`, random-walk
/// states with covariance `diag(q)`, and Gaussian observation noise.
pub fn simulate<R: Rng + ?Sized>(
    prior: &SsmState,
    params: &SsmParams,
    effects: &[Vec<f64>],
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = prior.dim();
    let chol = prior
        .p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("prior covariance is not positive definite".into()))?;
    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut theta = &prior.theta + chol.l() * z;
    let mut ys = Vec::with_capacity(effects.len());
    let mut thetas = Vec::with_capacity(effects.len());
    for f in effects {
        let fv = DVector::from_column_slice(f);
        let eps: f64 = StandardNormal.sample(rng);
        ys.push(theta.dot(&fv) + params.sigma2.sqrt() * eps);
        thetas.push(theta.iter().copied().collect());
        for (i, q) in params.q.iter().enumerate() {
            let e: f64 = StandardNormal.sample(rng);
            theta[i] += q.sqrt() * e;
        }
    }
    Ok((ys, thetas))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn scalar_state(theta: f64, p: f64) -> SsmState {
        SsmState::new(vec![theta], DMatrix::from_element(1, 1, p)).unwrap()
    }

    fn random_effects(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let mut f: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                f.push(1.0);
                f
            })
            .collect()
    }

    #[test]
    fn scalar_hand_example() {
        let p = SsmParams::new(vec![0.0], 1.0).unwrap();
        let s = kalman_step(&scalar_state(0.0, 1.0), &[1.0], 2.0, &p).unwrap();
        assert!((s.theta[0] - 1.0).abs() < 1e-15);
        assert!((s.p[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_innovation_keeps_state_and_adds_q() {
        let p = SsmParams::new(vec![0.25], 1.0).unwrap();
        let s = kalman_step(&scalar_state(3.0, 1.0), &[2.0], 6.0, &p).unwrap();
        assert_eq!(s.theta[0], 3.0);
        // P_{t|t} = 1 - 4/5 = 0.2, then + Q.
        assert!((s.p[(0, 0)] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn repeated_observation_converges_to_least_squares() {
        let p = static_params(0);
        let mut s = scalar_state(0.0, 1.0);
        for _ in 0..10_000 {
            s = kalman_step(&s, &[2.0], 3.0, &p).unwrap();
        }
        assert!((s.theta[0] - 1.5).abs() < 1e-4);
        assert!(s.p[(0, 0)] < 1e-4);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let p = static_params(0);
        let s = scalar_state(0.0, 1.0);
        assert!(matches!(kalman_step(&s, &[f64::NAN], 1.0, &p), Err(Error::Numerical(_))));
        assert!(matches!(kalman_step(&s, &[1.0], f64::INFINITY, &p), Err(Error::Numerical(_))));
        assert!(matches!(kalman_step(&s, &[1.0, 2.0], 1.0, &p), Err(Error::Config(_))));
    }

    fn ridge(prior: &SsmState, sigma2: f64, effects: &[Vec<f64>], y: &[f64]) -> DVector<f64> {
        let pinv = prior.p.clone().try_inverse().unwrap();
        let mut a = &pinv * sigma2;
        let mut b = &pinv * &prior.theta * sigma2;
        for (f, yt) in effects.iter().zip(y) {
            let fv = DVector::from_column_slice(f);
            a += &fv * fv.transpose();
            b += fv * *yt;
        }
        a.lu().solve(&b).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn filter_equals_ridge(seed in 0u64..10_000, d in 1usize..=4, n in 1usize..=50, sigma2 in 0.05f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let effects = random_effects(n, d - 1, &mut rng);
            let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
            let theta0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let l = DMatrix::from_fn(d, d, |i, j| if i >= j { rng.random_range(-0.5..0.5) + if i == j { 1.0 } else { 0.0 } } else { 0.0 });
            let prior = SsmState::new(theta0, &l * l.transpose()).unwrap();
            let params = SsmParams::new(vec![0.0; d], sigma2).unwrap();
            let mut s = prior.clone();
            for (f, yt) in effects.iter().zip(&y) {
                s = kalman_step(&s, f, *yt, &params).unwrap();
            }
            let want = ridge(&prior, sigma2, &effects, &y);
            let rel = (&s.theta - &want).norm() / want.norm().max(1e-12);
            prop_assert!(rel < 1e-8, "relative error {}", rel);
        }

        #[test]
        fn common_scaling_leaves_states_unchanged(seed in 0u64..10_000, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3;
            let effects = random_effects(40, d - 1, &mut rng);
            let y: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let base = SsmParams::new(vec![0.01, 0.0, 0.1], 0.5).unwrap();
            let scaled = SsmParams::new(base.q.iter().map(|v| v * c).collect(), base.sigma2 * c).unwrap();
            let mut a = SsmState::with_identity(vec![0.3, -0.2, 1.0]);
            let mut b = SsmState { p: &a.p * c, ..a.clone() };
            for (f, yt) in effects.iter().zip(&y) {
                a = kalman_step(&a, f, *yt, &base).unwrap();
                b = kalman_step(&b, f, *yt, &scaled).unwrap();
                let gap = (&a.theta - &b.theta).amax();
                prop_assert!(gap <= 1e-10 * a.theta.amax().max(1.0), "gap {}", gap);
                let var = predictive_distribution(&a, f, &base).unwrap().var;
                prop_assert!(var >= base.sigma2);
            }
            prop_assert!(a.validate().is_ok());
        }
    }

    /// Predictive law of y_t given y_1..y_{t-1}, computed by conditioning the
    /// joint Gaussian of all states and observations.
    fn joint_gaussian_predictive(prior: &SsmState, params: &SsmParams, effects: &[Vec<f64>], y: &[f64], t: usize) -> Normal {
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&params.q));
        let cov_theta = |a: usize, b: usize| &prior.p + &q * (a.min(b) as f64);
        let fv = |i: usize| DVector::from_column_slice(&effects[i]);
        let cov_y = |a: usize, b: usize| {
            let v = (fv(a).transpose() * cov_theta(a, b) * fv(b))[(0, 0)];
            v + if a == b { params.sigma2 } else { 0.0 }
        };
        let mean_t = prior.theta.dot(&fv(t));
        if t == 0 {
            return Normal { mean: mean_t, var: cov_y(0, 0) };
        }
        let syy = DMatrix::from_fn(t, t, cov_y);
        let c = DVector::from_fn(t, |s, _| cov_y(t, s));
        let resid = DVector::from_fn(t, |s, _| y[s] - prior.theta.dot(&fv(s)));
        let inv = syy.try_inverse().unwrap();
        Normal {
            mean: mean_t + (c.transpose() * &inv * resid)[(0, 0)],
            var: cov_y(t, t) - (c.transpose() * &inv * &c)[(0, 0)],
        }
    }

    #[test]
    fn predictive_matches_joint_gaussian_conditioning() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let effects = random_effects(5, 1, &mut rng);
            let y: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let prior = SsmState::new(vec![0.5, -0.1], DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8])).unwrap();
            let params = SsmParams::new(vec![0.05, 0.2], 0.7).unwrap();
            let mut s = prior.clone();
            for t in 0..5 {
                let got = predictive_distribution(&s, &effects[t], &params).unwrap();
                let want = joint_gaussian_predictive(&prior, &params, &effects, &y, t);
                assert!((got.mean - want.mean).abs() < 1e-8);
                assert!((got.var - want.var).abs() < 1e-8);
                s = kalman_step(&s, &effects[t], y[t], &params).unwrap();
            }
        }
    }

    #[test]
    fn predictive_variance_special_cases() {
        let params = SsmParams::new(vec![0.0, 0.0], 0.3).unwrap();
        let s = SsmState::new(vec![1.0, 2.0], DMatrix::zeros(2, 2)).unwrap();
        let n = predictive_distribution(&s, &[4.0, 1.0], &params).unwrap();
        assert_eq!(n.var, 0.3);
        assert_eq!(n.mean, 6.0);
        let s = SsmState::new(vec![1.0, 2.0], DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 0.7]))).unwrap();
        let n = predictive_distribution(&s, &[0.0, 1.0], &params).unwrap();
        assert!((n.var - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_quantiles() {
        let std = Normal { mean: 0.0, var: 1.0 };
        assert!((gaussian_quantile(&std, 0.975).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!((gaussian_quantile(&std, 1e-6).unwrap() + 4.753424308822899).abs() < 1e-9);
        assert!((gaussian_quantile(&std, 1.0 - 1e-6).unwrap() - 4.753424308822899).abs() < 1e-9);
        let n = Normal { mean: 3.0, var: 4.0 };
        assert_eq!(gaussian_quantile(&n, 0.5).unwrap(), 3.0);
        for q in [0.01, 0.1, 0.3, 0.45] {
            let s = gaussian_quantile(&n, q).unwrap() + gaussian_quantile(&n, 1.0 - q).unwrap();
            assert!((s - 6.0).abs() < 1e-9);
        }
        assert!(gaussian_quantile(&n, 0.0).is_err());
        assert!(gaussian_quantile(&n, 1.0).is_err());
    }

    #[test]
    fn static_setting() {
        let p = static_params(3);
        assert_eq!(p.q, vec![0.0; 4]);
        assert_eq!(p.sigma2, 1.0);
        let s = SsmState::with_identity(vec![0.0; 4]);
        let f = [1.0, 0.5, -0.5, 1.0];
        let y = predictive_distribution(&s, &f, &p).unwrap().mean;
        let mut cur = s.clone();
        for _ in 0..10 {
            let prev = cur.p.clone();
            cur = kalman_step(&cur, &f, y, &p).unwrap();
            assert_eq!(cur.theta, s.theta);
            assert!(cur.p[(0, 0)] <= prev[(0, 0)]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = SsmParams::new(vec![1e-3, 1e-4, 0.0], 0.1).unwrap();
        let mut s = SsmState::with_identity(vec![1.0, 1.0, 0.0]);
        for f in random_effects(30, 2, &mut rng) {
            s = kalman_step(&s, &f, 0.3, &p).unwrap();
        }
        let back = SsmState::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        let pj: SsmParams = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(pj, p);
    }

    #[test]
    fn pit_is_uniform_under_true_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let effects = random_effects(5000, 2, &mut rng);
        let params = SsmParams::new(vec![1e-3, 1e-4, 5e-4], 0.2).unwrap();
        let prior = SsmState::with_identity(vec![1.0, -0.5, 0.2]);
        let (y, _) = simulate(&prior, &params, &effects, &mut rng).unwrap();
        let mut s = prior;
        let mut pit = Vec::new();
        for (f, yt) in effects.iter().zip(&y) {
            pit.push(predictive_distribution(&s, f, &params).unwrap().cdf(*yt));
            s = kalman_step(&s, f, *yt, &params).unwrap();
        }
        // Exact 1% critical value of the one-sample KS statistic at n = 5000.
        assert!(crate::evaluation::ks_uniform(&pit) < 0.0229839);
    }

    #[test]
    fn dynamic_fit_approaches_true_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let effects = random_effects(1500, 2, &mut rng);
        let truth = SsmParams::new(vec![5e-4, 0.0, 2.5e-4], 0.05).unwrap();
        let prior = SsmState::with_identity(vec![1.0, 0.5, 0.0]);
        let (y, _) = simulate(&prior, &truth, &effects, &mut rng).unwrap();
        let fitted = fit_dynamic(&prior, &effects, &y).unwrap();
        fitted.validate().unwrap();
        let ll_fit = log_likelihood(&prior, &fitted, &effects, &y).unwrap();
        let ll_true = log_likelihood(&prior, &truth, &effects, &y).unwrap();
        let ll_static = log_likelihood(&prior, &static_params(2), &effects, &y).unwrap();
        assert!(ll_fit >= ll_static);
        assert!((ll_fit - ll_true).abs() <= 0.01 * ll_true.abs() || ll_fit > ll_true, "{ll_fit} vs {ll_true}");
    }

    #[test]
    fn constant_state_selects_zero_state_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let effects = random_effects(1000, 3, &mut rng);
        let truth = SsmParams::new(vec![0.0; 4], 0.1).unwrap();
        let prior = SsmState::with_identity(vec![1.0, 1.0, 1.0, 0.0]);
        let (y, _) = simulate(&prior, &truth, &effects, &mut rng).unwrap();
        let fitted = fit_dynamic(&prior, &effects, &y).unwrap();
        assert!(fitted.q.iter().all(|&q| q == 0.0), "{:?}", fitted.q);
    }

    #[test]
    fn short_training_falls_back_to_static() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let effects = random_effects(50, 1, &mut rng);
        let y = vec![0.0; 50];
        let p = fit_dynamic(&SsmState::with_identity(vec![1.0, 0.0]), &effects, &y).unwrap();
        assert_eq!(p, static_params(1));
    }
}
