//! Pinball loss, offline linear quantile regression on mean-model residuals,
//! and online subgradient tracking of the quantile coefficients.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinball loss `(1{y < yq} - q) (yq - y)`.
pub fn pinball(y: f64, yq: f64, q: f64) -> f64 {
    let ind = if y < yq { 1.0 } else { 0.0 };
    (ind - q) * (yq - y)
}

/// 0.025, 0.05, 0.10, 0.15, ..., 0.90, 0.95, 0.975 (21 levels).
pub fn default_levels() -> Vec<f64> {
    let mut v = vec![0.025, 0.05];
    v.extend((2..=18).map(|i| i as f64 * 0.05));
    v.extend([0.95, 0.975]);
    v
}

pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Config("empty quantile level set".into()));
    }
    if let Some(q) = levels.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::Config(format!("quantile level {q} outside (0, 1)")));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("quantile levels must be strictly increasing".into()));
    }
    Ok(())
}

/// Linear quantile correction `beta . z` at level `level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrModel {
    pub level: f64,
    pub beta: Vec<f64>,
}

impl QrModel {
    pub fn zeros(level: f64, dim: usize) -> Self {
        Self { level, beta: vec![0.0; dim] }
    }

    pub fn correction(&self, z: &[f64]) -> f64 {
        self.beta.iter().zip(z).map(|(b, v)| b * v).sum()
    }
}

pub fn predict_quantile(m: &QrModel, z: &[f64], mean: f64) -> f64 {
    mean + m.correction(z)
}

/// One online subgradient step on the pinball loss of residual `r`.
pub fn ogd_step(m: &QrModel, z: &[f64], r: f64, alpha: f64) -> QrModel {
    let fit = m.correction(z);
    let coef = if r < fit {
        1.0 - m.level
    } else if r > fit {
        -m.level
    } else {
        0.0
    };
    let beta = m.beta.iter().zip(z).map(|(b, v)| b - alpha * coef * v).collect();
    QrModel { level: m.level, beta }
}

/// Rearranges quantile values into ascending order.
pub fn sort_quantiles(levels: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if levels.len() != values.len() {
        return Err(Error::Config(format!("{} levels but {} values", levels.len(), values.len())));
    }
    validate_levels(levels)?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Minimum rows per quantile coefficient.
pub const QR_ROWS_PER_COEFFICIENT: usize = 10;
const POLISH_STEPS: usize = 200;

fn objective(r: &[f64], z: &[Vec<f64>], beta: &[f64], q: f64) -> f64 {
    r.iter()
        .zip(z)
        .map(|(ri, zi)| {
            let fit: f64 = zi.iter().zip(beta).map(|(a, b)| a * b).sum();
            pinball(*ri, fit, q)
        })
        .sum()
}

fn check_design(r: &[f64], z: &[Vec<f64>]) -> Result<usize> {
    let n = r.len();
    let d = z.first().map_or(0, Vec::len);
    if z.len() != n || d == 0 || z.iter().any(|row| row.len() != d) {
        return Err(Error::Config("quantile design rows do not match residuals".into()));
    }
    if n < QR_ROWS_PER_COEFFICIENT * d {
        return Err(Error::Data(format!("{n} rows for {d} quantile coefficients (need {})", QR_ROWS_PER_COEFFICIENT * d)));
    }
    if r.iter().chain(z.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in quantile regression input".into()));
    }
    let mut constants = 0;
    for j in 0..d {
        let first = z[0][j];
        if z.iter().all(|row| row[j] == first) {
            constants += 1;
            if first == 0.0 || constants > 1 {
                return Err(Error::DegenerateCovariate(format!("quantile covariate {j}")));
            }
        }
    }
    Ok(d)
}

/// Minimizes the total pinball loss of `r - beta . z` over `beta`.
///
/// Iteratively reweighted least squares on a smoothed absolute value with a
/// geometrically shrinking smoothing width, then an exact solve on the best
/// candidate basis (the optimum of this linear program interpolates `d` rows),
/// then deterministic subgradient polishing.
pub fn fit_offline_qr(r: &[f64], z: &[Vec<f64>], q: f64) -> Result<QrModel> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("quantile level {q} outside (0, 1)")));
    }
    let d = check_design(r, z)?;
    let n = r.len();
    let zm = DMatrix::from_fn(n, d, |i, j| z[i][j]);
    let rv = DVector::from_column_slice(r);
    let zsum = zm.row_sum().transpose();
    let scale = {
        let m = r.iter().sum::<f64>() / n as f64;
        let s = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        if s > 0.0 { s } else { 1.0 }
    };

    let mut beta = DVector::zeros(d);
    let mut eps = scale;
    let mut best_obj = f64::INFINITY;
    let mut best_beta = beta.clone();
    for _ in 0..400 {
        let u = &rv - &zm * &beta;
        let w = DVector::from_iterator(n, u.iter().map(|v| 0.5 / v.abs().max(eps)));
        let mut zw = zm.clone();
        for (mut row, wi) in zw.row_iter_mut().zip(w.iter()) {
            row *= *wi;
        }
        let a = zm.transpose() * &zw;
        let b = &zsum * (q - 0.5) + zw.transpose() * &rv;
        let Some(chol) = a.cholesky() else { break };
        let next = chol.solve(&b);
        let obj = objective(r, z, next.as_slice(), q);
        let moved = (&next - &beta).amax();
        beta = next;
        if obj < best_obj {
            best_obj = obj;
            best_beta = beta.clone();
        }
        if moved < 1e-10 * scale.max(beta.amax()) {
            if eps <= 1e-12 * scale {
                break;
            }
            eps *= 0.1;
        }
    }

    if let Some((vb, vo)) = vertex_snap(&zm, &rv, &best_beta, q, r, z) {
        if vo <= best_obj + 1e-10 * best_obj.abs() {
            best_obj = vo;
            best_beta = vb;
        }
    }

    // Subgradient polish with a decaying step; keep the best iterate.
    let mut m = QrModel { level: q, beta: best_beta.iter().copied().collect() };
    let mut best = m.clone();
    let step0 = 1e-3 * scale / (n as f64);
    for k in 0..POLISH_STEPS {
        let mut g = vec![0.0; d];
        for (ri, zi) in r.iter().zip(z) {
            let fit = m.correction(zi);
            let c = if *ri < fit { 1.0 - q } else if *ri > fit { -q } else { 0.0 };
            g.iter_mut().zip(zi).for_each(|(gj, v)| *gj += c * v);
        }
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn == 0.0 {
            break;
        }
        let step = step0 / (1.0 + k as f64).sqrt() / gn * n as f64;
        m.beta.iter_mut().zip(&g).for_each(|(b, gj)| *b -= step * gj);
        let obj = objective(r, z, &m.beta, q);
        // Ties within rounding keep the exact vertex.
        if obj < best_obj - 1e-10 * best_obj.abs() {
            best_obj = obj;
            best = m.clone();
        }
    }
    if best.beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("quantile regression diverged".into()));
    }
    Ok(best)
}

/// Solves exactly through the `d` rows with the smallest absolute residual
/// (skipping rows that would make the system singular), then tries single
/// row exchanges while they lower the objective.
fn vertex_snap(
    zm: &DMatrix<f64>,
    rv: &DVector<f64>,
    beta: &DVector<f64>,
    q: f64,
    r: &[f64],
    z: &[Vec<f64>],
) -> Option<(DVector<f64>, f64)> {
    let n = zm.nrows();
    let d = zm.ncols();
    let u = rv - zm * beta;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()).then(a.cmp(&b)));
    let mut basis: Vec<usize> = Vec::with_capacity(d);
    for &i in &order {
        let mut trial = basis.clone();
        trial.push(i);
        let sub = DMatrix::from_fn(trial.len(), d, |a, j| zm[(trial[a], j)]);
        if sub.rank(1e-9 * sub.amax().max(1.0)) == trial.len() {
            basis = trial;
        }
        if basis.len() == d {
            break;
        }
    }
    if basis.len() < d {
        return None;
    }
    let solve = |rows: &[usize]| -> Option<DVector<f64>> {
        let a = DMatrix::from_fn(d, d, |a, j| zm[(rows[a], j)]);
        let b = DVector::from_fn(d, |a, _| rv[rows[a]]);
        a.lu().solve(&b)
    };
    let mut vb = solve(&basis)?;
    let mut vo = objective(r, z, vb.as_slice(), q);
    // Exchange pass: candidates are the rows closest to the current fit.
    for _ in 0..(4 * d) {
        let res = rv - zm * &vb;
        let mut cand: Vec<usize> = (0..n).filter(|i| !basis.contains(i)).collect();
        cand.sort_by(|&a, &b| res[a].abs().total_cmp(&res[b].abs()));
        cand.truncate(2 * d + 2);
        let mut improved = false;
        'outer: for &c in &cand {
            for k in 0..d {
                let mut rows = basis.clone();
                rows[k] = c;
                if let Some(b2) = solve(&rows) {
                    let o = objective(r, z, b2.as_slice(), q);
                    if o < vo - 1e-15 * vo.abs() {
                        basis = rows;
                        vb = b2;
                        vo = o;
                        improved = true;
                        break 'outer;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    Some((vb, vo))
}

/// Standardized quantile covariates `z`: continuous inputs scaled with
/// training moments, one-hot codes for categorical inputs (first level
/// dropped), and a trailing constant 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileDesign {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Non-reference levels per categorical input.
    pub levels: Vec<Vec<i64>>,
}

impl QuantileDesign {
    pub fn fit(continuous: &[Vec<f64>], categorical: &[Vec<f64>]) -> Result<Self> {
        let n = continuous.len();
        if n == 0 || categorical.len() != n {
            return Err(Error::Data("quantile design needs aligned, non-empty inputs".into()));
        }
        let dc = continuous[0].len();
        let mut means = Vec::with_capacity(dc);
        let mut sds = Vec::with_capacity(dc);
        for j in 0..dc {
            let col: Vec<f64> = continuous.iter().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::DegenerateCovariate(format!("quantile input {j}")));
            }
            means.push(m);
            sds.push(s);
        }
        let dk = categorical[0].len();
        let levels = (0..dk)
            .map(|j| {
                let mut seen: BTreeMap<i64, ()> = BTreeMap::new();
                for r in categorical {
                    seen.insert(r[j].round() as i64, ());
                }
                seen.into_keys().skip(1).collect()
            })
            .collect();
        Ok(Self { means, sds, levels })
    }

    pub fn dim(&self) -> usize {
        self.means.len() + self.levels.iter().map(Vec::len).sum::<usize>() + 1
    }

    pub fn row(&self, continuous: &[f64], categorical: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = continuous
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        for (levels, v) in self.levels.iter().zip(categorical) {
            let code = v.round() as i64;
            z.extend(levels.iter().map(|&l| if l == code { 1.0 } else { 0.0 }));
        }
        z.push(1.0);
        z
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::evaluation::rps;

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball(1.0, 0.0, 0.9), 0.9);
        assert_eq!(pinball(0.0, 2.0, 0.5), 1.0);
        assert_eq!(pinball(3.3, 3.3, 0.1), 0.0);
        assert!(pinball(0.0, 1e-9, 0.5) > 0.0);
    }

    proptest! {
        #[test]
        fn pinball_is_convex_and_nonnegative(y in -10.0f64..10.0, q in 0.01f64..0.99, a in -10.0f64..10.0, b in -10.0f64..10.0, t in 0.0f64..1.0) {
            let m = t * a + (1.0 - t) * b;
            let lhs = pinball(y, m, q);
            let rhs = t * pinball(y, a, q) + (1.0 - t) * pinball(y, b, q);
            prop_assert!(lhs <= rhs + 1e-12);
            prop_assert!(lhs >= 0.0);
        }

        #[test]
        fn sorting_never_increases_total_pinball(values in prop::collection::vec(-5.0f64..5.0, 5), y in -5.0f64..5.0) {
            let levels = [0.1, 0.3, 0.5, 0.7, 0.9];
            let total = |v: &[f64]| levels.iter().zip(v).map(|(q, x)| pinball(y, *x, *q)).sum::<f64>();
            let sorted = sort_quantiles(&levels, &values).unwrap();
            prop_assert!(total(&sorted) <= total(&values) + 1e-12);
        }

        #[test]
        fn sorting_never_increases_rps_on_even_levels(values in prop::collection::vec(-5.0f64..5.0, 5), y in -5.0f64..5.0) {
            // Levels i/6 give every level the same weight.
            let levels: Vec<f64> = (1..=5).map(|i| i as f64 / 6.0).collect();
            let sorted = sort_quantiles(&levels, &values).unwrap();
            prop_assert!(rps(&levels, &sorted, y).unwrap() <= rps(&levels, &values, y).unwrap() + 1e-12);
        }

        #[test]
        fn offline_coverage_within_basis_slack(seed in 0u64..1000, qi in 0usize..3) {
            let q = [0.1, 0.5, 0.9][qi];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 200;
            let z: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), 1.0]).collect();
            let r: Vec<f64> = z.iter().map(|zi| 0.5 * zi[0] + (1.0 + zi[0].abs()) * rng.sample::<f64, _>(StandardNormal)).collect();
            let m = fit_offline_qr(&r, &z, q).unwrap();
            let below = r.iter().zip(&z).filter(|(ri, zi)| **ri < m.correction(zi)).count() as f64 / n as f64;
            prop_assert!((below - q).abs() <= 2.0 / n as f64 + 1e-12, "below {}", below);
        }
    }

    #[test]
    fn level_set() {
        let l = default_levels();
        assert_eq!(l.len(), 21);
        assert_eq!(l[0], 0.025);
        assert_eq!(l[20], 0.975);
        assert!((l[10] - 0.5).abs() < 1e-15);
        validate_levels(&l).unwrap();
        assert!(validate_levels(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn constant_design_gives_empirical_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(20..200);
            let r: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let z = vec![vec![1.0]; n];
            for q in [0.1, 0.5, 0.9] {
                let b = fit_offline_qr(&r, &z, q).unwrap().beta[0];
                // Optimality: at most nq points strictly below, at least nq at or below.
                let lt = r.iter().filter(|v| **v < b).count() as f64;
                let le = r.iter().filter(|v| **v <= b).count() as f64;
                assert!(lt <= n as f64 * q + 1e-9 && le >= n as f64 * q - 1e-9, "q {q}: {lt} {le} of {n}");
            }
        }
    }

    #[test]
    fn matches_vertex_enumeration() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = 80;
            let z: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..3.0), 1.0]).collect();
            let r: Vec<f64> = z.iter().map(|zi| 1.0 - zi[0] + rng.sample::<f64, _>(StandardNormal) * (0.2 + zi[0])).collect();
            for q in [0.2, 0.5, 0.8] {
                let mut brute = f64::INFINITY;
                for i in 0..n {
                    for j in i + 1..n {
                        let det = z[i][0] - z[j][0];
                        if det.abs() < 1e-12 {
                            continue;
                        }
                        let slope = (r[i] - r[j]) / det;
                        let icpt = r[i] - slope * z[i][0];
                        brute = brute.min(objective(&r, &z, &[slope, icpt], q));
                    }
                }
                let got = fit_offline_qr(&r, &z, q).unwrap();
                let obj = objective(&r, &z, &got.beta, q);
                assert!(obj <= brute + 1e-6 * brute, "seed {seed} q {q}: {obj} vs {brute}");
            }
        }
    }

    #[test]
    fn heteroscedastic_line_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 500;
        let z: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0), 1.0]).collect();
        let r: Vec<f64> = z.iter().map(|zi| 2.0 + 3.0 * zi[0] + (0.5 + zi[0]) * rng.sample::<f64, _>(StandardNormal)).collect();
        let q = 0.8;
        let m = fit_offline_qr(&r, &z, q).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for a in 0..=200 {
            for b in 0..=200 {
                let (slope, icpt) = (a as f64 * 0.05, b as f64 * 0.025);
                let o = objective(&r, &z, &[slope, icpt], q);
                if o < best.0 {
                    best = (o, slope, icpt);
                }
            }
        }
        let gap = z.iter().map(|zi| (m.correction(zi) - (best.1 * zi[0] + best.2)).abs()).sum::<f64>() / n as f64;
        // Noise scale is at least 0.5.
        assert!(gap < 0.05 * 0.5, "gap {gap}");
        assert!(objective(&r, &z, &m.beta, q) <= best.0);
    }

    #[test]
    fn degenerate_and_short_designs() {
        let r: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let z: Vec<Vec<f64>> = (0..100).map(|_| vec![2.0, 1.0]).collect();
        assert!(matches!(fit_offline_qr(&r, &z, 0.5), Err(Error::DegenerateCovariate(_))));
        let z: Vec<Vec<f64>> = (0..100).map(|i| vec![0.0, i as f64]).collect();
        assert!(matches!(fit_offline_qr(&r, &z, 0.5), Err(Error::DegenerateCovariate(_))));
        let z = vec![vec![1.0]; 5];
        assert!(matches!(fit_offline_qr(&r[..5], &z, 0.5), Err(Error::Data(_))));
    }

    #[test]
    fn ogd_examples() {
        let m = QrModel::zeros(0.5, 1);
        assert_eq!(ogd_step(&m, &[1.0], 1.0, 0.1).beta, vec![0.05]);
        assert_eq!(ogd_step(&m, &[1.0], -1.0, 0.1).beta, vec![-0.05]);
        let m = QrModel { level: 0.3, beta: vec![0.5, 2.0] };
        let r = m.correction(&[1.0, 0.25]);
        assert_eq!(ogd_step(&m, &[1.0, 0.25], r, 0.7), m);
    }

    #[test]
    fn prediction_is_additive() {
        let m = QrModel::zeros(0.9, 3);
        assert_eq!(predict_quantile(&m, &[1.0, 2.0, 1.0], 4.0), 4.0);
        let m = QrModel { level: 0.9, beta: vec![0.0, 0.0, 1.5] };
        assert_eq!(predict_quantile(&m, &[7.0, -2.0, 1.0], 4.0), 5.5);
        let m = QrModel { level: 0.9, beta: vec![0.3, -0.2, 1.5] };
        let z = [0.4, 1.1, 1.0];
        assert!((predict_quantile(&m, &z, 4.25) - predict_quantile(&m, &z, 4.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sorting_can_raise_rps_with_unequal_weights() {
        // The first level carries weight 0.3 against 0.4 for the second, so
        // handing it the lower value is worse when y lies below both.
        let levels = [0.1, 0.3, 0.5, 0.7, 0.9];
        let values = [0.0, -2.0, 0.0, 0.0, 0.0];
        let sorted = sort_quantiles(&levels, &values).unwrap();
        assert!(rps(&levels, &sorted, -3.5).unwrap() > rps(&levels, &values, -3.5).unwrap());
    }

    #[test]
    fn sorting_examples() {
        let l = [0.1, 0.5, 0.9];
        assert_eq!(sort_quantiles(&l, &[3.0, 2.0, 5.0]).unwrap(), vec![2.0, 3.0, 5.0]);
        assert_eq!(sort_quantiles(&l, &[1.0, 2.0, 5.0]).unwrap(), vec![1.0, 2.0, 5.0]);
        assert!(sort_quantiles(&l, &[1.0]).is_err());
    }

    fn regret(seed: u64, t: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = 0.7;
        let z: Vec<Vec<f64>> = (0..t).map(|_| vec![rng.random_range(-1.0..1.0), 1.0]).collect();
        let r: Vec<f64> = z.iter().map(|zi| 0.5 * zi[0] + rng.sample::<f64, _>(StandardNormal)).collect();
        let alpha = 1.0 / (t as f64).sqrt();
        let mut m = QrModel::zeros(q, 2);
        let mut online = 0.0;
        for (zi, ri) in z.iter().zip(&r) {
            online += pinball(*ri, m.correction(zi), q);
            m = ogd_step(&m, zi, *ri, alpha);
        }
        let best = fit_offline_qr(&r, &z, q).unwrap();
        online - objective(&r, &z, &best.beta, q)
    }

    #[test]
    fn ogd_regret_is_sublinear() {
        for seed in 0..3 {
            let small = regret(seed, 1000);
            let large = regret(seed, 4000);
            assert!(small > 0.0);
            assert!(large / small < 4.0, "seed {seed}: {large} / {small}");
        }
    }

    #[test]
    fn ogd_tracks_a_median_jump() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let alpha = 0.01;
        let q: f64 = 0.5;
        let mut m = QrModel::zeros(q, 1);
        for _ in 0..2000 {
            m = ogd_step(&m, &[1.0], rng.sample::<f64, _>(StandardNormal) * 0.01, alpha);
        }
        let horizon = (2.0 / (alpha * q.min(1.0 - q))).ceil() as usize;
        for _ in 0..horizon {
            m = ogd_step(&m, &[1.0], 1.0 + rng.sample::<f64, _>(StandardNormal) * 0.01, alpha);
        }
        assert!((m.beta[0] - 1.0).abs() < 5.0 * alpha, "{}", m.beta[0]);
    }

    #[test]
    fn design_standardizes_and_encodes() {
        let cont: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let cat: Vec<Vec<f64>> = (0..10).map(|i| vec![(i % 3) as f64]).collect();
        let d = QuantileDesign::fit(&cont, &cat).unwrap();
        assert_eq!(d.dim(), 2 + 2 + 1);
        let rows: Vec<Vec<f64>> = cont.iter().zip(&cat).map(|(c, k)| d.row(c, k)).collect();
        for j in 0..2 {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / 10.0;
            let v = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / 10.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
        assert_eq!(&rows[0][2..], &[0.0, 0.0, 1.0]);
        assert_eq!(&rows[2][2..], &[0.0, 1.0, 1.0]);
        let degenerate: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0]).collect();
        assert!(QuantileDesign::fit(&degenerate, &cat).is_err());
        let back: QuantileDesign = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
