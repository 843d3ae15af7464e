use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    CubicRegression,
    CyclicCubic,
    Linear,
    Categorical,
}

impl BasisKind {
    pub fn is_spline(self) -> bool {
        matches!(self, BasisKind::CubicRegression | BasisKind::CyclicCubic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BasisRepr {
    kind: BasisKind,
    knots: Vec<f64>,
    range: (f64, f64),
}

/// One-dimensional basis for an additive effect.
///
/// Spline kinds are parameterized by the function values at the knots
/// (natural cubic for `CubicRegression`, periodic over `[first, last]` knot
/// for `CyclicCubic`). `Categorical` stores its level codes in `knots`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BasisRepr", into = "BasisRepr")]
pub struct SplineBasis {
    kind: BasisKind,
    knots: Vec<f64>,
    range: (f64, f64),
    /// Maps knot values to second derivatives at the knots.
    second_deriv: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

impl From<BasisRepr> for SplineBasis {
    fn from(r: BasisRepr) -> Self {
        SplineBasis::from_knots(r.kind, r.knots, r.range)
    }
}

impl From<SplineBasis> for BasisRepr {
    fn from(b: SplineBasis) -> Self {
        BasisRepr { kind: b.kind, knots: b.knots, range: b.range }
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Builds a basis for covariate `name` from its training values. Spline
/// knots sit at evenly spaced empirical quantiles (ties merged).
pub fn make_basis(name: &str, kind: BasisKind, x_train: &[f64], n_knots: usize) -> Result<SplineBasis> {
    if x_train.is_empty() {
        return Err(Error::Data(format!("no training values for `{name}`")));
    }
    let mut sorted = x_train.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if !(hi > lo) {
        return Err(Error::DegenerateCovariate(name.to_string()));
    }
    let knots = match kind {
        BasisKind::Linear => Vec::new(),
        BasisKind::Categorical => {
            let mut levels: Vec<f64> = sorted.iter().map(|v| v.round()).collect();
            levels.dedup();
            levels
        }
        BasisKind::CubicRegression | BasisKind::CyclicCubic => {
            if n_knots < 3 {
                return Err(Error::Config(format!("`{name}`: spline needs at least 3 knots")));
            }
            let mut k: Vec<f64> = (0..n_knots)
                .map(|i| empirical_quantile(&sorted, i as f64 / (n_knots - 1) as f64))
                .collect();
            k.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (hi - lo));
            if k.len() < 3 {
                return Err(Error::DegenerateCovariate(name.to_string()));
            }
            k
        }
    };
    Ok(SplineBasis::from_knots(kind, knots, (lo, hi)))
}

impl SplineBasis {
    fn from_knots(kind: BasisKind, knots: Vec<f64>, range: (f64, f64)) -> Self {
        let (second_deriv, penalty) = match kind {
            BasisKind::CubicRegression => natural_cubic_matrices(&knots),
            BasisKind::CyclicCubic => cyclic_cubic_matrices(&knots),
            BasisKind::Linear => (DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)),
            BasisKind::Categorical => {
                let k = knots.len();
                (DMatrix::zeros(k, k), DMatrix::zeros(k, k))
            }
        };
        Self { kind, knots, range, second_deriv, penalty }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            BasisKind::Linear => 1,
            BasisKind::CubicRegression | BasisKind::Categorical => self.knots.len(),
            BasisKind::CyclicCubic => self.knots.len() - 1,
        }
    }

    /// Whether constant functions lie in the span of the basis.
    pub fn spans_constant(&self) -> bool {
        !matches!(self.kind, BasisKind::Linear)
    }

    /// Integrated squared second derivative as a quadratic form in the coefficients.
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// Basis functions evaluated at `x`.
    pub fn eval(&self, x: f64) -> DVector<f64> {
        match self.kind {
            BasisKind::Linear => DVector::from_element(1, x),
            BasisKind::Categorical => {
                let code = x.round();
                DVector::from_iterator(
                    self.knots.len(),
                    self.knots.iter().map(|&l| if l == code { 1.0 } else { 0.0 }),
                )
            }
            BasisKind::CubicRegression => self.eval_natural(x),
            BasisKind::CyclicCubic => self.eval_cyclic(x),
        }
    }

    fn eval_natural(&self, x: f64) -> DVector<f64> {
        let k = self.knots.len();
        let f = &self.second_deriv;
        let mut out = DVector::zeros(k);
        let kn = &self.knots;
        if x < kn[0] || x > kn[k - 1] {
            // Linear continuation from the boundary value and slope.
            let (j, at, left) = if x < kn[0] { (0, kn[0], true) } else { (k - 2, kn[k - 1], false) };
            let h = kn[j + 1] - kn[j];
            let (anchor, dlo, dhi) = if left {
                (j, -2.0 * h / 6.0, -h / 6.0)
            } else {
                (j + 1, h / 6.0, 2.0 * h / 6.0)
            };
            let dx = x - at;
            out[anchor] += 1.0;
            out[j] -= dx / h;
            out[j + 1] += dx / h;
            for c in 0..k {
                out[c] += dx * (dlo * f[(j, c)] + dhi * f[(j + 1, c)]);
            }
            return out;
        }
        let j = (kn.partition_point(|&v| v <= x).max(1) - 1).min(k - 2);
        self.fill_interval(&mut out, x, j, j + 1, kn[j], kn[j + 1]);
        out
    }

    fn eval_cyclic(&self, x: f64) -> DVector<f64> {
        let kn = &self.knots;
        let m = kn.len() - 1;
        let period = kn[m] - kn[0];
        let xw = kn[0] + (x - kn[0]).rem_euclid(period);
        let j = (kn.partition_point(|&v| v <= xw).max(1) - 1).min(m - 1);
        let mut out = DVector::zeros(m);
        self.fill_interval(&mut out, xw, j, (j + 1) % m, kn[j], kn[j + 1]);
        out
    }

    /// Cubic on `[lo, hi]` from knot values `a`, `b` and their second derivatives.
    fn fill_interval(&self, out: &mut DVector<f64>, x: f64, a: usize, b: usize, lo: f64, hi: f64) {
        let h = hi - lo;
        let (l, r) = (hi - x, x - lo);
        let am = l / h;
        let ap = r / h;
        let cm = (l * l * l / h - h * l) / 6.0;
        let cp = (r * r * r / h - h * r) / 6.0;
        let f = &self.second_deriv;
        out[a] += am;
        out[b] += ap;
        for c in 0..out.len() {
            out[c] += cm * f[(a, c)] + cp * f[(b, c)];
        }
    }
}

/// Second-derivative map `F` (k x k, zero first/last rows) and penalty
/// `D' B^-1 D` for the natural cubic spline through the knots.
fn natural_cubic_matrices(kn: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = kn.len();
    let h: Vec<f64> = kn.windows(2).map(|w| w[1] - w[0]).collect();
    let m = k - 2;
    let mut b = DMatrix::zeros(m, m);
    let mut d = DMatrix::zeros(m, k);
    for r in 0..m {
        let i = r + 1;
        b[(r, r)] = (h[i - 1] + h[i]) / 3.0;
        if r + 1 < m {
            b[(r, r + 1)] = h[i] / 6.0;
            b[(r + 1, r)] = h[i] / 6.0;
        }
        d[(r, i - 1)] = 1.0 / h[i - 1];
        d[(r, i)] = -1.0 / h[i - 1] - 1.0 / h[i];
        d[(r, i + 1)] = 1.0 / h[i];
    }
    let binv_d = b.cholesky().expect("tridiagonal knot matrix is SPD").solve(&d);
    let mut f = DMatrix::zeros(k, k);
    f.view_mut((1, 0), (m, k)).copy_from(&binv_d);
    let s = d.transpose() * &binv_d;
    (f, s)
}

fn cyclic_cubic_matrices(kn: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = kn.len() - 1;
    let h: Vec<f64> = kn.windows(2).map(|w| w[1] - w[0]).collect();
    let mut b = DMatrix::zeros(m, m);
    let mut d = DMatrix::zeros(m, m);
    for i in 0..m {
        let prev = (i + m - 1) % m;
        let next = (i + 1) % m;
        let (hp, hn) = (h[prev], h[i]);
        b[(i, prev)] += hp / 6.0;
        b[(i, i)] += (hp + hn) / 3.0;
        b[(i, next)] += hn / 6.0;
        d[(i, prev)] += 1.0 / hp;
        d[(i, i)] += -1.0 / hp - 1.0 / hn;
        d[(i, next)] += 1.0 / hn;
    }
    let f = b.cholesky().expect("cyclic knot matrix is SPD").solve(&d);
    let s = d.transpose() * &f;
    (f, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn linear_basis_is_identity() {
        let b = make_basis("x", BasisKind::Linear, &[1.0, 2.0, 3.0], 10).unwrap();
        assert_eq!(b.dim(), 1);
        assert_eq!(b.eval(7.5)[0], 7.5);
    }

    #[test]
    fn quantile_knots_on_uniform_grid() {
        // Oracle: order statistics of 0..=100 at 0, 25, 50, 75, 100 percent.
        let x: Vec<f64> = (0..=100).rev().map(|i| i as f64).collect();
        let b = make_basis("x", BasisKind::CubicRegression, &x, 5).unwrap();
        assert_eq!(b.knots(), &[0.0, 25.0, 50.0, 75.0, 100.0]);
    }

    #[test]
    fn cyclic_is_periodic() {
        let b = make_basis("toy", BasisKind::CyclicCubic, &uniform(365), 8).unwrap();
        let (a, z) = (b.eval(0.0), b.eval(1.0));
        for i in 0..b.dim() {
            assert!((a[i] - z[i]).abs() < 1e-12);
        }
        // Continuity across the seam.
        let (l, r) = (b.eval(1.0 - 1e-9), b.eval(1e-9));
        for i in 0..b.dim() {
            assert!((l[i] - r[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn natural_basis_interpolates_knot_values() {
        let b = make_basis("x", BasisKind::CubicRegression, &uniform(50), 6).unwrap();
        for (i, &k) in b.knots().iter().enumerate() {
            let v = b.eval(k);
            for c in 0..b.dim() {
                let expect = if c == i { 1.0 } else { 0.0 };
                assert!((v[c] - expect).abs() < 1e-12, "knot {i} col {c}: {}", v[c]);
            }
        }
    }

    #[test]
    fn basis_partitions_unity_and_reproduces_lines() {
        let b = make_basis("x", BasisKind::CubicRegression, &uniform(50), 7).unwrap();
        let coef = DVector::from_iterator(b.dim(), b.knots().iter().map(|k| 3.0 * k - 1.0));
        for &x in &[-0.5, 0.0, 0.13, 0.5, 0.99, 1.0, 1.7] {
            let v = b.eval(x);
            assert!((v.sum() - 1.0).abs() < 1e-12);
            assert!((v.dot(&coef) - (3.0 * x - 1.0)).abs() < 1e-12);
        }
        // Lines carry no curvature penalty.
        assert!(coef.dot(&(b.penalty() * &coef)).abs() < 1e-9);
    }

    #[test]
    fn extrapolation_is_linear_and_c1() {
        let b = make_basis("x", BasisKind::CubicRegression, &uniform(50), 6).unwrap();
        let coef = DVector::from_iterator(b.dim(), [0.3, -1.0, 2.0, 0.5, -0.7, 1.1]);
        let f = |x: f64| b.eval(x).dot(&coef);
        for &(edge, dir) in &[(0.0, -1.0), (1.0, 1.0)] {
            let h = 1e-5;
            let inside = (f(edge) - f(edge - dir * h)) / h * dir;
            let outside = (f(edge + dir * h) - f(edge)) / h * dir;
            assert!((inside - outside).abs() < 1e-3, "slope mismatch at {edge}");
            // Second differences vanish beyond the range.
            let o1 = f(edge + dir * 0.5);
            let o2 = f(edge + dir * 1.0);
            let o3 = f(edge + dir * 1.5);
            assert!((o1 - 2.0 * o2 + o3).abs() < 1e-10);
        }
    }

    #[test]
    fn penalty_matches_quadrature_of_second_derivative() {
        let b = make_basis("x", BasisKind::CubicRegression, &uniform(40), 6).unwrap();
        let coef = DVector::from_iterator(b.dim(), [1.0, -0.5, 0.25, 2.0, -1.0, 0.0]);
        let f = |x: f64| b.eval(x).dot(&coef);
        // Central second differences, midpoint rule.
        let (n, h) = (20_000, 1e-4);
        let mut integral = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) / n as f64;
            let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
            integral += d2 * d2 / n as f64;
        }
        let quad = coef.dot(&(b.penalty() * &coef));
        assert!((integral - quad).abs() / quad < 1e-3, "{integral} vs {quad}");
    }

    #[test]
    fn constant_covariate_is_degenerate() {
        let r = make_basis("temp", BasisKind::CubicRegression, &[2.0; 10], 5);
        assert!(matches!(r, Err(Error::DegenerateCovariate(n)) if n == "temp"));
    }

    #[test]
    fn serde_rebuilds_derived_matrices() {
        let b = make_basis("x", BasisKind::CyclicCubic, &uniform(30), 5).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        let back: SplineBasis = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }
}
