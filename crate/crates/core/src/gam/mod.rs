//! Offline additive mean model: penalized spline effects fitted by least
//! squares with per-effect smoothing chosen by generalized cross-validation.

mod basis;

use std::collections::{BTreeMap, HashMap};

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use basis::{empirical_quantile, make_basis, BasisKind, SplineBasis};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{frobenius, null_space_of};

pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_KNOTS: usize = 10;
/// Minimum usable rows per basis coefficient.
pub const ROWS_PER_COEFFICIENT: usize = 10;

/// One formula term: `covariate` enters through a basis of `kind`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub covariate: String,
    pub kind: BasisKind,
    #[serde(default)]
    pub n_knots: Option<usize>,
}

impl Term {
    pub fn new(covariate: impl Into<String>, kind: BasisKind) -> Self {
        Self { covariate: covariate.into(), kind, n_knots: None }
    }

    pub fn with_knots(mut self, n: usize) -> Self {
        self.n_knots = Some(n);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamOptions {
    pub lambda_grid: Vec<f64>,
    pub sweeps: usize,
    /// Skip the search and use this smoothing weight for every penalized effect.
    pub fixed_lambda: Option<f64>,
}

impl Default for GamOptions {
    fn default() -> Self {
        Self {
            lambda_grid: (-4..=6).map(|i| 10f64.powi(i)).collect(),
            sweeps: 2,
            fixed_lambda: None,
        }
    }
}

/// A fitted additive effect `f(x) = b(x) . coefficients - offset`, centered
/// so that it sums to zero over the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub covariate: String,
    pub basis: SplineBasis,
    pub coefficients: Vec<f64>,
    pub offset: f64,
    pub lambda: f64,
    /// Training mean and standard deviation of the effect values.
    pub mean: f64,
    pub sd: f64,
}

impl Effect {
    pub fn eval(&self, x: f64) -> f64 {
        let b = self.basis.eval(x);
        b.iter().zip(&self.coefficients).map(|(u, v)| u * v).sum::<f64>() - self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamModel {
    pub version: u32,
    pub intercept: f64,
    pub effects: Vec<Effect>,
    /// Residual variance: RSS over residual degrees of freedom.
    pub sigma2: f64,
    pub edf: f64,
    pub gcv: f64,
    pub n_train: usize,
    /// Effects dropped because they were constant on the training set.
    pub dropped: Vec<String>,
}

/// Covariate lookup by name.
pub trait CovariateRecord {
    fn value(&self, name: &str) -> Option<f64>;
}

impl CovariateRecord for BTreeMap<&str, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl CovariateRecord for BTreeMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl CovariateRecord for HashMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

/// A borrowed dataset row, addressed by index.
pub struct DatasetRow<'a>(pub &'a Dataset, pub usize);

impl CovariateRecord for DatasetRow<'_> {
    fn value(&self, name: &str) -> Option<f64> {
        self.0.column(name).map(|c| c[self.1])
    }
}

impl GamModel {
    fn lookup(&self, row: &dyn CovariateRecord, name: &str) -> Result<f64> {
        row.value(name)
            .ok_or_else(|| Error::Data(format!("missing covariate `{name}`")))
    }

    /// Unstandardized effect values `f_j(x_j)`.
    pub fn contributions(&self, row: &dyn CovariateRecord) -> Result<Vec<f64>> {
        self.effects
            .iter()
            .map(|e| Ok(e.eval(self.lookup(row, &e.covariate)?)))
            .collect()
    }

    pub fn predict_mean(&self, row: &dyn CovariateRecord) -> Result<f64> {
        Ok(self.intercept + self.contributions(row)?.iter().sum::<f64>())
    }

    /// Standardized effects followed by a constant 1.
    pub fn effect_vector(&self, row: &dyn CovariateRecord) -> Result<Vec<f64>> {
        let c = self.contributions(row)?;
        Ok(self.standardize(&c))
    }

    pub fn standardize(&self, contributions: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = contributions
            .iter()
            .zip(&self.effects)
            .map(|(f, e)| (f - e.mean) / e.sd)
            .collect();
        v.push(1.0);
        v
    }

    /// State vector under which `theta . effect_vector(x)` equals
    /// `predict_mean(x)` for every `x`.
    pub fn reproducing_state(&self) -> Vec<f64> {
        let mut th: Vec<f64> = self.effects.iter().map(|e| e.sd).collect();
        th.push(self.intercept + self.effects.iter().map(|e| e.mean).sum::<f64>());
        th
    }

    pub fn predict_dataset(&self, d: &Dataset) -> Result<Vec<f64>> {
        (0..d.len()).map(|i| self.predict_mean(&DatasetRow(d, i))).collect()
    }

    pub fn contributions_dataset(&self, d: &Dataset) -> Result<Vec<Vec<f64>>> {
        (0..d.len()).map(|i| self.contributions(&DatasetRow(d, i))).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GamModel = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(Error::Data(format!("unsupported model version {}", m.version)));
        }
        Ok(m)
    }
}

struct Block {
    name: String,
    basis: SplineBasis,
    start: usize,
    len: usize,
    center: DVector<f64>,
    constraint: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

/// Centered design without the intercept column, plus its cross products.
struct Design {
    x: DMatrix<f64>,
    y: DVector<f64>,
    ybar: f64,
    blocks: Vec<Block>,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

struct Solution {
    beta: DVector<f64>,
    rss: f64,
    edf: f64,
    gcv: f64,
}

impl Design {
    fn build(train: &Dataset, formula: &[Term]) -> Result<Self> {
        if formula.is_empty() {
            return Err(Error::Config("empty formula".into()));
        }
        let rows = train.usable_rows();
        let n = rows.len();
        let mut blocks = Vec::with_capacity(formula.len());
        let mut columns: Vec<DMatrix<f64>> = Vec::new();
        let mut start = 0;
        for term in formula {
            let col = train.require_column(&term.covariate)?;
            let x: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
            let basis = make_basis(&term.covariate, term.kind, &x, term.n_knots.unwrap_or(DEFAULT_KNOTS))?;
            let dim = basis.dim();
            let mut raw = DMatrix::zeros(n, dim);
            for (r, &v) in x.iter().enumerate() {
                raw.row_mut(r).copy_from(&basis.eval(v).transpose());
            }
            let center = DVector::from_iterator(dim, raw.column_iter().map(|c| c.sum() / n as f64));
            let constraint = if basis.spans_constant() {
                null_space_of(&center)
            } else {
                DMatrix::identity(dim, dim)
            };
            for mut r in raw.row_iter_mut() {
                r -= center.transpose();
            }
            let xj = raw * &constraint;
            let mut penalty = constraint.transpose() * basis.penalty() * &constraint;
            let pn = frobenius(&penalty);
            if pn > 0.0 {
                penalty *= frobenius(&(xj.transpose() * &xj)) / pn;
            }
            let len = xj.ncols();
            blocks.push(Block {
                name: term.covariate.clone(),
                basis,
                start,
                len,
                center,
                constraint,
                penalty,
            });
            start += len;
            columns.push(xj);
        }
        let p = start;
        if n < ROWS_PER_COEFFICIENT * (p + 1) {
            return Err(Error::Data(format!(
                "{n} usable training rows for {} coefficients (need {})",
                p + 1,
                ROWS_PER_COEFFICIENT * (p + 1)
            )));
        }
        let mut x = DMatrix::zeros(n, p);
        for (b, xj) in blocks.iter().zip(&columns) {
            x.view_mut((0, b.start), (n, b.len)).copy_from(xj);
        }
        let yraw: Vec<f64> = rows.iter().map(|&i| train.target()[i]).collect();
        let ybar = yraw.iter().sum::<f64>() / n as f64;
        let y = DVector::from_iterator(n, yraw.iter().map(|v| v - ybar));
        let gram = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let yty = y.dot(&y);
        let design = Self { x, y, ybar, blocks, gram, xty, yty };
        design.check_rank()?;
        Ok(design)
    }

    /// Adds effects one at a time and names the first one whose columns
    /// are (numerically) dependent on the intercept and earlier effects.
    fn check_rank(&self) -> Result<()> {
        let diag: Vec<f64> = (0..self.gram.nrows()).map(|i| self.gram[(i, i)].max(0.0).sqrt()).collect();
        for b in &self.blocks {
            let end = b.start + b.len;
            if diag[b.start..end].iter().any(|&d| d <= 0.0) {
                return Err(Error::RankDeficient(b.name.clone()));
            }
            let mut g = self.gram.view((0, 0), (end, end)).into_owned();
            for i in 0..end {
                for j in 0..end {
                    g[(i, j)] /= diag[i] * diag[j];
                }
            }
            let min_eig = g.symmetric_eigenvalues().min();
            if min_eig < 1e-10 {
                return Err(Error::RankDeficient(b.name.clone()));
            }
        }
        Ok(())
    }

    fn penalized(&self) -> Vec<usize> {
        (0..self.blocks.len())
            .filter(|&j| self.blocks[j].basis.kind().is_spline())
            .collect()
    }

    fn solve(&self, lambdas: &[f64]) -> Result<Solution> {
        let mut a = self.gram.clone();
        for (b, &lam) in self.blocks.iter().zip(lambdas) {
            if lam > 0.0 && b.basis.kind().is_spline() {
                let mut view = a.view_mut((b.start, b.start), (b.len, b.len));
                view += &b.penalty * lam;
            }
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Numerical("penalized normal equations are singular".into()))?;
        let beta = chol.solve(&self.xty);
        let edf = chol.solve(&self.gram).trace() + 1.0;
        let rss = (self.yty - 2.0 * beta.dot(&self.xty) + beta.dot(&(&self.gram * &beta))).max(0.0);
        let n = self.y.len() as f64;
        let gcv = n * rss / (n - edf).powi(2);
        Ok(Solution { beta, rss, edf, gcv })
    }
}

/// Penalized least-squares fit of `formula` on the usable rows of `train`.
pub fn fit_gam(train: &Dataset, formula: &[Term]) -> Result<GamModel> {
    fit_gam_with(train, formula, &GamOptions::default())
}

pub fn fit_gam_with(train: &Dataset, formula: &[Term], opts: &GamOptions) -> Result<GamModel> {
    let design = Design::build(train, formula)?;
    let lambdas = select_lambdas(&design, opts)?;
    finish(&design, &lambdas)
}

/// GCV score of the fit at the given smoothing weights (one per term).
pub fn gcv_score(train: &Dataset, formula: &[Term], lambdas: &[f64]) -> Result<f64> {
    let design = Design::build(train, formula)?;
    if lambdas.len() != design.blocks.len() {
        return Err(Error::Config("one smoothing weight per term required".into()));
    }
    Ok(design.solve(lambdas)?.gcv)
}

fn select_lambdas(design: &Design, opts: &GamOptions) -> Result<Vec<f64>> {
    let k = design.blocks.len();
    if let Some(l) = opts.fixed_lambda {
        return Ok(vec![l; k]);
    }
    if opts.lambda_grid.is_empty() {
        return Err(Error::Config("empty smoothing grid".into()));
    }
    let mid = opts.lambda_grid[opts.lambda_grid.len() / 2];
    let mut lambdas = vec![mid; k];
    let penalized = design.penalized();
    if penalized.is_empty() {
        return Ok(lambdas);
    }
    let mut best = design.solve(&lambdas)?.gcv;
    for _ in 0..opts.sweeps {
        for &j in &penalized {
            for &cand in &opts.lambda_grid {
                if cand == lambdas[j] {
                    continue;
                }
                let mut trial = lambdas.clone();
                trial[j] = cand;
                let score = design.solve(&trial)?.gcv;
                if score < best {
                    best = score;
                    lambdas = trial;
                }
            }
        }
    }
    Ok(lambdas)
}

fn finish(design: &Design, lambdas: &[f64]) -> Result<GamModel> {
    let sol = design.solve(lambdas)?;
    let n = design.y.len();
    let fitted = &design.x * &sol.beta;
    let rss = (&design.y - &fitted).norm_squared();
    let mut effects = Vec::new();
    let mut dropped = Vec::new();
    for (b, &lam) in design.blocks.iter().zip(lambdas) {
        let gamma = sol.beta.rows(b.start, b.len);
        let w = &b.constraint * gamma;
        let values = design.x.view((0, b.start), (n, b.len)) * gamma;
        let mean = values.sum() / n as f64;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let scale = design.yty.sqrt() / (n as f64).sqrt();
        if !(sd > 1e-12 * scale.max(1e-300)) {
            log::warn!("dropping constant effect `{}`", b.name);
            dropped.push(b.name.clone());
            continue;
        }
        effects.push(Effect {
            covariate: b.name.clone(),
            basis: b.basis.clone(),
            offset: b.center.dot(&w),
            coefficients: w.iter().copied().collect(),
            lambda: lam,
            mean,
            sd,
        });
    }
    let _ = sol.rss;
    Ok(GamModel {
        version: MODEL_VERSION,
        intercept: design.ybar,
        effects,
        sigma2: rss / (n as f64 - sol.edf),
        edf: sol.edf,
        gcv: sol.gcv,
        n_train: n,
        dropped,
    })
}

/// Ordinary least squares on an explicit design (used for warm starts and tests).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefitSchedule {
    Daily,
    Yearly,
}

#[derive(Debug, Clone)]
pub struct Refit {
    /// First timestamp forecast with this model.
    pub from: NaiveDateTime,
    pub model: GamModel,
}

/// Boundaries at which the incremental-offline model is refitted: the first
/// row after `train_end`, then every later day or year start in `stream`.
pub fn refit_boundaries(stream: &Dataset, train_end: NaiveDateTime, schedule: RefitSchedule) -> Vec<usize> {
    let ts = stream.timestamps();
    let first = ts.partition_point(|&t| t <= train_end);
    if first >= ts.len() {
        return Vec::new();
    }
    let period = |t: NaiveDateTime| -> NaiveDate {
        match schedule {
            RefitSchedule::Daily => t.date(),
            RefitSchedule::Yearly => NaiveDate::from_ymd_opt(t.year(), 1, 1).expect("valid"),
        }
    };
    let mut out = vec![first];
    for i in first + 1..ts.len() {
        if period(ts[i]) != period(ts[i - 1]) {
            out.push(i);
        }
    }
    out
}

/// Incremental-offline baseline: at each schedule boundary, refit on every
/// usable row available then, i.e. dated at least `delay + 1` steps before
/// the boundary.
pub fn incremental_refit(
    stream: &Dataset,
    formula: &[Term],
    train_end: NaiveDateTime,
    schedule: RefitSchedule,
    delay: usize,
) -> Result<Vec<Refit>> {
    let ts = stream.timestamps();
    refit_boundaries(stream, train_end, schedule)
        .into_iter()
        .map(|b| {
            let cutoff = ts[b] - stream.step() * (delay as i32 + 1);
            let end = ts.partition_point(|&t| t <= cutoff);
            let model = fit_gam(&stream.slice(0, end), formula)?;
            Ok(Refit { from: ts[b], model })
        })
        .collect()
}
