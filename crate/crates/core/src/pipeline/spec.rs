use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::{default_alphas, EtaRule};
use crate::dataset::FeatureSpec;
use crate::error::{Error, Result};
use crate::gam::{RefitSchedule, Term};
use crate::kalman::SsmParams;
use crate::quantile::{default_levels, validate_levels};

/// How the mean forecast is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanMode {
    /// GAM fitted once on the training period.
    Offline,
    /// GAM refitted at every schedule boundary on all data available then.
    Incremental(RefitSchedule),
    /// Kalman filter over the frozen GAM effects with `Q = 0`, `sigma^2 = 1`.
    KalmanStatic,
    /// Kalman filter with variances chosen by maximum likelihood on training.
    KalmanDynamic,
    /// The target `lag` steps back.
    Persistence(usize),
    /// Oracle baseline: the mean of the target over each test window. It
    /// reads the future by construction and is exempt from the audit.
    MeanAnchor,
}

impl MeanMode {
    pub fn is_kalman(&self) -> bool {
        matches!(self, MeanMode::KalmanStatic | MeanMode::KalmanDynamic)
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, MeanMode::MeanAnchor)
    }

    fn needs_gam(&self) -> bool {
        !matches!(self, MeanMode::Persistence(_) | MeanMode::MeanAnchor)
    }
}

impl fmt::Display for MeanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanMode::Offline => write!(f, "offline"),
            MeanMode::Incremental(RefitSchedule::Daily) => write!(f, "incremental-daily"),
            MeanMode::Incremental(RefitSchedule::Yearly) => write!(f, "incremental-yearly"),
            MeanMode::KalmanStatic => write!(f, "kalman-static"),
            MeanMode::KalmanDynamic => write!(f, "kalman-dynamic"),
            MeanMode::Persistence(l) => write!(f, "persistence-{l}"),
            MeanMode::MeanAnchor => write!(f, "mean-anchor"),
        }
    }
}

impl FromStr for MeanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "offline" => MeanMode::Offline,
            "incremental-daily" => MeanMode::Incremental(RefitSchedule::Daily),
            "incremental-yearly" => MeanMode::Incremental(RefitSchedule::Yearly),
            "kalman-static" => MeanMode::KalmanStatic,
            "kalman-dynamic" => MeanMode::KalmanDynamic,
            "mean-anchor" => MeanMode::MeanAnchor,
            _ => match s.strip_prefix("persistence-").map(str::parse::<usize>) {
                Some(Ok(lag)) if lag > 0 => MeanMode::Persistence(lag),
                _ => return Err(Error::Config(format!("unknown mean mode `{s}`"))),
            },
        })
    }
}

/// How quantile forecasts are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantileMode {
    None,
    /// Quantiles of the Kalman predictive Gaussian.
    Gaussian,
    /// Quantile regressions on training residuals, frozen.
    OfflineQr,
    /// Offline QR adapted online with a single step size.
    Ogd(f64),
    /// Offline QR adapted by a pool of step sizes mixed with BOA.
    OgdBoa,
    /// Quantile regressions refitted every day on all residuals available.
    IncrementalQr,
}

impl fmt::Display for QuantileMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantileMode::None => write!(f, "none"),
            QuantileMode::Gaussian => write!(f, "gaussian"),
            QuantileMode::OfflineQr => write!(f, "offline-qr"),
            QuantileMode::Ogd(a) => write!(f, "ogd-{a:e}"),
            QuantileMode::OgdBoa => write!(f, "ogd-boa"),
            QuantileMode::IncrementalQr => write!(f, "incremental-qr"),
        }
    }
}

impl FromStr for QuantileMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => QuantileMode::None,
            "gaussian" => QuantileMode::Gaussian,
            "offline-qr" => QuantileMode::OfflineQr,
            "ogd-boa" => QuantileMode::OgdBoa,
            "incremental-qr" => QuantileMode::IncrementalQr,
            _ => match s.strip_prefix("ogd-").map(str::parse::<f64>) {
                Some(Ok(a)) if a > 0.0 && a.is_finite() => QuantileMode::Ogd(a),
                _ => return Err(Error::Config(format!("unknown quantile mode `{s}`"))),
            },
        })
    }
}

/// Inputs of the quantile covariate vector `z`, in this order: the mean
/// forecast, its square, selected GAM effect contributions, then one-hot
/// codes of categorical columns. A constant is always appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantileInputs {
    pub mean: bool,
    pub mean_squared: bool,
    /// Covariates whose GAM effect contribution enters `z`.
    pub effects: Vec<String>,
    /// Categorical dataset columns.
    pub categorical: Vec<String>,
}

impl Default for QuantileInputs {
    fn default() -> Self {
        Self { mean: true, mean_squared: true, effects: Vec::new(), categorical: Vec::new() }
    }
}

fn default_true() -> bool {
    true
}

/// A full forecasting strategy: one mean mode, one quantile mode and the
/// settings they share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    #[serde(with = "mode_serde")]
    pub mean: MeanMode,
    #[serde(with = "mode_serde")]
    pub quantile: QuantileMode,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub formula: Vec<Term>,
    /// Feature construction; its `delay` is the run's availability delay.
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub quantile_inputs: QuantileInputs,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_eta")]
    pub eta: EtaRule,
    /// Standardize the target with training moments before fitting.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Fixed state-space variances for `kalman-dynamic`, in normalized
    /// units, instead of the likelihood search.
    #[serde(default)]
    pub dynamic_params: Option<SsmParams>,
    /// Permit the slow `incremental-qr` baseline.
    #[serde(default)]
    pub allow_slow: bool,
}

fn default_eta() -> EtaRule {
    EtaRule::Adaptive
}

mod mode_serde {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr<Err = crate::Error>,
        D: Deserializer<'de>,
    {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(D::Error::custom)
    }
}

impl StrategySpec {
    /// Strategy with default settings for `name` = `"<mean>+<quantile>"`.
    pub fn parse(name: &str, formula: Vec<Term>, features: FeatureSpec) -> Result<Self> {
        let (m, q) = split_name(name)?;
        let quantile: QuantileMode = q.parse()?;
        Ok(Self {
            mean: m.parse()?,
            quantile,
            levels: if quantile == QuantileMode::None { Vec::new() } else { default_levels() },
            formula,
            features,
            quantile_inputs: QuantileInputs::default(),
            alphas: default_alphas(),
            eta: EtaRule::Adaptive,
            normalize: true,
            dynamic_params: None,
            allow_slow: false,
        })
    }

    pub fn name(&self) -> String {
        format!("{}+{}", self.mean, self.quantile)
    }

    pub fn delay(&self) -> usize {
        self.features.delay
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        let name = self.name();
        if self.quantile == QuantileMode::Gaussian && !self.mean.is_kalman() {
            return Err(Error::Config(format!("{name}: gaussian quantiles need a kalman mean")));
        }
        if self.mean.is_oracle() && self.quantile != QuantileMode::None {
            return Err(Error::Config(format!("{name}: the mean-anchor baseline has no quantiles")));
        }
        if self.quantile == QuantileMode::IncrementalQr && !self.allow_slow {
            return Err(Error::Config(format!("{name}: incremental-qr is slow and needs allow_slow")));
        }
        if let MeanMode::Persistence(lag) = self.mean {
            if lag <= self.delay() {
                return Err(Error::Config(format!(
                    "{name}: persistence lag {lag} must exceed the delay {}",
                    self.delay()
                )));
            }
        }
        if self.mean.needs_gam() && self.formula.is_empty() {
            return Err(Error::Config(format!("{name}: formula is empty")));
        }
        if self.quantile == QuantileMode::None {
            if !self.levels.is_empty() {
                return Err(Error::Config(format!("{name}: levels given without a quantile mode")));
            }
        } else {
            validate_levels(&self.levels)?;
        }
        if !self.quantile_inputs.effects.is_empty() && self.formula.is_empty() {
            return Err(Error::Config(format!("{name}: quantile inputs name effects but the formula is empty")));
        }
        for e in &self.quantile_inputs.effects {
            if !self.formula.iter().any(|t| &t.covariate == e) {
                return Err(Error::Config(format!("{name}: quantile input `{e}` is not a formula term")));
            }
        }
        if self.quantile == QuantileMode::OgdBoa {
            if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                return Err(Error::Config(format!("{name}: alphas must be positive and non-empty")));
            }
            if let EtaRule::Fixed(e) = self.eta {
                if !(e > 0.0 && e.is_finite()) {
                    return Err(Error::Config(format!("{name}: eta must be positive")));
                }
            }
        }
        if let Some(p) = &self.dynamic_params {
            if self.mean != MeanMode::KalmanDynamic {
                return Err(Error::Config(format!("{name}: dynamic_params only apply to kalman-dynamic")));
            }
            p.validate()?;
        }
        Ok(())
    }
}

fn split_name(name: &str) -> Result<(&str, &str)> {
    name.split_once('+')
        .ok_or_else(|| Error::Config(format!("strategy `{name}` is not of the form <mean>+<quantile>")))
}

/// Every mean/quantile combination the engine supports, excluding the
/// slow and oracle baselines.
pub fn standard_strategies() -> Vec<&'static str> {
    vec![
        "offline+offline-qr",
        "offline+ogd-boa",
        "incremental-daily+offline-qr",
        "incremental-yearly+offline-qr",
        "kalman-static+gaussian",
        "kalman-static+offline-qr",
        "kalman-static+ogd-boa",
        "kalman-dynamic+gaussian",
        "kalman-dynamic+offline-qr",
        "kalman-dynamic+ogd-boa",
    ]
}
