use std::path::{Path, PathBuf};

use anl_core::aggregation::{default_alphas, EtaRule};
use anl_core::dataset::{CsvSchema, FeatureSpec, SplitSpec, SynthConfig};
use anl_core::gam::Term;
use anl_core::kalman::SsmParams;
use anl_core::pipeline::{QuantileInputs, QuantileMode, StrategySpec};
use anl_core::quantile::{default_levels, validate_levels};
use anl_core::{Error, Result};
use chrono::NaiveTime;
use serde::Deserialize;

/// Input CSV and its column roles.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    #[serde(default = "default_timestamp")]
    pub timestamp: String,
    #[serde(default = "default_target")]
    pub target: String,
    /// Series id column; absent means a single series.
    #[serde(default = "default_series")]
    pub series: Option<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// One date per line, `YYYY-MM-DD`.
    #[serde(default)]
    pub holidays: Option<PathBuf>,
}

fn default_timestamp() -> String {
    "timestamp".into()
}

fn default_target() -> String {
    "target".into()
}

fn default_series() -> Option<String> {
    Some("series".into())
}

fn default_delimiter() -> char {
    ','
}

impl DataConfig {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            timestamp: self.timestamp.clone(),
            target: self.target.clone(),
            series: self.series.clone(),
            categorical: self.categorical.clone(),
            delimiter: self.delimiter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Extra reliability tables restricted to these times of day (`HH:MM`).
    #[serde(default)]
    pub reliability_times: Vec<String>,
    /// Test rows between weight-trace samples; one day by default.
    #[serde(default)]
    pub weight_stride: Option<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out_dir(), reliability_times: Vec::new(), weight_stride: None }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_true() -> bool {
    true
}

/// Top-level configuration file (TOML). Relative paths are resolved
/// against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    /// One synthetic series per entry, for `synth`.
    #[serde(default)]
    pub synth: Vec<SynthConfig>,
    #[serde(default)]
    pub split: Option<SplitSpec>,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub formula: Vec<Term>,
    /// Strategy names, `<mean>+<quantile>`.
    #[serde(default)]
    pub strategies: Vec<String>,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    /// Step-size grid of the expert pools.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Fixed BOA learning rate; adaptive when absent.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub quantile_inputs: QuantileInputs,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default)]
    pub allow_slow: bool,
    /// Fixed variances for `kalman-dynamic`, in normalized units.
    #[serde(default)]
    pub dynamic_params: Option<SsmParams>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.path);
        if let Some(h) = &mut self.data.holidays {
            fix(h);
        }
        fix(&mut self.output.dir);
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.synth.iter().enumerate() {
            s.validate().map_err(|e| Error::Config(format!("synth[{i}]: {}", strip(&e))))?;
        }
        if let Some(split) = &self.split {
            split.validate().map_err(|e| Error::Config(format!("split: {}", strip(&e))))?;
        }
        self.features.validate().map_err(|e| Error::Config(format!("features: {}", strip(&e))))?;
        validate_levels(&self.levels).map_err(|e| Error::Config(format!("levels: {}", strip(&e))))?;
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!("eta: {eta} must be positive")));
            }
        }
        for (i, name) in self.strategies.iter().enumerate() {
            self.strategy(name).map_err(|e| Error::Config(format!("strategies[{i}]: {}", strip(&e))))?;
        }
        for t in &self.output.reliability_times {
            parse_time(t)?;
        }
        if self.output.weight_stride == Some(0) {
            return Err(Error::Config("output.weight_stride: must be positive".into()));
        }
        Ok(())
    }

    /// Full strategy spec for `name` under this configuration.
    pub fn strategy(&self, name: &str) -> Result<StrategySpec> {
        let mut spec = StrategySpec::parse(name, self.formula.clone(), self.features.clone())?;
        if spec.quantile != QuantileMode::None {
            spec.levels = self.levels.clone();
        }
        spec.alphas = self.alphas.clone();
        spec.eta = self.eta.map_or(EtaRule::Adaptive, EtaRule::Fixed);
        spec.quantile_inputs = self.quantile_inputs.clone();
        spec.normalize = self.normalize;
        spec.allow_slow = self.allow_slow;
        if spec.mean == anl_core::pipeline::MeanMode::KalmanDynamic {
            spec.dynamic_params = self.dynamic_params.clone();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn require_split(&self) -> Result<&SplitSpec> {
        self.split.as_ref().ok_or_else(|| Error::Config("split: missing".into()))
    }

    pub fn reliability_times(&self) -> Result<Vec<NaiveTime>> {
        self.output.reliability_times.iter().map(|t| parse_time(t)).collect()
    }
}

pub fn parse_time(raw: &str) -> Result<NaiveTime> {
    NaiveTime::parse_from_str(raw, "%H:%M")
        .map_err(|_| Error::Config(format!("output.reliability_times: `{raw}` is not HH:MM")))
}

/// Message of a config error without the "invalid configuration" prefix.
pub(crate) fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
