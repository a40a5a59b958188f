//! Model parameters, run configuration and the flat key-value config format.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar parameters of the economy. All wealth is measured in units of the
/// per-period endowment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_agents: usize,
    /// Constant learning gain.
    pub lambda: f64,
    /// Per-period death probability.
    pub delta: f64,
    pub beta_annual: f64,
    pub periods_per_year: u32,
    pub endowment: f64,
    /// Equity dividend paid when the signal is 1.
    pub dividend: f64,
    /// Steepness of the sigmoidal feedback; 0 means the identity map.
    pub zeta: f64,
    /// Per-period wealth tax rate on financial wealth.
    pub phi: f64,
    /// Weight of the current mean belief in a newborn's prior.
    pub prior_mean_weight: f64,
    pub seed: u64,
}

impl ModelParams {
    /// Weekly baseline: 50-year life expectancy, one-year memory (alpha = 1).
    pub fn baseline() -> Self {
        let delta: f64 = 1.0 / 2600.0;
        ModelParams {
            n_agents: 100_000,
            lambda: delta.sqrt(),
            delta,
            beta_annual: 0.97,
            periods_per_year: 52,
            endowment: 1.0,
            dividend: 1.0 / 52.0,
            zeta: 0.0,
            phi: 0.0,
            prior_mean_weight: 0.0,
            seed: 1,
        }
    }

    /// Gain implied by `alpha = delta / lambda^2`.
    pub fn lambda_for_alpha(delta: f64, alpha: f64) -> f64 {
        (delta / alpha).sqrt()
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.lambda = Self::lambda_for_alpha(self.delta, alpha);
        self
    }

    pub fn alpha(&self) -> f64 {
        self.delta / (self.lambda * self.lambda)
    }

    /// Per-period discount factor.
    pub fn beta(&self) -> f64 {
        self.beta_annual.powf(1.0 / self.periods_per_year as f64)
    }

    /// Human wealth `endowment / (1 - beta (1 - delta))`.
    pub fn human_wealth(&self) -> f64 {
        self.endowment / (1.0 - self.beta() * (1.0 - self.delta))
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        if self.n_agents == 0 {
            return Err(Error::Config("n_agents must be positive".into()));
        }
        if self.n_agents > u32::MAX as usize {
            return Err(Error::Config("n_agents exceeds 2^32".into()));
        }
        open_unit("lambda", self.lambda)?;
        open_unit("delta", self.delta)?;
        open_unit("beta_annual", self.beta_annual)?;
        if self.periods_per_year == 0 {
            return Err(Error::Config("periods_per_year must be positive".into()));
        }
        if !(self.endowment > 0.0) {
            return Err(Error::Config("endowment must be positive".into()));
        }
        if !(self.dividend >= 0.0) {
            return Err(Error::Config("dividend must be non-negative".into()));
        }
        if !(self.zeta >= 0.0) {
            return Err(Error::Config("zeta must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.phi) {
            return Err(Error::Config(format!(
                "phi must lie in [0, 1), got {}",
                self.phi
            )));
        }
        if !(0.0..1.0).contains(&self.prior_mean_weight) {
            return Err(Error::Config(format!(
                "prior_mean_weight must lie in [0, 1), got {}",
                self.prior_mean_weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRule {
    ConstantGain,
    LeastSquares,
    /// A fixed share of agent slots learn with constant gain, the rest with
    /// least squares.
    Mixed {
        constant_gain_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailRegime {
    Weekly300y,
    Monthly1000y,
}

impl TailRegime {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "weekly_300y" => Ok(TailRegime::Weekly300y),
            "monthly_1000y" => Ok(TailRegime::Monthly1000y),
            other => Err(Error::Config(format!(
                "tail_regime must be weekly_300y or monthly_1000y, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: ModelParams,
    pub years: u32,
    pub burn_in_years: u32,
    pub snapshot_count: usize,
    pub learning_rule: LearningRule,
    pub tail_regime: TailRegime,
    /// Keep every `snapshot_stride`-th agent in stored cross-sections.
    pub snapshot_stride: usize,
    /// Output directory; `None` keeps the record in memory only.
    #[serde(skip)]
    pub outputs: Option<PathBuf>,
    /// Worker threads, 0 = rayon default. Never affects results.
    #[serde(skip)]
    pub workers: usize,
}

impl RunConfig {
    /// 300 years of weekly data at desk scale.
    pub fn baseline() -> Self {
        Self::for_regime(TailRegime::Weekly300y)
    }

    /// Preset for one of the two sampling regimes, alpha = 1, 50-year life
    /// expectancy.
    pub fn for_regime(regime: TailRegime) -> Self {
        let mut params = ModelParams::baseline();
        let years = match regime {
            TailRegime::Weekly300y => 300,
            TailRegime::Monthly1000y => {
                params.periods_per_year = 12;
                params.delta = 1.0 / 600.0;
                params.lambda = params.delta.sqrt();
                params.dividend = 1.0 / 12.0;
                1000
            }
        };
        RunConfig {
            snapshot_stride: default_stride(params.n_agents),
            params,
            years,
            burn_in_years: 50,
            snapshot_count: 250,
            learning_rule: LearningRule::ConstantGain,
            tail_regime: regime,
            outputs: None,
            workers: 0,
        }
    }

    pub fn total_periods(&self) -> usize {
        self.years as usize * self.params.periods_per_year as usize
    }

    pub fn burn_in_periods(&self) -> usize {
        self.burn_in_years as usize * self.params.periods_per_year as usize
    }

    /// Periods (0-based, end of period) at which cross-sections are stored:
    /// `snapshot_count` equally spaced points after burn-in, the last one at
    /// the final period.
    pub fn snapshot_schedule(&self) -> Vec<usize> {
        let start = self.burn_in_periods();
        let end = self.total_periods();
        let span = (end - start) as f64;
        let k = self.snapshot_count;
        (1..=k)
            .map(|j| start + ((j as f64 * span / k as f64).round() as usize).max(1) - 1)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.years == 0 {
            return Err(Error::Config("years must be positive".into()));
        }
        if self.burn_in_years >= self.years {
            return Err(Error::Config(format!(
                "burn_in_years ({}) must be less than years ({})",
                self.burn_in_years, self.years
            )));
        }
        if self.snapshot_count < 2 {
            return Err(Error::Config("snapshot_count must be at least 2".into()));
        }
        let after = self.total_periods() - self.burn_in_periods();
        if self.snapshot_count > after {
            return Err(Error::Config(format!(
                "snapshot_count ({}) exceeds the {after} periods after burn-in",
                self.snapshot_count
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Config("snapshot_stride must be positive".into()));
        }
        if let LearningRule::Mixed {
            constant_gain_fraction: f,
        } = self.learning_rule
        {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!(
                    "constant_gain_fraction must lie in [0, 1], got {f}"
                )));
            }
        }
        if self.tail_regime == TailRegime::Monthly1000y && self.params.periods_per_year != 12 {
            return Err(Error::Config(
                "tail_regime monthly_1000y requires periods_per_year = 12".into(),
            ));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Parses the flat `key = value` config. Keys absent from the file take
    /// their baseline values; unknown keys are rejected by name.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for key in table.keys() {
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
        }

        let regime = match table.get("tail_regime") {
            Some(v) => TailRegime::parse(as_str(v, "tail_regime")?)?,
            None => TailRegime::Weekly300y,
        };
        let mut cfg = RunConfig::for_regime(regime);
        let p = &mut cfg.params;

        if let Some(v) = table.get("n_agents") {
            p.n_agents = as_count(v, "n_agents")? as usize;
        }
        if let Some(v) = table.get("delta") {
            p.delta = as_f64(v, "delta")?;
        }
        if let Some(v) = table.get("periods_per_year") {
            p.periods_per_year = as_count(v, "periods_per_year")? as u32;
            if table.get("dividend").is_none() {
                p.dividend = 1.0 / p.periods_per_year as f64;
            }
        }
        match (table.get("lambda"), table.get("alpha")) {
            (Some(l), Some(a)) => {
                p.lambda = as_f64(l, "lambda")?;
                let alpha = as_f64(a, "alpha")?;
                if (p.delta / (p.lambda * p.lambda) - alpha).abs() > 1e-12 * alpha.max(1.0) {
                    return Err(Error::Config(format!(
                        "alpha = {alpha} is inconsistent with delta / lambda^2 = {}",
                        p.delta / (p.lambda * p.lambda)
                    )));
                }
            }
            (Some(l), None) => p.lambda = as_f64(l, "lambda")?,
            (None, Some(a)) => {
                let alpha = as_f64(a, "alpha")?;
                if !(alpha > 0.0) {
                    return Err(Error::Config(format!(
                        "alpha must be positive, got {alpha}"
                    )));
                }
                p.lambda = ModelParams::lambda_for_alpha(p.delta, alpha);
            }
            // Keep alpha = 1 when only delta moved.
            (None, None) => p.lambda = p.delta.sqrt(),
        }
        if let Some(v) = table.get("beta_annual") {
            p.beta_annual = as_f64(v, "beta_annual")?;
        }
        if let Some(v) = table.get("endowment") {
            p.endowment = as_f64(v, "endowment")?;
        }
        if let Some(v) = table.get("dividend") {
            p.dividend = as_f64(v, "dividend")?;
        }
        if let Some(v) = table.get("zeta") {
            p.zeta = as_f64(v, "zeta")?;
        }
        if let Some(v) = table.get("phi") {
            p.phi = as_f64(v, "phi")?;
        }
        if let Some(v) = table.get("prior_mean_weight") {
            p.prior_mean_weight = as_f64(v, "prior_mean_weight")?;
        }
        if let Some(v) = table.get("seed") {
            p.seed = as_count(v, "seed")?;
        }
        let n_agents = p.n_agents;

        if let Some(v) = table.get("years") {
            cfg.years = as_count(v, "years")? as u32;
        }
        if let Some(v) = table.get("burn_in_years") {
            cfg.burn_in_years = as_count(v, "burn_in_years")? as u32;
        }
        if let Some(v) = table.get("snapshot_count") {
            cfg.snapshot_count = as_count(v, "snapshot_count")? as usize;
        }
        cfg.snapshot_stride = match table.get("snapshot_stride") {
            Some(v) => as_count(v, "snapshot_stride")? as usize,
            None => default_stride(n_agents),
        };
        let fraction = table
            .get("constant_gain_fraction")
            .map(|v| as_f64(v, "constant_gain_fraction"))
            .transpose()?;
        if let Some(v) = table.get("learning_rule") {
            cfg.learning_rule = match as_str(v, "learning_rule")? {
                "constant_gain" => LearningRule::ConstantGain,
                "least_squares" => LearningRule::LeastSquares,
                "mixed" => LearningRule::Mixed {
                    constant_gain_fraction: fraction.ok_or_else(|| {
                        Error::Config(
                            "learning_rule = \"mixed\" requires constant_gain_fraction".into(),
                        )
                    })?,
                },
                other => {
                    return Err(Error::Config(format!(
                        "learning_rule must be constant_gain, least_squares or mixed, got `{other}`"
                    )))
                }
            };
        }
        if let Some(v) = table.get("outputs") {
            cfg.outputs = Some(PathBuf::from(as_str(v, "outputs")?));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the same flat format `from_toml_str` accepts.
    pub fn to_toml_string(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("n_agents", p.n_agents.to_string());
        kv("lambda", fmt_f64(p.lambda));
        kv("delta", fmt_f64(p.delta));
        kv("beta_annual", fmt_f64(p.beta_annual));
        kv("periods_per_year", p.periods_per_year.to_string());
        kv("endowment", fmt_f64(p.endowment));
        kv("dividend", fmt_f64(p.dividend));
        kv("zeta", fmt_f64(p.zeta));
        kv("phi", fmt_f64(p.phi));
        kv("prior_mean_weight", fmt_f64(p.prior_mean_weight));
        kv("seed", p.seed.to_string());
        kv("years", self.years.to_string());
        kv("burn_in_years", self.burn_in_years.to_string());
        kv("snapshot_count", self.snapshot_count.to_string());
        kv("snapshot_stride", self.snapshot_stride.to_string());
        match self.learning_rule {
            LearningRule::ConstantGain => kv("learning_rule", "\"constant_gain\"".into()),
            LearningRule::LeastSquares => kv("learning_rule", "\"least_squares\"".into()),
            LearningRule::Mixed {
                constant_gain_fraction,
            } => {
                kv("learning_rule", "\"mixed\"".into());
                kv("constant_gain_fraction", fmt_f64(constant_gain_fraction));
            }
        }
        let regime = match self.tail_regime {
            TailRegime::Weekly300y => "weekly_300y",
            TailRegime::Monthly1000y => "monthly_1000y",
        };
        kv("tail_regime", format!("\"{regime}\""));
        if let Some(dir) = &self.outputs {
            kv("outputs", format!("{:?}", dir.display().to_string()));
        }
        out
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "n_agents",
    "lambda",
    "alpha",
    "delta",
    "beta_annual",
    "periods_per_year",
    "endowment",
    "dividend",
    "zeta",
    "phi",
    "prior_mean_weight",
    "seed",
    "years",
    "burn_in_years",
    "snapshot_count",
    "snapshot_stride",
    "learning_rule",
    "constant_gain_fraction",
    "outputs",
    "tail_regime",
];

fn default_stride(n_agents: usize) -> usize {
    if n_agents <= 100_000 {
        1
    } else {
        10
    }
}

/// TOML floats must carry a decimal point or exponent.
fn fmt_f64(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn as_f64(v: &toml::Value, key: &str) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("`{key}` must be a number"))),
    }
}

fn as_count(v: &toml::Value, key: &str) -> Result<u64> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(Error::Config(format!(
            "`{key}` must be a non-negative integer"
        ))),
    }
}

fn as_str<'a>(v: &'a toml::Value, key: &str) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| Error::Config(format!("`{key}` must be a string")))
}
