//! Run configuration: one JSON document covering every stage. A manifest
//! written by a previous run is accepted in its place.

use std::path::{Path, PathBuf};

use fips_core::data::{DigitLevel, WorldParams};
use fips_core::embedding::TsneParams;
use fips_core::forest::ForestParams;
use fips_core::models::{ComplexityParams, LogitParams};
use fips_core::pipeline::ForecastConfig;
use fips_core::rng::{derive_seed, tag};
use fips_core::validation::ValidationParams;
use fips_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub forecast: ForecastSection,
    pub tsne: TsneParams,
    pub fips: FipsSection,
    pub logit: LogitSection,
    pub complexity: ComplexitySection,
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `year,country,product,value` file; the synthetic world is used when unset.
    pub flows: Option<PathBuf>,
    /// Digit level of the product codes in `flows`.
    pub flows_level: DigitLevel,
    /// Its `seed` must stay 0: the world seed comes from the master seed.
    pub synthetic: WorldParams,
    pub rca_threshold: f64,
    /// Activations are pairs with RCA below this through the training window.
    pub activation_threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { flows: None, flows_level: DigitLevel::Six, synthetic: WorldParams::default(), rca_threshold: 1.0, activation_threshold: 0.25 }
    }
}

/// Forecast settings; the fold seed is derived, not configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub delta: i32,
    pub y0: Option<i32>,
    pub yf: Option<i32>,
    pub n_folds: usize,
    pub target_level: DigitLevel,
    pub forest: ForestParams,
    pub validation: ValidationParams,
}

impl Default for ForecastSection {
    fn default() -> Self {
        let d = ForecastConfig::default();
        Self {
            delta: d.delta,
            y0: d.y0,
            yf: d.yf,
            n_folds: d.n_folds,
            target_level: d.target_level,
            forest: d.forest,
            validation: d.validation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FipsSection {
    /// Target average nearest-neighbour count used to tune σ; a quarter of
    /// the products, capped at 20, when unset.
    pub avg_nn: Option<usize>,
    /// Fixed σ; skips tuning when set.
    pub sigma: Option<f64>,
    pub exclude_self: bool,
}

impl FipsSection {
    pub fn avg_nn_for(&self, n_products: usize) -> usize {
        self.avg_nn.unwrap_or((n_products / 4).clamp(1, 20))
    }
}

impl Default for FipsSection {
    fn default() -> Self {
        Self { avg_nn: None, sigma: None, exclude_self: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogitSection {
    pub fit: LogitParams,
    pub n_folds: usize,
}

impl Default for LogitSection {
    fn default() -> Self {
        Self { fit: LogitParams::default(), n_folds: 13 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexitySection {
    pub fitness: ComplexityParams,
    /// 20 for 6-digit targets and 10 for sectors when unset.
    pub n_bins: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub k: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { k: 10 }
    }
}

/// Seeds of every randomised stage, recorded in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub world: u64,
    pub forecast: u64,
    pub tsne: u64,
    pub logit: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        // a manifest carries the resolved config under "config"
        let value = match value {
            serde_json::Value::Object(mut o) if o.contains_key("manifest_version") => {
                o.remove("config").ok_or_else(|| Error::Format("manifest without a config".into()))?
            }
            v => v,
        };
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds {
            world: derive_seed(self.seed, &[tag("world")]),
            forecast: derive_seed(self.seed, &[tag("forecast")]),
            tsne: derive_seed(self.seed, &[tag("tsne")]),
            logit: derive_seed(self.seed, &[tag("logit")]),
        }
    }

    pub fn world_params(&self) -> WorldParams {
        WorldParams { seed: self.seeds().world, ..self.data.synthetic.clone() }
    }

    pub fn forecast_config(&self) -> ForecastConfig {
        let f = &self.forecast;
        ForecastConfig {
            delta: f.delta,
            y0: f.y0,
            yf: f.yf,
            n_folds: f.n_folds,
            target_level: f.target_level,
            forest: f.forest.clone(),
            validation: f.validation.clone(),
            seed: self.seeds().forecast,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.complexity.n_bins.unwrap_or(match self.forecast.target_level {
            DigitLevel::Six => 20,
            DigitLevel::Two => 10,
        })
    }

    /// Checks everything that can be checked before reading any data.
    pub fn validate(&self) -> Result<()> {
        let param = |msg: &str| Err(Error::Parameter(msg.into()));
        let d = &self.data;
        if d.synthetic.seed != 0 {
            return param("data.synthetic.seed is derived from the master seed; set `seed` instead");
        }
        if !(d.rca_threshold > 0.0 && d.rca_threshold.is_finite()) {
            return param("data.rca_threshold must be positive");
        }
        if !(d.activation_threshold > 0.0 && d.activation_threshold.is_finite()) {
            return param("data.activation_threshold must be positive");
        }
        let f = &self.forecast;
        if d.flows.is_some() && d.flows_level == DigitLevel::Two && f.target_level == DigitLevel::Six {
            return param("6-digit targets need 6-digit flows");
        }
        if f.delta < 1 {
            return param("forecast.delta must be at least one year");
        }
        if f.n_folds == 0 {
            return param("forecast.n_folds must be positive");
        }
        // the window is checked again against the data once it is loaded
        let (y0, yf) = match (&d.flows, f.y0, f.yf) {
            (_, Some(a), Some(b)) => (Some(a), Some(b)),
            (None, a, b) => {
                let w = &d.synthetic;
                let last = w.start_year + w.n_years as i32 - 1;
                (Some(a.unwrap_or(w.start_year)), Some(b.unwrap_or(last)))
            }
            _ => (None, None),
        };
        if let (Some(y0), Some(yf)) = (y0, yf) {
            if yf - y0 < 2 * f.delta {
                return Err(Error::Parameter(format!(
                    "window {y0}–{yf} is shorter than 2·delta = {}",
                    2 * f.delta
                )));
            }
        }
        f.forest.validate()?;
        f.validation.validate()?;
        if !(self.tsne.perplexity > 0.0) || self.tsne.n_iter == 0 {
            return param("tsne.perplexity and tsne.n_iter must be positive");
        }
        if self.fips.avg_nn == Some(0) {
            return param("fips.avg_nn must be positive");
        }
        if let Some(s) = self.fips.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return param("fips.sigma must be positive");
            }
        }
        if self.logit.n_folds < 2 {
            return param("logit.n_folds must be at least 2");
        }
        if self.complexity.n_bins == Some(0) {
            return param("complexity.n_bins must be positive");
        }
        if self.metrics.k == 0 {
            return param("metrics.k must be positive");
        }
        Ok(())
    }
}
