//! TOML configuration. Every key is optional; absent keys take the
//! defaults below, which for the models are the published hyperparameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use inciplan::domain::Minutes;
use inciplan::predictor::{LassoCvConfig, PredictorSettings};
use inciplan::scenario::{LooConfig, DAY_WINDOW};

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "INCIPLAN_CONFIG";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed for scenario generation and training; `--seed` overrides it.
    pub seed: u64,
    pub paths: Paths,
    pub predictor: PredictorConfig,
    pub associator: LooConfig,
    pub ingest: IngestConfig,
    pub service: ServiceConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Feed directory: speeds.csv, alerts.jsonl, closures.jsonl,
    /// weather.csv and optionally calendar.json.
    pub feeds: PathBuf,
    pub network: PathBuf,
    pub plans: PathBuf,
    pub engagements: PathBuf,
    /// Optional scenario spec for `scenario generate`; the built-in fixture
    /// is used when unset.
    pub scenario: Option<PathBuf>,
    /// Output of `ingest`.
    pub frames: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let data = PathBuf::from("data");
        let feeds = data.join("feeds");
        Self {
            network: feeds.join("network.json"),
            plans: feeds.join("plans.json"),
            engagements: feeds.join("engagements.jsonl"),
            feeds,
            scenario: None,
            frames: data.join("frames"),
            checkpoints: data.join("checkpoints"),
            reports: data.join("reports"),
        }
    }
}

impl Paths {
    pub fn predictor_checkpoint(&self) -> PathBuf {
        self.checkpoints.join("predictor.ckpt")
    }

    pub fn predictor_history(&self) -> PathBuf {
        self.checkpoints.join("predictor_history.json")
    }

    pub fn rank_model(&self) -> PathBuf {
        self.checkpoints.join("associator.json")
    }
}

// Unknown keys cannot be denied here: serde does not combine that with
// `flatten`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    #[serde(flatten)]
    pub settings: PredictorSettings,
    /// Hold out days that carry engagement records, so the associator is
    /// evaluated on forecasts the predictor never trained on.
    pub exclude_engagement_days: bool,
    /// Lagged frames per LASSO feature row in `evaluate`; 0 skips LASSO.
    pub lasso_lags: usize,
    pub lasso: LassoCvConfig,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            settings: PredictorSettings::default(),
            exclude_engagement_days: true,
            lasso_lags: 3,
            lasso: LassoCvConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Inclusive minute-of-day range of frames to build; unset keeps all.
    pub day_window: Option<[Minutes; 2]>,
    /// Replace file reference speeds by the empirical 85th percentile.
    pub empirical_reference: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            day_window: Some(DAY_WINDOW),
            empirical_reference: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Wall-clock milliseconds per five-minute clock step.
    pub step_interval_ms: u64,
    /// How often the feed directory and model files are checked for changes.
    pub watch_interval_ms: u64,
    /// First clock step, in minutes since the Unix epoch. Defaults to the
    /// start of the day window on the first day with speed records.
    pub start: Option<Minutes>,
    /// Last clock step; unbounded when unset.
    pub end: Option<Minutes>,
    /// Append the model's own plan changes to the engagement log with
    /// actor "model".
    pub log_model_changes: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            step_interval_ms: 1000,
            watch_interval_ms: 1000,
            start: None,
            end: None,
            log_model_changes: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads `path` if given, defaults otherwise.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use inciplan::associator::THRESHOLDS;

    #[test]
    fn defaults_are_the_published_values() {
        let c = Config::default();
        let m = &c.predictor.settings.model;
        let t = &c.predictor.settings.train;
        assert_eq!((m.hidden, m.layers, m.dropout, m.embed_dim, m.attention_hidden), (256, 2, 0.2, 3, 256));
        assert_eq!((t.adam.lr, t.tf_ratio, t.batch_size, t.max_epochs, t.patience), (0.0005, 0.5, 32, 200, 5));
        assert_eq!(c.associator.rank.l1_penalty, 1.0);
        assert_eq!(c.associator.thresholds, THRESHOLDS);
        assert_eq!(c.associator.dwell, 20);
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn nested_keys_override() {
        let c = Config::from_toml(
            r#"
            seed = 3
            [paths]
            feeds = "x/feeds"
            [predictor]
            block_len = 6
            [predictor.model]
            hidden = 64
            [predictor.train.adam]
            lr = 0.002
            [predictor.toggles]
            weather = false
            [associator]
            thresholds = [1.5, 2.0, 3.0, 4.0, 8.0]
            [associator.rank]
            l1_penalty = 0.5
            [service]
            step_interval_ms = 10
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.paths.feeds, PathBuf::from("x/feeds"));
        assert_eq!(c.paths.plans, Paths::default().plans);
        assert_eq!(c.predictor.settings.block_len, 6);
        assert_eq!(c.predictor.settings.model.hidden, 64);
        assert_eq!(c.predictor.settings.model.layers, 2);
        assert_eq!(c.predictor.settings.train.adam.lr, 0.002);
        assert!(!c.predictor.settings.toggles.weather);
        assert_eq!(c.associator.thresholds[4], 8.0);
        assert_eq!(c.associator.rank.l1_penalty, 0.5);
        assert_eq!(c.associator.dwell, 20);
        assert_eq!(c.service.step_interval_ms, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml("[paths]\nfeed = \"x\"").is_err());
        assert!(Config::from_toml("colour = 1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = Config::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(Config::from_toml(&text).unwrap(), c);
    }
}
