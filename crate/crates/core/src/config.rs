//! Run configuration: one TOML file, overridable from the command line.
//!
//! ```toml
//! master_seed = 7
//! alpha_level = 0.05
//!
//! [catalog]
//! n_videos = 2000
//!
//! [policy]
//! kind = "composite"
//! component_weights = { popularity = 0.8, topic = 0.1, emotion = 0.1 }
//! emotion_target = "happy"
//!
//! [audit]
//! n_walks = 150
//! dwell_min = 10
//! dwell_max = 60
//!
//! [annotation]
//! walks_per_topic = 3
//! step_indices = [0, 5, 10]
//! # ratings_path = "ratings.csv"   # use human ratings instead of simulated raters
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::{default_profiles, RaterProfile};
use crate::auditor::{SampleDesign, WalkOptions, HOPS};
use crate::catalog::{CatalogConfig, CatalogError};
use crate::platform::{ComponentWeights, EmotionTarget, RecommendationPolicy};
use crate::rng::short_hash;

pub const DEFAULT_N_VIDEOS: usize = 2000;
pub const DEFAULT_N_WALKS: usize = 150;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    #[serde(default = "default_n_walks")]
    pub n_walks: usize,
    #[serde(flatten)]
    pub walk: WalkOptions,
}

fn default_n_walks() -> usize {
    DEFAULT_N_WALKS
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            n_walks: DEFAULT_N_WALKS,
            walk: WalkOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSection {
    #[serde(flatten)]
    pub design: SampleDesign,
    #[serde(default = "default_profiles")]
    pub raters: Vec<RaterProfile>,
    /// Human ratings CSV; when set, simulated raters are not used.
    #[serde(default)]
    pub ratings_path: Option<PathBuf>,
}

impl Default for AnnotationSection {
    fn default() -> Self {
        Self {
            design: SampleDesign::default(),
            raters: default_profiles(),
            ratings_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_alpha_level")]
    pub alpha_level: f64,
    pub catalog: CatalogConfig,
    #[serde(default = "default_policy")]
    pub policy: RecommendationPolicy,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub annotation: AnnotationSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_alpha_level() -> f64 {
    0.05
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Popularity-dominant composite with a small topic and happiness pull.
pub fn default_policy() -> RecommendationPolicy {
    RecommendationPolicy::composite(
        ComponentWeights {
            popularity: 0.8,
            topic: 0.1,
            emotion: 0.1,
        },
        2.0,
        EmotionTarget::Happy,
    )
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            alpha_level: default_alpha_level(),
            catalog: CatalogConfig::with_videos(DEFAULT_N_VIDEOS),
            policy: default_policy(),
            audit: AuditSection::default(),
            annotation: AnnotationSection::default(),
            output_dir: default_output_dir(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: path.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text, path)?;
        // Relative ratings paths are resolved against the config file.
        if let (Some(p), Some(dir)) = (&config.annotation.ratings_path, path.parent()) {
            if p.is_relative() {
                config.annotation.ratings_path = Some(dir.join(p));
            }
        }
        Ok(config)
    }

    /// Check every range and referenced file before any stage runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.catalog.validate().map_err(|e| match e {
            CatalogError::InvalidConfig { key, reason } => ConfigError::Invalid { key, reason },
            other => invalid("catalog", other.to_string()),
        })?;
        self.policy.validate().map_err(|e| match e {
            crate::platform::PlatformError::InvalidPolicy { key, reason } => {
                ConfigError::Invalid { key, reason }
            }
            other => invalid("policy", other.to_string()),
        })?;
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(invalid(
                "alpha_level",
                format!("{} must lie in (0, 1)", self.alpha_level),
            ));
        }
        if self.audit.n_walks == 0 {
            return Err(invalid("audit.n_walks", "must be at least 1"));
        }
        if self.audit.walk.dwell_min > self.audit.walk.dwell_max {
            return Err(invalid(
                "audit.dwell_min",
                format!(
                    "{} exceeds audit.dwell_max ({})",
                    self.audit.walk.dwell_min, self.audit.walk.dwell_max
                ),
            ));
        }
        let design = &self.annotation.design;
        if design.walks_per_topic == 0 {
            return Err(invalid("annotation.walks_per_topic", "must be at least 1"));
        }
        if design.step_indices.is_empty() {
            return Err(invalid("annotation.step_indices", "must not be empty"));
        }
        if let Some(&s) = design.step_indices.iter().find(|&&s| s as usize > HOPS) {
            return Err(invalid(
                "annotation.step_indices",
                format!("step {s} outside 0..={HOPS}"),
            ));
        }
        match &self.annotation.ratings_path {
            Some(p) if !p.is_file() => {
                return Err(invalid(
                    "annotation.ratings_path",
                    format!("{} is not a readable file", p.display()),
                ));
            }
            Some(_) => {}
            None => {
                for (i, r) in self.annotation.raters.iter().enumerate() {
                    r.validate(i).map_err(|e| match e {
                        crate::annotation::AnnotationError::InvalidProfile { key, reason } => {
                            ConfigError::Invalid { key, reason }
                        }
                        other => invalid("annotation.raters", other.to_string()),
                    })?;
                }
                if self.annotation.raters.len() < 2 {
                    return Err(invalid("annotation.raters", "at least two raters are required"));
                }
            }
        }
        Ok(())
    }

    /// Hash of everything that shapes results. The seed is recorded
    /// separately; output location and thread count do not affect results.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.master_seed = 0;
        c.output_dir = PathBuf::new();
        short_hash(self.canonical_json_of(&c).as_bytes())
    }

    fn canonical_json_of(&self, c: &RunConfig) -> String {
        serde_json::to_string(c).expect("config serializes")
    }

    /// The effective configuration as TOML, for echoing next to outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
