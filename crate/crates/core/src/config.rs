//! TOML configuration with `IFORGE_<SECTION>_<KEY>` environment overrides.
//!
//! Units: vehicle mass kg, stiffness N/rad, lengths m, inertia kg·m², drag
//! N, N·s/m, N·s²/m²; bound speeds m/s, angles rad, rates rad/s, braking
//! and acceleration limits as fractions of g; times s.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lk_synthesis::SynthesisConfig;
use crate::params::{Bounds, VehicleParams};
use crate::safety_filter::FilterGains;
use crate::simulator::{Profiles, Scenario};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub vehicle: VehicleParams,
    pub bounds: Bounds,
    pub synthesis: SynthesisConfig,
    pub gains: FilterGains,
    pub scenario: Scenario,
    pub profiles: Profiles,
}

const SECTIONS: [&str; 6] = ["vehicle", "bounds", "synthesis", "gains", "scenario", "profiles"];

impl Config {
    /// Parses `text`, applies overrides from `env` and validates.
    pub fn from_str_with_env<I>(text: &str, env: I) -> Result<Config, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (k, v) in env {
            let Some(rest) = k.strip_prefix("IFORGE_") else {
                continue;
            };
            let rest = rest.to_ascii_lowercase();
            let Some((section, key)) = rest.split_once('_') else {
                continue;
            };
            if !SECTIONS.contains(&section) {
                continue;
            }
            let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or(toml::Value::String(v.clone()));
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => {
                    t.insert(key.to_string(), value);
                }
                _ => return Err(ConfigError::Parse(format!("[{section}] is not a table"))),
            }
        }
        let cfg: Config = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::from_str_with_env(&text, std::env::vars())
    }

    /// Defaults with environment overrides only.
    pub fn from_env() -> Result<Config, ConfigError> {
        Config::from_str_with_env("", std::env::vars())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.vehicle.validate().map_err(ConfigError::Invalid)?;
        self.bounds.validate().map_err(ConfigError::Invalid)?;
        self.synthesis
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.gains.validate().map_err(ConfigError::Invalid)?;
        self.scenario().validate().map_err(ConfigError::Invalid)
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            profiles: self.profiles.clone(),
            ..self.scenario.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
