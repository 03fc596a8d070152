//! Run configuration: one JSON file with optional sections, each defaulted.

use std::path::Path;

use cikan::governor::{GovernorConfig, ScenarioFamily};
use cikan::sim::Scenario;
use cikan::train::{LossSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Hidden KAN widths between the feature layer and the scalar output.
    pub hidden: Vec<usize>,
    pub spline_degree: usize,
    /// Hidden width of both MLP baseline layers.
    pub mlp_hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![8],
            spline_degree: 3,
            mlp_hidden: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: Scenario,
    pub governor: GovernorConfig,
    pub family: ScenarioFamily,
    pub train: TrainConfig,
    pub loss: LossSpec,
    pub network: NetworkConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |section: &str, e: &dyn std::fmt::Display| CliError::Config(format!("at `{section}`: {e}"));
        self.scenario.validate().map_err(|e| cfg("scenario", &e))?;
        self.governor.validate().map_err(|e| cfg("governor", &e))?;
        self.train.validate().map_err(|e| cfg("train", &e))?;
        self.loss.validate().map_err(|e| cfg("loss", &e))?;
        if self.network.hidden.contains(&0) || self.network.mlp_hidden == 0 {
            return Err(cfg("network", &"layer widths must be positive"));
        }
        Ok(())
    }
}
