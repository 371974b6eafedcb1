//! Run and scenario configuration files (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::io::dataset::ColumnMapping;
use crate::simulation::SimScenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnotMode {
    #[serde(rename = "quantile")]
    Quantile,
    #[serde(rename = "inflection")]
    Inflection,
    #[serde(rename = "explicit")]
    Explicit,
}

/// Knot specification: `b` segments selected by rule, or explicit cut-points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnotSpec {
    pub mode: KnotMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutpoints: Option<Vec<f64>>,
}

impl KnotSpec {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            KnotMode::Explicit => {
                if self.cutpoints.is_none() || self.b.is_some() {
                    return Err(Error::Config(
                        "explicit knot mode takes `cutpoints` and no `b`".into(),
                    ));
                }
            }
            _ => {
                if self.b.is_none() || self.cutpoints.is_some() {
                    return Err(Error::Config(
                        "quantile/inflection knot modes take `b` and no `cutpoints`".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMode {
    #[serde(rename = "simulation-rule")]
    SimulationRule,
    #[serde(rename = "npmle-pipeline")]
    NpmlePipeline,
    #[serde(rename = "explicit")]
    Explicit,
}

/// Initial-value specification. Exactly the fields of the chosen mode may be
/// set: `npmle-pipeline` needs a `group_covariate` (and optional `alpha0`),
/// `explicit` needs the full parameter vector, `simulation-rule` optionally
/// takes reference coefficients to perturb by 10%.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitSpec {
    pub mode: InitMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_covariate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_ref: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_ref: Option<Vec<f64>>,
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        let explicit_given = self.alpha.is_some() || self.psi.is_some() || self.beta.is_some()
            || self.gamma.is_some();
        match self.mode {
            InitMode::Explicit => {
                if self.alpha.is_none() || self.psi.is_none() || self.beta.is_none()
                    || self.gamma.is_none()
                {
                    return Err(Error::Config(
                        "explicit init mode needs alpha, psi, beta and gamma".into(),
                    ));
                }
            }
            InitMode::NpmlePipeline => {
                if self.group_covariate.is_none() {
                    return Err(Error::Config(
                        "npmle-pipeline init mode needs `group_covariate`".into(),
                    ));
                }
                if explicit_given {
                    return Err(Error::Config(
                        "npmle-pipeline init mode takes no explicit parameter values".into(),
                    ));
                }
            }
            InitMode::SimulationRule => {
                if explicit_given || self.group_covariate.is_some() {
                    return Err(Error::Config(
                        "simulation-rule init mode takes only beta_ref/gamma_ref".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Configuration for `fit`, `summary`, `curves` and `npmle` commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<ColumnMapping>,
    pub knots: KnotSpec,
    pub init: InitSpec,
    #[serde(default)]
    pub em: EmConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.knots.validate()?;
        self.init.validate()?;
        self.em.validate()
    }
}

/// Scenario file for the `simulate` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(flatten)]
    pub scenario: SimScenario,
    #[serde(default)]
    pub em: EmConfig,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ScenarioFile = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        file.scenario.validate()?;
        file.em.validate()?;
        Ok(file)
    }
}

/// One covariate setting for survival-curve export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveProfile {
    pub name: String,
    /// Incidence covariates (intercept implicit).
    pub z: Vec<f64>,
    /// Latency covariates.
    pub x: Vec<f64>,
}

/// Profiles file for the `curves` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfilesFile {
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(rename = "profile")]
    pub profiles: Vec<CurveProfile>,
}

fn default_grid_points() -> usize {
    200
}

impl ProfilesFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ProfilesFile = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if file.profiles.is_empty() {
            return Err(Error::Config("profiles file lists no profiles".into()));
        }
        if file.grid_points < 2 {
            return Err(Error::Config("grid_points must be at least 2".into()));
        }
        Ok(file)
    }
}
