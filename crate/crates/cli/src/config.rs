//! JSON run configuration. Unknown keys are rejected at every level.

use oscillachain::model::{CouplingFunction, Parameters};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gamma {
    #[serde(rename = "sin")]
    Sin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaMode {
    TravellingWave,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub k: Option<f64>,
    pub delta: Option<f64>,
    pub gamma: Option<Gamma>,
    pub omega_mode: Option<OmegaMode>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub abs: Option<f64>,
    pub rel: Option<f64>,
    /// Newton tolerance on the shooting defect.
    pub orbit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub base: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub out: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub outputs: Outputs,
}

pub const SCHEMA_HELP: &str = r#"config schema (all keys optional, unknown keys rejected):
{
  "model": {"N": 2, "k": -0.5, "delta": 1.0, "gamma": "sin",
            "omega_mode": "travelling_wave" | {"explicit": [..N values..]}},
  "tolerances": {"abs": 1e-10, "rel": 1e-10, "orbit": 1e-10},
  "seeds": {"base": 42},
  "outputs": {"out": "path"}
}"#;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}\n{SCHEMA_HELP}", path.display()))
    }
}

/// Model after applying flag overrides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveModel {
    #[serde(rename = "N")]
    pub n: usize,
    pub k: f64,
    pub delta: f64,
    pub gamma: Gamma,
    pub omega_mode: OmegaMode,
}

impl EffectiveModel {
    pub fn resolve(
        cfg: Option<&ModelConfig>,
        n: Option<usize>,
        k: Option<f64>,
        delta: Option<f64>,
    ) -> Result<Self, String> {
        let n = n.or(cfg.and_then(|c| c.n)).ok_or("model N is required (--n or config model.N)")?;
        let k = k.or(cfg.and_then(|c| c.k)).ok_or("model k is required (--k or config model.k)")?;
        let delta = delta.or(cfg.and_then(|c| c.delta)).unwrap_or(0.0);
        Ok(Self {
            n,
            k,
            delta,
            gamma: cfg.and_then(|c| c.gamma).unwrap_or(Gamma::Sin),
            omega_mode: cfg.and_then(|c| c.omega_mode.clone()).unwrap_or(OmegaMode::TravellingWave),
        })
    }

    pub fn parameters(&self) -> oscillachain::Result<Parameters> {
        match &self.omega_mode {
            OmegaMode::TravellingWave => Parameters::travelling_wave(self.n, self.k, self.delta),
            OmegaMode::Explicit(omega) => Parameters::new(self.n, self.k, self.delta, omega.clone(), CouplingFunction::Sine),
        }
    }
}
