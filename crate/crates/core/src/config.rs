//! TOML run configuration shared by every command.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::DdpgConfig;
use crate::error::{Error, Result};
use crate::model::{LinearPlantSpec, PlantModel};
use crate::objective::{CostSpec, CostWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    #[default]
    Example,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSelection {
    pub model: PlantKind,
    /// Required when `model = "custom"`.
    pub custom: Option<LinearPlantSpec>,
}

impl PlantSelection {
    pub fn spec(&self) -> Result<LinearPlantSpec> {
        match (self.model, &self.custom) {
            (PlantKind::Example, None) => Ok(LinearPlantSpec::example()),
            (PlantKind::Example, Some(_)) => Err(Error::Config(
                "plant.custom is only read when plant.model = \"custom\"".into(),
            )),
            (PlantKind::Custom, Some(spec)) => Ok(spec.clone()),
            (PlantKind::Custom, None) => Err(Error::Config(
                "plant.model = \"custom\" needs a [plant.custom] table".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub episodes: usize,
    pub steps: usize,
    /// Seed of the evaluation noise, kept apart from the training seeds.
    pub seed: u64,
    /// Overrides the derived divergence threshold.
    pub divergence_threshold: Option<f64>,
    /// Operating point whose frozen-linearization filter sets the default
    /// divergence threshold.
    pub observable_point: Vec<f64>,
    /// Actor checkpoint for `evaluate` and `compare`; defaults to the best
    /// actor written by `train` into the output directory.
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            episodes: 50,
            steps: 200,
            seed: 10_000,
            divergence_threshold: None,
            observable_point: vec![3.0, 0.0, 0.0],
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// When false the LQG gain comes from the undiscounted equation.
    pub discounted: bool,
}

impl Default for RiccatiConfig {
    fn default() -> Self {
        RiccatiConfig {
            tolerance: 1e-12,
            max_iterations: 100_000,
            discounted: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub trials: usize,
    pub plant: PlantSelection,
    pub cost: CostSpec,
    pub ddpg: DdpgConfig,
    pub evaluation: EvaluationConfig,
    pub riccati: RiccatiConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            trials: 3,
            plant: PlantSelection::default(),
            cost: CostSpec::default(),
            ddpg: DdpgConfig::default(),
            evaluation: EvaluationConfig::default(),
            riccati: RiccatiConfig::default(),
        }
    }
}

/// Everything a command needs, built from a validated [`RunConfig`].
pub struct Resolved {
    pub spec: LinearPlantSpec,
    pub model: PlantModel,
    pub weights: CostWeights,
}

impl RunConfig {
    /// Parses a configuration file. A manifest written by a previous run is
    /// accepted as well; its embedded `[config]` table is used.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: RunConfig = if table.contains_key("manifest") {
            let inner = table
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Config("manifest has no [config] table".into()))?;
            inner
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(format!("in manifest [config]: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        self.ddpg.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.seed > i64::MAX as u64 || self.evaluation.seed > i64::MAX as u64 {
            return bad(format!("seeds must not exceed {}", i64::MAX));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.cost.gamma != self.ddpg.gamma {
            return bad(format!(
                "cost.gamma ({}) and ddpg.gamma ({}) must agree",
                self.cost.gamma, self.ddpg.gamma
            ));
        }
        if self.evaluation.episodes == 0 || self.evaluation.steps == 0 {
            return bad("evaluation.episodes and evaluation.steps must be positive".into());
        }
        if let Some(t) = self.evaluation.divergence_threshold {
            if !(t > 0.0) {
                return bad("evaluation.divergence_threshold must be positive".into());
            }
        }
        if !(self.riccati.tolerance > 0.0) || self.riccati.max_iterations == 0 {
            return bad("riccati.tolerance and riccati.max_iterations must be positive".into());
        }
        if let Some(p) = &self.evaluation.checkpoint {
            if !p.is_file() {
                return bad(format!("evaluation.checkpoint {} does not exist", p.display()));
            }
        }
        let spec = self.plant.spec()?;
        let n = spec.a.len();
        if self.evaluation.observable_point.len() != n {
            return bad(format!(
                "evaluation.observable_point needs {n} entries, got {}",
                self.evaluation.observable_point.len()
            ));
        }
        Ok(())
    }

    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let spec = self.plant.spec()?;
        let model = spec.build()?;
        let weights = self.cost.build()?;
        crate::error::check_dim("cost.q size", model.state_dim(), weights.q.nrows())?;
        crate::error::check_dim("cost.r size", model.input_dim(), weights.r.nrows())?;
        Ok(Resolved { spec, model, weights })
    }

    pub fn observable_point(&self) -> DVector<f64> {
        DVector::from_vec(self.evaluation.observable_point.clone())
    }

    pub fn riccati_discount(&self) -> f64 {
        if self.riccati.discounted {
            self.cost.gamma
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.ddpg.grad_clip = 2.5;
        cfg.ddpg.actor_lr = 3.3e-4;
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest().unwrap(), cfg.digest().unwrap());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = RunConfig::from_toml("seed = 1\n\n[ddpg]\nepisodes = 3\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 5"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn custom_plant_requires_table() {
        let cfg = RunConfig::from_toml("[plant]\nmodel = \"custom\"\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn mismatched_discounts_rejected() {
        let cfg = RunConfig::from_toml("[cost]\nq = [[1.0,0,0],[0,1,0],[0,0,1]]\nr = [[1.0]]\ngamma = 0.9\n")
            .unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_checkpoint_rejected() {
        let cfg = RunConfig::from_toml("[evaluation]\ncheckpoint = \"/nonexistent/actor.json\"\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
