//! Run configuration, stored as TOML.
//!
//! Precedence, lowest first: built-in defaults, the config file (given
//! explicitly or through `FLEXIREG_CONFIG`), then command-line flags applied
//! by the caller. Every stage seed is overwritten by the root `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::ProviderConfig;
use crate::error::{Error, Result};
use crate::evalharness::{PipelineConfig, Variant};
use crate::geometry::{CellShape, LocalProjection};
use crate::gridlearner::GridLearnerConfig;
use crate::ingest::{DescriptionConfig, SynthParams};
use crate::io::sha256_hex;
use crate::prompt::{PromptConfig, StreetViewConfig};

pub const CONFIG_ENV: &str = "FLEXIREG_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub projection: ProjectionConfig,
    pub grid: GridConfig,
    pub synth: SynthParams,
    pub description: DescriptionConfig,
    pub model: GridLearnerConfig,
    pub streetview: StreetViewConfig,
    pub prompt: PromptConfig,
    pub providers: ProviderConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthParams::default();
        Self {
            seed: 0,
            paths: PathsConfig::default(),
            projection: ProjectionConfig {
                lon0: synth.lon0,
                lat0: synth.lat0,
            },
            grid: GridConfig {
                edge_length: synth.edge_length,
                shape: synth.shape,
            },
            synth,
            description: DescriptionConfig::default(),
            model: GridLearnerConfig::default(),
            streetview: StreetViewConfig::default(),
            prompt: PromptConfig::default(),
            providers: ProviderConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            output_dir: "out".into(),
        }
    }
}

/// Anchor of the planar projection used for all lon/lat inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub lon0: f64,
    pub lat0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub edge_length: f64,
    pub shape: CellShape,
}

impl Default for GridConfig {
    fn default() -> Self {
        let s = SynthParams::default();
        Self {
            edge_length: s.edge_length,
            shape: s.shape,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub lambda: f64,
    pub folds: usize,
    /// Tasks to evaluate; empty means every task found.
    pub tasks: Vec<String>,
    /// Variant labels run by `ablate`; empty means all twelve ablations.
    pub variants: Vec<String>,
    /// Region counts visited by `merge-eval`.
    pub merge_targets: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            folds: 10,
            tasks: Vec::new(),
            variants: Vec::new(),
            merge_targets: vec![50, 40, 30],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path`, or the file named by `FLEXIREG_CONFIG`, or fall back to
    /// defaults. Returns the file actually used.
    pub fn load(path: Option<&Path>) -> Result<(Self, Option<PathBuf>)> {
        let path = path
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", p.display())))?;
                Ok((Self::from_toml(&text)?, Some(p)))
            }
            None => Ok((Self::default(), None)),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.normalized()).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    /// SHA-256 of the normalized TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    /// Copy with the root seed and grid settings pushed into every section.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        c.model.seed = c.seed;
        c.streetview.seed = c.seed;
        c.prompt.seed = c.seed;
        c.synth.edge_length = c.grid.edge_length;
        c.synth.shape = c.grid.shape;
        c.synth.lon0 = c.projection.lon0;
        c.synth.lat0 = c.projection.lat0;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grid.edge_length > 0.0) {
            return Err(Error::invalid("grid.edge_length must be positive"));
        }
        if !(self.eval.lambda >= 0.0) || self.eval.folds < 2 {
            return Err(Error::invalid("eval.lambda must be non-negative and eval.folds at least 2"));
        }
        self.model.validate()?;
        self.prompt.validate()?;
        self.variants()?;
        Ok(())
    }

    pub fn projection(&self) -> LocalProjection {
        LocalProjection::new(self.projection.lon0, self.projection.lat0)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let c = self.normalized();
        PipelineConfig {
            seed: c.seed,
            grid_learner: c.model,
            streetview: c.streetview,
            prompt: c.prompt,
            providers: c.providers,
            lambda: c.eval.lambda,
            folds: c.eval.folds,
            tasks: c.eval.tasks,
        }
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        if self.eval.variants.is_empty() {
            return Ok(Variant::ABLATIONS.to_vec());
        }
        self.eval.variants.iter().map(|s| s.parse()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = RunConfig::default();
        assert_eq!((c.model.d, c.model.heads, c.model.fusion_layers), (144, 4, 3));
        assert_eq!((c.prompt.d_text, c.prompt.d_proj), (144, 256));
        assert_eq!(c.model.lr, 1e-4);
        assert_eq!(c.model.margin, 1.0);
        assert_eq!(c.model.beta_loss, 1.0);
        assert_eq!(c.streetview.tau, 0.5);
        assert_eq!(c.eval.folds, 10);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c.normalized());
        let partial = RunConfig::from_toml("seed = 7\n[model]\nepochs = 50\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.model.epochs, 50);
        assert_eq!(partial.model.d, 144);
        assert_eq!(partial.pipeline().grid_learner.seed, 7);
    }

    #[test]
    fn rejects_unknown_keys_and_variants() {
        assert!(RunConfig::from_toml("sed = 1\n").is_err());
        assert!(RunConfig::from_toml("[eval]\nvariants = [\"w/o-Q\"]\n").is_err());
        assert!(RunConfig::from_toml("[model]\nd = 0\n").is_err());
    }

    #[test]
    fn hash_ignores_stage_seed_fields() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.model.seed = 99;
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
