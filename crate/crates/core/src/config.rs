//! Experiment configuration loaded from TOML.
//!
//! Every hyperparameter of the pipeline is reachable from [`ExperimentConfig`].
//! Module seeds are not read from their sections: [`ExperimentConfig::resolve`]
//! derives them from `experiment.seed` plus the fixed offsets in
//! [`crate::rng::offsets`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::eval::synthetic::SyntheticSpec;
use crate::gbt::GbtHyper;
use crate::mapping::{MappingParams, PipelineParams};
use crate::mfus::MfusHyper;
use crate::rng::{derive_seed, offsets};
use crate::similarity::SimilarityParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cdlfm,
    Af,
    MfGbt,
    MfusGbt,
    Tmatrix,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Cdlfm,
        Method::Af,
        Method::MfGbt,
        Method::MfusGbt,
        Method::Tmatrix,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cdlfm => "cdlfm",
            Method::Af => "af",
            Method::MfGbt => "mf_gbt",
            Method::MfusGbt => "mfus_gbt",
            Method::Tmatrix => "tmatrix",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Files,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub target: Option<PathBuf>,
    pub auxiliary: Option<PathBuf>,
    /// Explicit target-domain test ratings. When set, the users in it become
    /// the cold-start users and no random split is drawn.
    pub test: Option<PathBuf>,
    pub header: bool,
    pub min_user_ratings: usize,
    pub min_item_ratings: usize,
    pub cold_start_fraction: f64,
    pub density_level: f64,
    pub overlap_level: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Files,
            target: None,
            auxiliary: None,
            test: None,
            header: false,
            min_user_ratings: 0,
            min_item_ratings: 0,
            cold_start_fraction: 0.5,
            density_level: 1.0,
            overlap_level: 1.0,
        }
    }
}

impl DataConfig {
    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            cold_start_fraction: self.cold_start_fraction,
            density_level: self.density_level,
            overlap_level: self.overlap_level,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Worker threads; 0 lets the runtime decide.
    pub jobs: usize,
    pub output_dir: PathBuf,
    pub density_levels: Vec<f64>,
    pub overlap_levels: Vec<f64>,
    pub sim_values: Vec<f64>,
    pub grid_k: Vec<usize>,
    pub grid_alpha: Vec<f64>,
    pub grid_beta: Vec<f64>,
    pub grid_rho: Vec<[f64; 3]>,
    pub train_fraction: f64,
    pub tmatrix_ridge: f64,
    pub tmatrix_intercept: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seed: 42,
            methods: vec![Method::Cdlfm],
            jobs: 0,
            output_dir: PathBuf::from("out"),
            density_levels: vec![0.5, 0.7, 1.0],
            overlap_levels: vec![0.3, 0.5, 0.7],
            sim_values: vec![0.2, 0.3, 0.4, 0.45, 0.5],
            grid_k: vec![5, 10, 15],
            grid_alpha: vec![0.01, 0.1],
            grid_beta: vec![0.0, 0.001, 0.002, 0.005, 0.01],
            grid_rho: vec![[0.6, 0.2, 0.2], [0.4, 0.3, 0.3], [0.8, 0.1, 0.1]],
            train_fraction: 0.8,
            tmatrix_ridge: 1e-3,
            tmatrix_intercept: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub synthetic: SyntheticSpec,
    /// Target-domain similarity; also used for the auxiliary domain unless
    /// `similarity_auxiliary` is set.
    pub similarity: SimilarityParams,
    pub similarity_auxiliary: Option<SimilarityParams>,
    pub mfus: MfusHyper,
    pub mfus_auxiliary: Option<MfusHyper>,
    pub gbt: GbtHyper,
    pub mapping: MappingParams,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg.resolve())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fills the auxiliary sections and overwrites module seeds with values
    /// derived from the master seed. Idempotent.
    pub fn resolve(mut self) -> Self {
        let master = self.experiment.seed;
        if self.similarity_auxiliary.is_none() {
            self.similarity_auxiliary = Some(self.similarity.clone());
        }
        let mut aux = self.mfus_auxiliary.take().unwrap_or_else(|| self.mfus.clone());
        self.mfus.seed = derive_seed(master, offsets::MFUS_TARGET);
        aux.seed = derive_seed(master, offsets::MFUS_AUXILIARY);
        self.mfus_auxiliary = Some(aux);
        self.gbt.seed = derive_seed(master, offsets::GBT);
        self.synthetic.seed = derive_seed(master, offsets::SYNTHETIC);
        self
    }

    /// Changes the master seed and re-derives module seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.experiment.seed = seed;
        self.resolve()
    }

    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        if let Some(s) = &self.similarity_auxiliary {
            s.validate()?;
        }
        self.mfus.validate()?;
        if let Some(h) = &self.mfus_auxiliary {
            h.validate()?;
        }
        self.gbt.validate()?;
        self.split_spec().validate()?;
        if !(self.mapping.sim >= 0.0 && self.mapping.sim < 1.0) {
            return Err(Error::InvalidParam(format!("sim {} not in [0, 1)", self.mapping.sim)));
        }
        if self.experiment.methods.is_empty() {
            return Err(Error::Config("experiment.methods is empty".into()));
        }
        if !(self.experiment.train_fraction > 0.0 && self.experiment.train_fraction < 1.0) {
            return Err(Error::Config("experiment.train_fraction must be in (0, 1)".into()));
        }
        if self.data.source == DataSource::Synthetic {
            self.synthetic.validate()?;
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        self.data
            .split_spec(derive_seed(self.experiment.seed, offsets::COLD_START_SPLIT))
    }

    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            target_similarity: self.similarity.clone(),
            auxiliary_similarity: self
                .similarity_auxiliary
                .clone()
                .unwrap_or_else(|| self.similarity.clone()),
            target_mfus: self.mfus.clone(),
            auxiliary_mfus: self.mfus_auxiliary.clone().unwrap_or_else(|| self.mfus.clone()),
            gbt: self.gbt.clone(),
            mapping: self.mapping.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Canonical JSON of the resolved config without output location or job count; the input to [`Self::hash`].
    pub fn canonical_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(exp) = value.get_mut("experiment").and_then(|v| v.as_object_mut()) {
            exp.remove("output_dir");
            exp.remove("jobs");
        }
        Ok(serde_json::to_string(&value)?)
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> Result<String> {
        Ok(hash_json(&self.canonical_json()?))
    }
}

pub fn hash_json(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}
