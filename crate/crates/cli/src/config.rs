//! The flat JSON run configuration shared by `train`, `eval` and `ablate`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vdea::eval::RankingProtocol;
use vdea::trainer::{TrainConfig, Variant};

use crate::failure::Failure;

/// Every training field, the dataset and output locations, and the ranking
/// protocol. Absent keys take the defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,

    pub batch_size: usize,
    pub latent_dim: usize,
    pub clusters: usize,
    pub hidden: usize,
    pub epsilon: f64,
    pub beta_max: f64,
    pub lambda_vl: f64,
    pub lambda_vg: f64,
    pub learning_rate: f64,
    pub prior_learning_rate: Option<f64>,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub anneal_epochs: usize,
    pub patience: usize,
    pub data_seed: u64,
    pub model_seed: u64,
    pub noise_seed: u64,
    pub variant: Variant,

    pub k: usize,
    pub negatives: usize,
    pub protocol_seed: u64,
    pub full_catalog: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_parts(&TrainConfig::default(), &RankingProtocol::default())
    }
}

impl RunConfig {
    pub fn from_parts(t: &TrainConfig, p: &RankingProtocol) -> Self {
        RunConfig {
            data: None,
            out: None,
            batch_size: t.batch_size,
            latent_dim: t.latent_dim,
            clusters: t.clusters,
            hidden: t.hidden,
            epsilon: t.epsilon,
            beta_max: t.beta_max,
            lambda_vl: t.lambda_vl,
            lambda_vg: t.lambda_vg,
            learning_rate: t.learning_rate,
            prior_learning_rate: t.prior_learning_rate,
            pretrain_epochs: t.pretrain_epochs,
            epochs: t.epochs,
            anneal_epochs: t.anneal_epochs,
            patience: t.patience,
            data_seed: t.data_seed,
            model_seed: t.model_seed,
            noise_seed: t.noise_seed,
            variant: t.variant,
            k: p.k,
            negatives: p.negatives,
            protocol_seed: p.seed,
            full_catalog: p.full_catalog,
        }
    }

    /// The file at `path`, or the defaults when there is none.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            latent_dim: self.latent_dim,
            clusters: self.clusters,
            hidden: self.hidden,
            epsilon: self.epsilon,
            beta_max: self.beta_max,
            lambda_vl: self.lambda_vl,
            lambda_vg: self.lambda_vg,
            learning_rate: self.learning_rate,
            prior_learning_rate: self.prior_learning_rate,
            pretrain_epochs: self.pretrain_epochs,
            epochs: self.epochs,
            anneal_epochs: self.anneal_epochs,
            patience: self.patience,
            data_seed: self.data_seed,
            model_seed: self.model_seed,
            noise_seed: self.noise_seed,
            variant: self.variant,
        }
    }

    pub fn protocol(&self) -> RankingProtocol {
        RankingProtocol {
            k: self.k,
            negatives: self.negatives,
            seed: self.protocol_seed,
            full_catalog: self.full_catalog,
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.train_config().validate()?;
        self.protocol().validate()?;
        Ok(())
    }
}
