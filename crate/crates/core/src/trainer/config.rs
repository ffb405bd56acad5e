use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Which alignment terms enter the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Full,
    /// Reconstruction only.
    Base,
    /// Reconstruction and overlapped-user alignment.
    Local,
    /// Same objective as `Full`; kept so ablation tables have all four rows.
    Global,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Base,
        Variant::Local,
        Variant::Global,
        Variant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Base => "base",
            Variant::Local => "local",
            Variant::Global => "global",
        }
    }

    /// Effective `(λ_VL, λ_VG)`.
    pub fn weights(self, lambda_vl: f64, lambda_vg: f64) -> (f64, f64) {
        match self {
            Variant::Base => (0.0, 0.0),
            Variant::Local => (lambda_vl, 0.0),
            Variant::Full | Variant::Global => (lambda_vl, lambda_vg),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::contract(format!(
                    "unknown variant {s:?} (expected full, base, local or global)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub latent_dim: usize,
    pub clusters: usize,
    pub hidden: usize,
    /// Entropic regularization of the cluster coupling.
    pub epsilon: f64,
    pub beta_max: f64,
    pub lambda_vl: f64,
    pub lambda_vg: f64,
    pub learning_rate: f64,
    /// Learning rate of the prior component means and log-variances; `None`
    /// uses `learning_rate`. Adam moves each coordinate by about one learning
    /// rate per step, which can leave the components behind fast-moving latents.
    pub prior_learning_rate: Option<f64>,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub anneal_epochs: usize,
    /// Epochs without a new best validation HR before stopping; 0 never stops early.
    pub patience: usize,
    pub data_seed: u64,
    pub model_seed: u64,
    pub noise_seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            latent_dim: 128,
            clusters: 30,
            hidden: 600,
            epsilon: 0.1,
            beta_max: 0.2,
            lambda_vl: 0.7,
            lambda_vg: 1.0,
            learning_rate: 1e-3,
            prior_learning_rate: None,
            pretrain_epochs: 20,
            epochs: 100,
            anneal_epochs: 50,
            patience: 10,
            data_seed: 0,
            model_seed: 0,
            noise_seed: 0,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("batch_size", self.batch_size),
            ("latent_dim", self.latent_dim),
            ("clusters", self.clusters),
            ("hidden", self.hidden),
            ("epochs", self.epochs),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be positive")));
            }
        }
        let positive = [
            ("epsilon", self.epsilon),
            ("learning_rate", self.learning_rate),
            (
                "prior_learning_rate",
                self.prior_learning_rate.unwrap_or(self.learning_rate),
            ),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be positive, got {v}")));
            }
        }
        let nonnegative = [
            ("beta_max", self.beta_max),
            ("lambda_vl", self.lambda_vl),
            ("lambda_vg", self.lambda_vg),
        ];
        for (name, v) in nonnegative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Linear KL warm-up: `β_max · min(1, epoch / anneal_epochs)`.
pub fn beta_schedule(epoch: usize, anneal_epochs: usize, beta_max: f64) -> f64 {
    if anneal_epochs == 0 {
        return beta_max;
    }
    beta_max * (epoch as f64 / anneal_epochs as f64).min(1.0)
}

/// `L_VR + λ_VL L_VA + λ_VG L_VG` with the variant's weights. A missing global
/// term counts as zero.
pub fn total_loss(
    g: &mut Graph,
    vr: Var,
    va: Var,
    vg: Option<Var>,
    lambda_vl: f64,
    lambda_vg: f64,
    variant: Variant,
) -> Result<Var> {
    let (wl, wg) = variant.weights(lambda_vl, lambda_vg);
    let mut total = vr;
    if wl != 0.0 {
        let t = g.scale(va, wl)?;
        total = g.add(total, t)?;
    }
    if let (Some(vg), true) = (vg, wg != 0.0) {
        let t = g.scale(vg, wg)?;
        total = g.add(total, t)?;
    }
    Ok(total)
}
