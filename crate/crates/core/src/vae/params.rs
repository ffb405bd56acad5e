use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Lower bound on a prior component's variance (σ̆ ≥ 1e-3).
pub const PRIOR_LOG_VAR_FLOOR: f64 = -13.815_510_557_964_274;
/// Encoder log-variances are clamped into this range.
pub const POSTERIOR_LOG_VAR_MIN: f64 = -10.0;
pub const POSTERIOR_LOG_VAR_MAX: f64 = 10.0;

/// Layer widths of one domain's autoencoder and prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub items: usize,
    pub hidden: usize,
    pub latent: usize,
    pub clusters: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.items == 0 || self.hidden == 0 || self.latent == 0 || self.clusters == 0 {
            return Err(Error::contract(format!(
                "every layer width must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `items -> hidden (tanh) -> 2*latent`, split into mean and log-variance heads.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

/// `latent -> hidden (tanh) -> items (sigmoid)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Diagonal Gaussian mixture over the latent space.
///
/// Weights are stored as free logits and variances as logs, so any finite
/// values form a valid prior.
#[derive(Debug, Clone, PartialEq)]
pub struct MoGPrior {
    /// `1 x K`.
    pub logits: Tensor,
    /// `K x D`.
    pub means: Tensor,
    /// `K x D`, floored at [`PRIOR_LOG_VAR_FLOOR`] wherever it is read.
    pub log_vars: Tensor,
}

impl MoGPrior {
    pub fn new(logits: Tensor, means: Tensor, log_vars: Tensor) -> Result<Self> {
        let k = means.rows();
        if logits.shape() != [1, k] || log_vars.shape() != means.shape() || k == 0 {
            return Err(Error::ShapeMismatch(format!(
                "prior with logits {:?}, means {:?}, log variances {:?}",
                logits.shape(),
                means.shape(),
                log_vars.shape()
            )));
        }
        if !(logits.all_finite() && means.all_finite() && log_vars.all_finite()) {
            return Err(Error::Numeric("prior parameters must be finite".into()));
        }
        Ok(MoGPrior {
            logits,
            means,
            log_vars,
        })
    }

    /// Standard-normal components with equal weights.
    pub fn standard(k: usize, d: usize) -> Self {
        MoGPrior {
            logits: Tensor::zeros(1, k),
            means: Tensor::zeros(k, d),
            log_vars: Tensor::zeros(k, d),
        }
    }

    pub fn k(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// Mixing weights π = softmax(logits).
    pub fn weights(&self) -> Vec<f64> {
        let l = self.logits.data();
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = l.iter().map(|x| (x - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    /// Floored variances σ̆², `K x D`.
    pub fn variances(&self) -> Tensor {
        self.log_vars.map(|v| v.max(PRIOR_LOG_VAR_FLOOR).exp())
    }

    /// Floored standard deviations σ̆, `K x D`.
    pub fn std_devs(&self) -> Tensor {
        self.log_vars
            .map(|v| (0.5 * v.max(PRIOR_LOG_VAR_FLOOR)).exp())
    }
}

/// Everything one domain learns.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub prior: MoGPrior,
}

/// Graph handles for [`EncoderParams`].
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub w1: Var,
    pub b1: Var,
    pub w_out: Var,
    pub b_out: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct PriorVars {
    pub logits: Var,
    pub means: Var,
    pub log_vars: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DomainVars {
    pub encoder: EncoderVars,
    pub decoder: DecoderVars,
    pub prior: PriorVars,
}

impl DomainVars {
    /// Handles in [`DomainParams::NAMES`] order.
    pub fn all(&self) -> [Var; 11] {
        let (e, d, p) = (&self.encoder, &self.decoder, &self.prior);
        [
            e.w1, e.b1, e.w_out, e.b_out, d.w1, d.b1, d.w2, d.b2, p.logits, p.means, p.log_vars,
        ]
    }

    /// Inverse of [`DomainVars::all`].
    pub fn from_slice(v: &[Var]) -> Result<Self> {
        let v: &[Var; 11] = v
            .try_into()
            .map_err(|_| Error::contract(format!("expected 11 domain handles, got {}", v.len())))?;
        Ok(DomainVars {
            encoder: EncoderVars {
                w1: v[0],
                b1: v[1],
                w_out: v[2],
                b_out: v[3],
            },
            decoder: DecoderVars {
                w1: v[4],
                b1: v[5],
                w2: v[6],
                b2: v[7],
            },
            prior: PriorVars {
                logits: v[8],
                means: v[9],
                log_vars: v[10],
            },
        })
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(rows, cols, data).expect("glorot shape")
}

impl DomainParams {
    pub const NAMES: [&'static str; 11] = [
        "enc.w1",
        "enc.b1",
        "enc.w_out",
        "enc.b_out",
        "dec.w1",
        "dec.b1",
        "dec.w2",
        "dec.b2",
        "prior.logits",
        "prior.means",
        "prior.log_vars",
    ];

    /// Number of encoder and decoder tensors at the front of [`Self::NAMES`].
    pub const NETWORK_TENSORS: usize = 8;

    /// Glorot-uniform weights, zero biases and a standard-normal prior.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let Architecture {
            items,
            hidden,
            latent,
            clusters,
        } = arch;
        Ok(DomainParams {
            encoder: EncoderParams {
                w1: glorot(items, hidden, rng),
                b1: Tensor::zeros(1, hidden),
                w_out: glorot(hidden, 2 * latent, rng),
                b_out: Tensor::zeros(1, 2 * latent),
            },
            decoder: DecoderParams {
                w1: glorot(latent, hidden, rng),
                b1: Tensor::zeros(1, hidden),
                w2: glorot(hidden, items, rng),
                b2: Tensor::zeros(1, items),
            },
            prior: MoGPrior::standard(clusters, latent),
        })
    }

    pub fn arch(&self) -> Architecture {
        Architecture {
            items: self.encoder.w1.rows(),
            hidden: self.encoder.w1.cols(),
            latent: self.decoder.w1.rows(),
            clusters: self.prior.k(),
        }
    }

    /// Expected shape of every tensor, in [`Self::NAMES`] order.
    pub fn shapes(arch: Architecture) -> [[usize; 2]; 11] {
        let Architecture {
            items,
            hidden,
            latent,
            clusters,
        } = arch;
        [
            [items, hidden],
            [1, hidden],
            [hidden, 2 * latent],
            [1, 2 * latent],
            [latent, hidden],
            [1, hidden],
            [hidden, items],
            [1, items],
            [1, clusters],
            [clusters, latent],
            [clusters, latent],
        ]
    }

    pub fn tensors(&self) -> [&Tensor; 11] {
        let (e, d, p) = (&self.encoder, &self.decoder, &self.prior);
        [
            &e.w1,
            &e.b1,
            &e.w_out,
            &e.b_out,
            &d.w1,
            &d.b1,
            &d.w2,
            &d.b2,
            &p.logits,
            &p.means,
            &p.log_vars,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 11] {
        let (e, d, p) = (&mut self.encoder, &mut self.decoder, &mut self.prior);
        [
            &mut e.w1,
            &mut e.b1,
            &mut e.w_out,
            &mut e.b_out,
            &mut d.w1,
            &mut d.b1,
            &mut d.w2,
            &mut d.b2,
            &mut p.logits,
            &mut p.means,
            &mut p.log_vars,
        ]
    }

    /// Rebuilds parameters from tensors in [`Self::NAMES`] order, checking shapes.
    pub fn from_tensors(tensors: [Tensor; 11]) -> Result<Self> {
        let [ew1, eb1, ewo, ebo, dw1, db1, dw2, db2, logits, means, log_vars] = tensors;
        let params = DomainParams {
            encoder: EncoderParams {
                w1: ew1,
                b1: eb1,
                w_out: ewo,
                b_out: ebo,
            },
            decoder: DecoderParams {
                w1: dw1,
                b1: db1,
                w2: dw2,
                b2: db2,
            },
            prior: MoGPrior {
                logits,
                means,
                log_vars,
            },
        };
        let expected = Self::shapes(params.arch());
        for ((name, t), shape) in Self::NAMES.iter().zip(params.tensors()).zip(expected) {
            if t.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(params)
    }

    /// Adds every tensor to `g`. Trainable tensors become parameters, the rest constants.
    pub fn bind(&self, g: &mut Graph, train_network: bool, train_prior: bool) -> DomainVars {
        let mut leaf = |t: &Tensor, trainable: bool| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let (e, d, p) = (&self.encoder, &self.decoder, &self.prior);
        DomainVars {
            encoder: EncoderVars {
                w1: leaf(&e.w1, train_network),
                b1: leaf(&e.b1, train_network),
                w_out: leaf(&e.w_out, train_network),
                b_out: leaf(&e.b_out, train_network),
            },
            decoder: DecoderVars {
                w1: leaf(&d.w1, train_network),
                b1: leaf(&d.b1, train_network),
                w2: leaf(&d.w2, train_network),
                b2: leaf(&d.b2, train_network),
            },
            prior: PriorVars {
                logits: leaf(&p.logits, train_prior),
                means: leaf(&p.means, train_prior),
                log_vars: leaf(&p.log_vars, train_prior),
            },
        }
    }
}
