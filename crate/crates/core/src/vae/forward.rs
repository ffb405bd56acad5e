use rand_distr::{Distribution, StandardNormal};

use super::params::{
    DecoderVars, DomainParams, DomainVars, EncoderVars, MoGPrior, PriorVars, POSTERIOR_LOG_VAR_MAX,
    POSTERIOR_LOG_VAR_MIN, PRIOR_LOG_VAR_FLOOR,
};
use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Per-user diagonal Gaussian posterior, both `N x D`.
#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub mu: Var,
    pub log_var: Var,
}

fn at_layer<T>(layer: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Numeric(m) => Error::Numeric(format!("{layer}: {m}")),
        other => other,
    })
}

pub fn encode(g: &mut Graph, enc: &EncoderVars, x: Var) -> Result<Posterior> {
    let h = at_layer(
        "encoder hidden layer",
        (|| {
            let a = g.matmul(x, enc.w1)?;
            let a = g.add(a, enc.b1)?;
            g.tanh(a)
        })(),
    )?;
    at_layer(
        "encoder output layer",
        (|| {
            let out = g.matmul(h, enc.w_out)?;
            let out = g.add(out, enc.b_out)?;
            let width = g.shape(out)[1];
            if width % 2 != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "encoder output width {width} is odd"
                )));
            }
            let mu = g.slice(out, Axis::Cols, 0, width / 2)?;
            let raw = g.slice(out, Axis::Cols, width / 2, width)?;
            let log_var = g.clamp(raw, POSTERIOR_LOG_VAR_MIN, POSTERIOR_LOG_VAR_MAX)?;
            Ok(Posterior { mu, log_var })
        })(),
    )
}

/// `N x D` standard-normal draws.
pub fn sample_noise(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::new(rows, cols, data).expect("noise shape")
}

/// `Z = μ + ε ⊙ exp(½ log σ²)`. `eps` is a constant, so gradients reach only μ and log σ².
pub fn reparameterize(g: &mut Graph, post: &Posterior, eps: &Tensor) -> Result<Var> {
    let e = g.constant(eps.clone());
    let half = g.scale(post.log_var, 0.5)?;
    let sigma = g.exp(half)?;
    let noise = g.mul(e, sigma)?;
    g.add(post.mu, noise)
}

/// Pre-sigmoid decoder output.
pub fn decode_logits(g: &mut Graph, dec: &DecoderVars, z: Var) -> Result<Var> {
    let h = at_layer(
        "decoder hidden layer",
        (|| {
            let a = g.matmul(z, dec.w1)?;
            let a = g.add(a, dec.b1)?;
            g.tanh(a)
        })(),
    )?;
    at_layer(
        "decoder output layer",
        (|| {
            let out = g.matmul(h, dec.w2)?;
            g.add(out, dec.b2)
        })(),
    )
}

/// Bernoulli means X̂ in (0, 1).
pub fn decode(g: &mut Graph, dec: &DecoderVars, z: Var) -> Result<Var> {
    let logits = decode_logits(g, dec, z)?;
    g.sigmoid(logits)
}

/// Floored prior log-variances and their reciprocal variances, both `K x D`.
fn prior_scales(g: &mut Graph, prior: &PriorVars) -> Result<(Var, Var)> {
    let log_var = g.clamp(prior.log_vars, PRIOR_LOG_VAR_FLOOR, f64::INFINITY)?;
    let neg = g.neg(log_var)?;
    let inv_var = g.exp(neg)?;
    Ok((log_var, inv_var))
}

/// `log γ`, `N x K`: log-space softmax over clusters of `log π_c + log N(z | μ̆_c, σ̆_c²)`.
pub fn log_responsibilities(g: &mut Graph, z: Var, prior: &PriorVars) -> Result<Var> {
    let (log_var, inv_var) = prior_scales(g, prior)?;
    let quad = g.weighted_sq_dist(z, prior.means, inv_var)?;
    let log_det = g.sum_axis(log_var, Axis::Cols)?;
    let log_det = g.transpose(log_det)?;
    let log_pi = g.log_softmax(prior.logits, Axis::Cols)?;
    // The shared -D/2 log 2π cancels in the normalization.
    let energy = g.add(quad, log_det)?;
    let log_density = g.scale(energy, -0.5)?;
    let score = g.add(log_density, log_pi)?;
    g.log_softmax(score, Axis::Cols)
}

/// Binary cross-entropy summed over items, averaged over users.
///
/// Evaluated from logits as `softplus(l) - x l`, which equals
/// `-(x ln σ(l) + (1 - x) ln(1 - σ(l)))` without forming the sigmoid.
pub fn reconstruction_loss(g: &mut Graph, x: Var, logits: Var) -> Result<Var> {
    let n = g.shape(x)[0];
    if n == 0 {
        return Err(Error::contract("reconstruction loss of an empty batch"));
    }
    let sp = g.softplus(logits)?;
    let xl = g.mul(x, logits)?;
    let bce = g.sub(sp, xl)?;
    let total = g.sum(bce)?;
    g.scale(total, 1.0 / n as f64)
}

/// Batch mean of the exact KL between `q(z|x) q(c|x)` and the mixture prior, with `q(c|x) = γ`.
///
/// Per user: `Σ_c γ_c [½ Σ_d (log σ̆² + σ²/σ̆² + (μ - μ̆)²/σ̆²) + log(γ_c / π_c)] - ½ Σ_d (1 + log σ²)`.
pub fn mog_kl(g: &mut Graph, post: &Posterior, log_gamma: Var, prior: &PriorVars) -> Result<Var> {
    let n = g.shape(post.mu)[0];
    if n == 0 {
        return Err(Error::contract("KL of an empty batch"));
    }
    let (log_var, inv_var) = prior_scales(g, prior)?;
    let quad = g.weighted_sq_dist(post.mu, prior.means, inv_var)?;
    let var = g.exp(post.log_var)?;
    let inv_var_t = g.transpose(inv_var)?;
    let trace = g.matmul(var, inv_var_t)?;
    let log_det = g.sum_axis(log_var, Axis::Cols)?;
    let log_det = g.transpose(log_det)?;
    let cross = g.add(quad, trace)?;
    let cross = g.add(cross, log_det)?;
    let cross = g.scale(cross, 0.5)?;

    let log_pi = g.log_softmax(prior.logits, Axis::Cols)?;
    let ratio = g.sub(log_gamma, log_pi)?;
    let inner = g.add(cross, ratio)?;
    let gamma = g.exp(log_gamma)?;
    let weighted = g.mul(gamma, inner)?;
    let prior_part = g.sum_axis(weighted, Axis::Cols)?;

    let one_plus = g.offset(post.log_var, 1.0)?;
    let entropy = g.sum_axis(one_plus, Axis::Cols)?;
    let entropy = g.scale(entropy, 0.5)?;
    let per_user = g.sub(prior_part, entropy)?;
    g.mean(per_user)
}

/// Every intermediate of one domain's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DomainForward {
    pub x: Var,
    pub posterior: Posterior,
    pub z: Var,
    pub logits: Var,
    pub log_gamma: Var,
    pub prior: PriorVars,
}

/// Encodes `x`, samples `z` with the given noise, decodes and computes `log γ`.
pub fn forward_domain(
    g: &mut Graph,
    vars: &DomainVars,
    x: &Tensor,
    eps: &Tensor,
) -> Result<DomainForward> {
    let xv = g.constant(x.clone());
    let posterior = encode(g, &vars.encoder, xv)?;
    let z = reparameterize(g, &posterior, eps)?;
    let logits = decode_logits(g, &vars.decoder, z)?;
    let log_gamma = log_responsibilities(g, z, &vars.prior)?;
    Ok(DomainForward {
        x: xv,
        posterior,
        z,
        logits,
        log_gamma,
        prior: vars.prior,
    })
}

/// Reconstruction and KL terms of one domain. The KL is `None` when `beta` is
/// zero, in which case it is left out of the graph entirely.
pub fn vr_terms(g: &mut Graph, f: &DomainForward, beta: f64) -> Result<(Var, Option<Var>)> {
    if beta < 0.0 || beta.is_nan() {
        return Err(Error::contract(format!(
            "beta must be nonnegative, got {beta}"
        )));
    }
    let recon = reconstruction_loss(g, f.x, f.logits)?;
    let kl = if beta > 0.0 {
        Some(mog_kl(g, &f.posterior, f.log_gamma, &f.prior)?)
    } else {
        None
    };
    Ok((recon, kl))
}

/// Variational rating reconstruction loss summed over both domains.
pub fn vr_loss(
    g: &mut Graph,
    source: &DomainForward,
    target: &DomainForward,
    beta: f64,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for f in [source, target] {
        let (recon, kl) = vr_terms(g, f, beta)?;
        let mut term = recon;
        if let Some(kl) = kl {
            let weighted = g.scale(kl, beta)?;
            term = g.add(term, weighted)?;
        }
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("two domains"))
}

/// Posterior means and log-variances of `x`, outside any training graph.
pub fn infer_posterior(params: &DomainParams, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false, false);
    let xv = g.constant(x.clone());
    let post = encode(&mut g, &vars.encoder, xv)?;
    Ok((g.value(post.mu).clone(), g.value(post.log_var).clone()))
}

/// Decoder output probabilities at latent points `z`.
pub fn infer_probabilities(params: &DomainParams, z: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false, false);
    let zv = g.constant(z.clone());
    let p = decode(&mut g, &vars.decoder, zv)?;
    Ok(g.value(p).clone())
}

/// Responsibilities `γ` of latent points under a prior.
pub fn infer_responsibilities(prior: &MoGPrior, z: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = PriorVars {
        logits: g.constant(prior.logits.clone()),
        means: g.constant(prior.means.clone()),
        log_vars: g.constant(prior.log_vars.clone()),
    };
    let zv = g.constant(z.clone());
    let lg = log_responsibilities(&mut g, zv, &vars)?;
    Ok(g.value(lg).map(f64::exp))
}
