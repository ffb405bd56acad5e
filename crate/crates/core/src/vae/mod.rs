//! Per-domain variational autoencoders with mixture-of-Gaussians latent priors.

mod em;
mod forward;
mod params;

pub use em::{fit_mog, init_prior_from_latents, EmConfig, EmFit};
pub use forward::{
    decode, decode_logits, encode, forward_domain, infer_posterior, infer_probabilities,
    infer_responsibilities, log_responsibilities, mog_kl, reconstruction_loss, reparameterize,
    sample_noise, vr_loss, vr_terms, DomainForward, Posterior,
};
pub use params::{
    Architecture, DecoderParams, DecoderVars, DomainParams, DomainVars, EncoderParams, EncoderVars,
    MoGPrior, PriorVars, POSTERIOR_LOG_VAR_MAX, POSTERIOR_LOG_VAR_MIN, PRIOR_LOG_VAR_FLOOR,
};
