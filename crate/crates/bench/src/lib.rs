//! Fixtures shared by the benchmarks.

use rand::Rng as _;
use vdea::autodiff::Tensor;
use vdea::data::{generate_synthetic, PocdrDataset, SyntheticConfig};
use vdea::rng::rng_from;
use vdea::trainer::TrainConfig;
use vdea::vae::{Architecture, DomainParams, MoGPrior};

/// The 600-user, 200-item synthetic dataset.
pub fn dataset() -> PocdrDataset {
    generate_synthetic(&SyntheticConfig::default()).expect("default synthetic config is valid")
}

pub fn config() -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        latent_dim: 8,
        clusters: 4,
        hidden: 64,
        pretrain_epochs: 2,
        ..TrainConfig::default()
    }
}

pub fn domain_params(items: usize, seed: u64) -> DomainParams {
    let c = config();
    let arch = Architecture {
        items,
        hidden: c.hidden,
        latent: c.latent_dim,
        clusters: c.clusters,
    };
    DomainParams::init(arch, &mut rng_from(seed, &[])).expect("valid architecture")
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = rng_from(seed, &[rows as u64, cols as u64]);
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(rows, cols, data).expect("length matches shape")
}

/// A K-component prior in `d` dimensions with spread-out means.
pub fn prior(k: usize, d: usize, seed: u64) -> MoGPrior {
    MoGPrior {
        logits: uniform(1, k, -1.0, 1.0, seed),
        means: uniform(k, d, -3.0, 3.0, seed + 1),
        log_vars: uniform(k, d, -1.0, 0.5, seed + 2),
    }
}
