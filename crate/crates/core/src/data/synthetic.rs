//! Planted-cluster dual-domain data with known user prototypes.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{sample_overlap, DomainData, PocdrDataset, Split};
use super::matrix::{Domain, InteractionMatrix};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

const PROTOTYPE_STREAM: u64 = 0x7072_6f74;
const ITEM_STREAM: u64 = 0x6974_656d;
const ENTRY_STREAM: u64 = 0x656e_7472;
const MAX_ATTEMPTS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Number of planted user prototypes.
    pub clusters: usize,
    /// Users per domain. Every user exists in both domains.
    pub users: usize,
    pub source_items: usize,
    pub target_items: usize,
    pub overlap_ratio: f64,
    /// Scale of the per-user preference jitter and per-entry affinity noise.
    pub noise: f64,
    /// Share of a prototype's home items each user likes, per domain.
    pub source_density: f64,
    pub target_density: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            clusters: 4,
            users: 600,
            source_items: 200,
            target_items: 200,
            overlap_ratio: 0.3,
            noise: 0.2,
            source_density: 0.3,
            target_density: 0.3,
            seed: 0,
        }
    }
}

/// Draws one domain's interactions.
///
/// Each item belongs to one prototype ("home") and has an appeal `a_i` drawn
/// uniformly from [0, 1). A user's preference vector is their prototype's
/// indicator plus Gaussian jitter, and their affinity for item `i` is
/// `pref[home(i)] * a_i + noise * eta`. The user likes their
/// `round(density * n_items / clusters)` highest-affinity items, so without
/// noise they like exactly the most appealing `density` share of home items.
fn draw_domain(
    prefs: &[Vec<f64>],
    n_items: usize,
    clusters: usize,
    density: f64,
    noise: f64,
    rng_items: &mut Rng,
    rng_entries: &mut Rng,
) -> Vec<Vec<u32>> {
    let mut homes: Vec<usize> = (0..n_items).map(|i| i % clusters).collect();
    homes.shuffle(rng_items);
    let appeal: Vec<f64> = (0..n_items).map(|_| rng_items.random::<f64>()).collect();
    let likes = ((density * n_items as f64 / clusters as f64).round() as usize).min(n_items);
    prefs
        .iter()
        .map(|pref| {
            let affinity: Vec<f64> = (0..n_items)
                .map(|i| {
                    let eta: f64 = rng_entries.sample(StandardNormal);
                    pref[homes[i]] * appeal[i] + noise * eta
                })
                .collect();
            let mut order: Vec<u32> = (0..n_items as u32).collect();
            order.sort_by(|&a, &b| {
                affinity[b as usize]
                    .total_cmp(&affinity[a as usize])
                    .then(a.cmp(&b))
            });
            order.truncate(likes);
            order
        })
        .collect()
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<PocdrDataset> {
    if config.clusters < 2 {
        return Err(Error::contract(
            "synthetic data needs at least two clusters",
        ));
    }
    if config.users == 0 || config.source_items == 0 || config.target_items == 0 {
        return Err(Error::contract("user and item counts must be positive"));
    }
    if config.noise < 0.0 {
        return Err(Error::contract("noise must be nonnegative"));
    }
    for attempt in 0..MAX_ATTEMPTS {
        match try_generate(config, attempt)? {
            Some(ds) => return Ok(ds),
            None => {
                log::warn!("synthetic attempt {attempt} produced an empty user row; regenerating")
            }
        }
    }
    Err(Error::EmptyDataset)
}

fn try_generate(config: &SyntheticConfig, attempt: u64) -> Result<Option<PocdrDataset>> {
    let k = config.clusters;
    let seed = config.seed;
    let mut rng = rng_from(seed, &[PROTOTYPE_STREAM, attempt]);

    let mut labels: Vec<u32> = (0..config.users).map(|u| (u % k) as u32).collect();
    labels.shuffle(&mut rng);
    let prefs: Vec<Vec<f64>> = labels
        .iter()
        .map(|&c| {
            (0..k)
                .map(|j| {
                    let base = if j == c as usize { 1.0 } else { 0.0 };
                    let jitter: f64 = rng.sample(StandardNormal);
                    base + config.noise * jitter
                })
                .collect()
        })
        .collect();

    let mut domains = Vec::with_capacity(2);
    for (d, n_items, density) in [
        (Domain::Source, config.source_items, config.source_density),
        (Domain::Target, config.target_items, config.target_density),
    ] {
        let mut rng_items = rng_from(seed, &[ITEM_STREAM, d.tag(), attempt]);
        let mut rng_entries = rng_from(seed, &[ENTRY_STREAM, d.tag(), attempt]);
        let rows = draw_domain(
            &prefs,
            n_items,
            k,
            density,
            config.noise,
            &mut rng_items,
            &mut rng_entries,
        );
        if rows.iter().any(Vec::is_empty) {
            return Ok(None);
        }
        let matrix = InteractionMatrix::new(
            (0..config.users).map(|u| format!("u{u}")).collect(),
            (0..n_items)
                .map(|i| format!("{}{i}", &d.as_str()[..1]))
                .collect(),
            rows,
        )?;
        let split = Split::random(matrix.nnz(), seed, d);
        domains.push(DomainData::new(matrix, split)?);
    }
    let target = domains.pop().expect("two domains");
    let source = domains.pop().expect("two domains");

    let pool: Vec<(u32, u32)> = (0..config.users as u32).map(|u| (u, u)).collect();
    let overlap = sample_overlap(&pool, config.overlap_ratio, seed)?;
    Ok(Some(PocdrDataset {
        source,
        target,
        overlap,
        seed,
        labels: Some([labels.clone(), labels]),
    }))
}
