use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Domain, DomainData, InteractionMatrix, PocdrDataset, SplitKind};
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::trainer::ModelParams;
use crate::vae::{infer_posterior, infer_probabilities, DomainParams};

const NEGATIVE_STREAM: u64 = 0x6e65_6773;
/// Users scored per forward pass.
const SCORE_CHUNK: usize = 256;

/// How held-out positives are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingProtocol {
    pub k: usize,
    /// Sampled unobserved items per positive; ignored with `full_catalog`.
    pub negatives: usize,
    pub seed: u64,
    /// Rank against every item the user has not interacted with.
    pub full_catalog: bool,
}

impl Default for RankingProtocol {
    fn default() -> Self {
        RankingProtocol {
            k: 5,
            negatives: 99,
            seed: 0,
            full_catalog: false,
        }
    }
}

impl RankingProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::contract("k must be at least 1"));
        }
        if !self.full_catalog && self.negatives < self.k {
            return Err(Error::contract(format!(
                "{} negatives cannot fill a top-{} list",
                self.negatives, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainMetrics {
    pub domain: Domain,
    pub hr: f64,
    pub ndcg: f64,
    /// Ranked (user, item) pairs.
    pub pairs: usize,
    /// Pairs whose user had no unobserved item to rank against.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub split: SplitKind,
    pub protocol: RankingProtocol,
    pub source: DomainMetrics,
    pub target: DomainMetrics,
}

impl MetricsReport {
    pub fn domain(&self, d: Domain) -> &DomainMetrics {
        match d {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    /// HR@k averaged over the two domains.
    pub fn mean_hr(&self) -> f64 {
        0.5 * (self.source.hr + self.target.hr)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["split", "domain", "k", "hr", "ndcg", "pairs"])
            .map_err(csv_err)?;
        for m in [&self.source, &self.target] {
            w.write_record([
                self.split.as_str().to_string(),
                m.domain.as_str().to_string(),
                self.protocol.k.to_string(),
                format!("{:.6}", m.hr),
                format!("{:.6}", m.ndcg),
                m.pairs.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// 1-based rank of `positive` among itself and `candidates` by descending
/// score; equal scores go to the lower item index first.
pub fn rank_of(scores: &[f64], positive: u32, candidates: &[u32]) -> usize {
    let sp = scores[positive as usize];
    1 + candidates
        .iter()
        .filter(|&&j| {
            let s = scores[j as usize];
            s > sp || (s == sp && j < positive)
        })
        .count()
}

/// `(HR, NDCG)` contribution of one positive at `rank`.
pub fn hit_and_ndcg(rank: usize, k: usize) -> (f64, f64) {
    if rank <= k {
        (1.0, 1.0 / ((rank + 1) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

/// Candidates for one held-out pair: a seeded sample of the user's unobserved
/// items, or all of them under the full-catalog protocol. The seed depends on
/// the pair itself, so the sample does not depend on evaluation order.
pub fn candidate_items(
    unobserved: &[u32],
    protocol: &RankingProtocol,
    domain: Domain,
    user: u32,
    item: u32,
) -> Vec<u32> {
    if protocol.full_catalog || unobserved.len() <= protocol.negatives {
        return unobserved.to_vec();
    }
    let mut rng = rng_from(
        protocol.seed,
        &[NEGATIVE_STREAM, domain.tag(), user as u64, item as u64],
    );
    let mut picked: Vec<u32> = index::sample(&mut rng, unobserved.len(), protocol.negatives)
        .into_iter()
        .map(|i| unobserved[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Ranks each pair against its candidates using `score`, which maps a list of
/// users to a `users x items` score block.
///
/// `exclude` supplies every positive of each user (all splits); those are never
/// sampled as negatives. Pairs are processed in sorted order, so the result does
/// not depend on the order of `pairs`.
pub fn evaluate_pairs(
    exclude: &InteractionMatrix,
    pairs: &[(u32, u32)],
    protocol: &RankingProtocol,
    domain: Domain,
    mut score: impl FnMut(&[u32]) -> Result<Tensor>,
) -> Result<DomainMetrics> {
    protocol.validate()?;
    let n_items = exclude.n_items();
    let mut by_user: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(u, i) in pairs {
        if u as usize >= exclude.n_users() || i as usize >= n_items {
            return Err(Error::contract(format!(
                "pair ({u}, {i}) outside a {} x {n_items} matrix",
                exclude.n_users()
            )));
        }
        by_user.entry(u).or_default().push(i);
    }
    let users: Vec<u32> = by_user.keys().copied().collect();
    let (mut hr, mut ndcg) = (0.0, 0.0);
    let (mut ranked, mut skipped) = (0usize, 0usize);
    for chunk in users.chunks(SCORE_CHUNK) {
        let scores = score(chunk)?;
        if scores.shape() != [chunk.len(), n_items] {
            return Err(Error::ShapeMismatch(format!(
                "scorer returned {:?} for {} users and {n_items} items",
                scores.shape(),
                chunk.len()
            )));
        }
        for (r, &u) in chunk.iter().enumerate() {
            let positives = exclude.row(u as usize);
            let unobserved: Vec<u32> = (0..n_items as u32)
                .filter(|i| positives.binary_search(i).is_err())
                .collect();
            let mut items = by_user[&u].clone();
            items.sort_unstable();
            for item in items {
                if unobserved.is_empty() {
                    skipped += 1;
                    continue;
                }
                let candidates = candidate_items(&unobserved, protocol, domain, u, item);
                let rank = rank_of(scores.row_slice(r), item, &candidates);
                let (h, n) = hit_and_ndcg(rank, protocol.k);
                hr += h;
                ndcg += n;
                ranked += 1;
            }
        }
    }
    let mean = |x: f64| if ranked == 0 { 0.0 } else { x / ranked as f64 };
    Ok(DomainMetrics {
        domain,
        hr: mean(hr),
        ndcg: mean(ndcg),
        pairs: ranked,
        skipped,
    })
}

/// Decoder probabilities at the posterior mean of each user's training row.
pub fn score_users(
    params: &DomainParams,
    train: &InteractionMatrix,
    users: &[u32],
) -> Result<Tensor> {
    let x = train.dense_rows(users);
    let (mu, _) = infer_posterior(params, &x)?;
    infer_probabilities(params, &mu)
}

pub fn evaluate_domain(
    params: &DomainParams,
    data: &DomainData,
    split: SplitKind,
    protocol: &RankingProtocol,
    domain: Domain,
) -> Result<DomainMetrics> {
    if params.arch().items != data.n_items() {
        return Err(Error::ShapeMismatch(format!(
            "{} model scores {} items, data has {}",
            domain.as_str(),
            params.arch().items,
            data.n_items()
        )));
    }
    let pairs = data.split_pairs(split);
    evaluate_pairs(&data.matrix, &pairs, protocol, domain, |users| {
        score_users(params, data.train(), users)
    })
}

/// HR@k and NDCG@k of both domains on one split.
pub fn evaluate_topk(
    model: &ModelParams,
    dataset: &PocdrDataset,
    split: SplitKind,
    protocol: &RankingProtocol,
) -> Result<MetricsReport> {
    let run = |d: Domain| evaluate_domain(model.domain(d), dataset.domain(d), split, protocol, d);
    Ok(MetricsReport {
        split,
        protocol: *protocol,
        source: run(Domain::Source)?,
        target: run(Domain::Target)?,
    })
}
