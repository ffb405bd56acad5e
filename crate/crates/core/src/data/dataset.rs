use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::matrix::{Domain, InteractionMatrix};
use crate::error::{Error, Result};
use crate::rng::rng_from;

const OVERLAP_STREAM: u64 = 0x6f76_6572;
const SPLIT_STREAM: u64 = 0x7370_6c74;

/// Revealed one-to-one correspondence between source and target users.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMap {
    /// (source user, target user), sorted by source user.
    pairs: Vec<(u32, u32)>,
    ratio: f64,
}

impl OverlapMap {
    pub fn new(mut pairs: Vec<(u32, u32)>, ratio: f64) -> Result<Self> {
        pairs.sort_unstable();
        let mut targets: Vec<u32> = pairs.iter().map(|p| p.1).collect();
        targets.sort_unstable();
        let injective =
            pairs.windows(2).all(|w| w[0].0 != w[1].0) && targets.windows(2).all(|w| w[0] != w[1]);
        if !injective {
            return Err(Error::Format("overlap map is not one-to-one".into()));
        }
        Ok(OverlapMap { pairs, ratio })
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Per-user membership flags for one domain.
    pub fn flags(&self, domain: Domain, n_users: usize) -> Vec<bool> {
        let mut flags = vec![false; n_users];
        for &(s, t) in &self.pairs {
            let u = match domain {
                Domain::Source => s,
                Domain::Target => t,
            };
            flags[u as usize] = true;
        }
        flags
    }
}

/// Positive indices (see [`InteractionMatrix::positives`]) assigned to each split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl Split {
    /// Uniform 8:1:1 partition of `n` positives.
    pub fn random(n: usize, seed: u64, domain: Domain) -> Split {
        let mut idx: Vec<u32> = (0..n as u32).collect();
        idx.shuffle(&mut rng_from(seed, &[SPLIT_STREAM, domain.tag()]));
        let n_train = (0.8 * n as f64).round() as usize;
        let n_val = ((0.1 * n as f64).round() as usize).min(n - n_train);
        let mut train = idx[..n_train].to_vec();
        let mut val = idx[n_train..n_train + n_val].to_vec();
        let mut test = idx[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Split { train, val, test }
    }

    pub fn part(&self, which: SplitKind) -> &[u32] {
        match which {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &k in self.train.iter().chain(&self.val).chain(&self.test) {
            let slot = seen.get_mut(k as usize).ok_or_else(|| {
                Error::Format(format!("split index {k} out of range for {n} positives"))
            })?;
            if *slot {
                return Err(Error::Format(format!("positive {k} appears in two splits")));
            }
            *slot = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("splits do not cover every positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

/// One domain of a dataset: the full matrix, its split and the training view.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainData {
    pub matrix: InteractionMatrix,
    pub split: Split,
    train: InteractionMatrix,
}

impl DomainData {
    pub fn new(matrix: InteractionMatrix, split: Split) -> Result<Self> {
        split.validate(matrix.nnz())?;
        let train = matrix.subset(&split.train);
        Ok(DomainData {
            matrix,
            split,
            train,
        })
    }

    /// Matrix restricted to training positives; this is what encoders see.
    pub fn train(&self) -> &InteractionMatrix {
        &self.train
    }

    pub fn n_users(&self) -> usize {
        self.matrix.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.matrix.n_items()
    }

    /// (user, item) pairs of one split.
    pub fn split_pairs(&self, which: SplitKind) -> Vec<(u32, u32)> {
        let all: Vec<(u32, u32)> = self.matrix.positives().collect();
        self.split
            .part(which)
            .iter()
            .map(|&k| all[k as usize])
            .collect()
    }
}

/// Partially overlapped dual-domain dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PocdrDataset {
    pub source: DomainData,
    pub target: DomainData,
    pub overlap: OverlapMap,
    pub seed: u64,
    /// Ground-truth cluster per user (synthetic data only).
    pub labels: Option<[Vec<u32>; 2]>,
}

/// Users present in both domains, as (source index, target index) in source order.
pub fn shared_pool(source: &InteractionMatrix, target: &InteractionMatrix) -> Vec<(u32, u32)> {
    let target_index = target.user_index();
    source
        .user_ids()
        .iter()
        .enumerate()
        .filter_map(|(s, id)| target_index.get(id.as_str()).map(|&t| (s as u32, t as u32)))
        .collect()
}

/// Reveals `round(ratio * |pool|)` uniformly chosen shared users.
///
/// The choice is a prefix of one seeded permutation of the pool, so for a
/// fixed seed a larger ratio reveals a superset of a smaller one.
pub fn sample_overlap(pool: &[(u32, u32)], ratio: f64, seed: u64) -> Result<OverlapMap> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::contract(format!(
            "overlap ratio {ratio} outside (0, 1)"
        )));
    }
    if pool.is_empty() {
        return Err(Error::NoOverlap);
    }
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(&mut rng_from(seed, &[OVERLAP_STREAM]));
    let count = (ratio * pool.len() as f64).round() as usize;
    shuffled.truncate(count);
    OverlapMap::new(shuffled, ratio)
}

pub fn build_pocdr_dataset(
    source: InteractionMatrix,
    target: InteractionMatrix,
    ratio: f64,
    seed: u64,
) -> Result<PocdrDataset> {
    let pool = shared_pool(&source, &target);
    let overlap = sample_overlap(&pool, ratio, seed)?;
    let source_split = Split::random(source.nnz(), seed, Domain::Source);
    let target_split = Split::random(target.nnz(), seed, Domain::Target);
    Ok(PocdrDataset {
        source: DomainData::new(source, source_split)?,
        target: DomainData::new(target, target_split)?,
        overlap,
        seed,
        labels: None,
    })
}

impl PocdrDataset {
    pub fn domain(&self, d: Domain) -> &DomainData {
        match d {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    pub fn labels(&self, d: Domain) -> Option<&[u32]> {
        self.labels.as_ref().map(|l| l[d.tag() as usize].as_slice())
    }

    /// Same interactions and splits with a different revealed-overlap ratio.
    pub fn with_overlap_ratio(&self, ratio: f64) -> Result<PocdrDataset> {
        let pool = shared_pool(&self.source.matrix, &self.target.matrix);
        let mut out = self.clone();
        out.overlap = sample_overlap(&pool, ratio, self.seed)?;
        Ok(out)
    }
}
