use rand::seq::SliceRandom;

use super::dataset::PocdrDataset;
use super::matrix::Domain;
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

const BATCH_STREAM: u64 = 0x6261_7463;

/// Rows of one training step in both domains.
///
/// Row `i` of the source block and row `i` of the target block belong to the
/// same person exactly when `aligned[i]` is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedBatch {
    pub source_users: Vec<u32>,
    pub target_users: Vec<u32>,
    pub aligned: Vec<bool>,
}

impl PairedBatch {
    pub fn len(&self) -> usize {
        self.aligned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aligned.is_empty()
    }

    pub fn users(&self, d: Domain) -> &[u32] {
        match d {
            Domain::Source => &self.source_users,
            Domain::Target => &self.target_users,
        }
    }
}

/// Endless reshuffling stream over a user list.
struct Filler {
    users: Vec<u32>,
    pos: usize,
}

impl Filler {
    fn new(mut users: Vec<u32>, rng: &mut Rng) -> Self {
        users.shuffle(rng);
        Filler { users, pos: 0 }
    }

    fn next(&mut self, rng: &mut Rng) -> u32 {
        if self.pos == self.users.len() {
            self.users.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.users[self.pos - 1]
    }
}

/// One epoch of paired batches of exactly `batch_size` rows.
///
/// Overlapped pairs are spread evenly over the batches at aligned positions;
/// the remaining rows are filled independently per domain from shuffled
/// non-overlapped users. The batch count is `ceil(max users / batch_size)`,
/// which guarantees every user of both domains appears at least once.
pub fn make_batches(
    dataset: &PocdrDataset,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<PairedBatch>> {
    let n_source = dataset.source.n_users();
    let n_target = dataset.target.n_users();
    if batch_size == 0 || batch_size > n_source.min(n_target) {
        return Err(Error::contract(format!(
            "batch size {batch_size} must be in 1..={}",
            n_source.min(n_target)
        )));
    }
    let mut rng = rng_from(epoch_seed, &[BATCH_STREAM]);

    let mut pairs = dataset.overlap.pairs().to_vec();
    pairs.shuffle(&mut rng);

    let rest = |d: Domain, n: usize| -> Vec<u32> {
        let flags = dataset.overlap.flags(d, n);
        let free: Vec<u32> = (0..n as u32).filter(|&u| !flags[u as usize]).collect();
        if free.is_empty() {
            (0..n as u32).collect()
        } else {
            free
        }
    };
    let mut source_fill = Filler::new(rest(Domain::Source, n_source), &mut rng);
    let mut target_fill = Filler::new(rest(Domain::Target, n_target), &mut rng);

    let n_batches = n_source.max(n_target).div_ceil(batch_size);
    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let chunk = &pairs[b * pairs.len() / n_batches..(b + 1) * pairs.len() / n_batches];
        let mut batch = PairedBatch {
            source_users: Vec::with_capacity(batch_size),
            target_users: Vec::with_capacity(batch_size),
            aligned: Vec::with_capacity(batch_size),
        };
        for &(s, t) in chunk {
            batch.source_users.push(s);
            batch.target_users.push(t);
            batch.aligned.push(true);
        }
        while batch.aligned.len() < batch_size {
            batch.source_users.push(source_fill.next(&mut rng));
            batch.target_users.push(target_fill.next(&mut rng));
            batch.aligned.push(false);
        }
        batches.push(batch);
    }
    Ok(batches)
}
