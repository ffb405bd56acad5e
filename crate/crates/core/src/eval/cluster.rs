//! Hard cluster assignments and agreement with planted labels.

use crate::autodiff::Tensor;
use crate::data::InteractionMatrix;
use crate::error::{Error, Result};
use crate::vae::{infer_posterior, infer_responsibilities, DomainParams};

const CHUNK: usize = 512;

/// Posterior means of every user's training row, `users x D`.
pub fn posterior_means(params: &DomainParams, train: &InteractionMatrix) -> Result<Tensor> {
    let n = train.n_users();
    let latent = params.arch().latent;
    let mut data = Vec::with_capacity(n * latent);
    let users: Vec<u32> = (0..n as u32).collect();
    for chunk in users.chunks(CHUNK) {
        let (mu, _) = infer_posterior(params, &train.dense_rows(chunk))?;
        data.extend_from_slice(mu.data());
    }
    Tensor::new(n, latent, data)
}

/// `argmax_c γ_c` for each user, lowest index on ties.
pub fn hard_assignments(params: &DomainParams, train: &InteractionMatrix) -> Result<Vec<u32>> {
    let mu = posterior_means(params, train)?;
    let gamma = infer_responsibilities(&params.prior, &mu)?;
    Ok((0..gamma.rows())
        .map(|r| {
            let row = gamma.row_slice(r);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (c, &g)| if g > row[b] { c } else { b });
            best as u32
        })
        .collect())
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index of two labelings of the same items.
///
/// Returns 1 when both labelings put everything in one group (the index is
/// otherwise undefined there).
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "labelings of {} and {} items",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::contract("adjusted Rand index of an empty labeling"));
    }
    let ka = *a.iter().max().expect("nonempty") as usize + 1;
    let kb = *b.iter().max().expect("nonempty") as usize + 1;
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x as usize * kb + y as usize] += 1;
    }
    let rows: Vec<u64> = (0..ka)
        .map(|i| table[i * kb..(i + 1) * kb].iter().sum())
        .collect();
    let cols: Vec<u64> = (0..kb)
        .map(|j| (0..ka).map(|i| table[i * kb + j]).sum())
        .collect();
    let index: f64 = table.iter().map(|&n| choose2(n)).sum();
    let sum_a: f64 = rows.iter().map(|&n| choose2(n)).sum();
    let sum_b: f64 = cols.iter().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
