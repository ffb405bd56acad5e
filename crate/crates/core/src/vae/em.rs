//! Expectation-maximization for a diagonal Gaussian mixture, used to warm-start
//! the latent priors from pretrained encoder means.

use rand::Rng as _;

use super::params::{MoGPrior, PRIOR_LOG_VAR_FLOOR};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

const EM_STREAM: u64 = 0x656d_6d67;
const VAR_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop once the mean per-point log-likelihood improves by less than this.
    pub tolerance: f64,
    /// How many times an empty cluster may be re-seeded.
    pub max_reseeds: usize,
    /// Independent k-means++ seedings; the fit with the highest final
    /// log-likelihood is kept.
    pub restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 100,
            tolerance: 1e-6,
            max_reseeds: 5,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub prior: MoGPrior,
    /// Mean per-point log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    pub reseeds: usize,
}

struct Mixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kmeans_pp(points: &[&[f64]], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].to_vec();
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

impl Mixture {
    /// Fills `resp` with responsibilities and returns the mean log-likelihood.
    fn e_step(&self, points: &[&[f64]], resp: &mut [Vec<f64>]) -> f64 {
        let k = self.weights.len();
        let consts: Vec<f64> = (0..k)
            .map(|c| {
                let log_det: f64 = self.vars[c].iter().map(|v| v.ln() + LN_2PI).sum();
                self.weights[c].max(1e-300).ln() - 0.5 * log_det
            })
            .collect();
        let mut total = 0.0;
        for (p, r) in points.iter().zip(resp.iter_mut()) {
            for c in 0..k {
                let quad: f64 = p
                    .iter()
                    .zip(&self.means[c])
                    .zip(&self.vars[c])
                    .map(|((x, m), v)| (x - m).powi(2) / v)
                    .sum();
                r[c] = consts[c] - 0.5 * quad;
            }
            let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + r.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in r.iter_mut() {
                *x = (*x - lse).exp();
            }
            total += lse;
        }
        total / points.len() as f64
    }

    fn m_step(&mut self, points: &[&[f64]], resp: &[Vec<f64>]) {
        let k = self.weights.len();
        let d = points[0].len();
        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            self.weights[c] = nk / points.len() as f64;
            if nk < 1e-12 {
                continue;
            }
            let mut mean = vec![0.0; d];
            for (p, r) in points.iter().zip(resp) {
                for (m, x) in mean.iter_mut().zip(p.iter()) {
                    *m += r[c] * x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut var = vec![0.0; d];
            for (p, r) in points.iter().zip(resp) {
                for ((v, x), m) in var.iter_mut().zip(p.iter()).zip(&mean) {
                    *v += r[c] * (x - m).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v = (*v / nk).max(VAR_FLOOR));
            self.means[c] = mean;
            self.vars[c] = var;
        }
    }

    /// Clusters that are nobody's most likely component.
    fn empty_clusters(&self, resp: &[Vec<f64>]) -> Vec<usize> {
        let mut owned = vec![false; self.weights.len()];
        for r in resp {
            owned[argmax(r)] = true;
        }
        (0..owned.len()).filter(|&c| !owned[c]).collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn global_variance(points: &[&[f64]]) -> Vec<f64> {
    let d = points[0].len();
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n)
        .collect();
    (0..d)
        .map(|j| (points.iter().map(|p| (p[j] - mean[j]).powi(2)).sum::<f64>() / n).max(VAR_FLOOR))
        .collect()
}

/// Fits a `k`-component diagonal mixture to the rows of `points`.
///
/// Seeding is k-means++, repeated `restarts` times. A cluster that owns no
/// point is moved onto the point farthest from its current owner's mean, at
/// most `max_reseeds` times per run; after that it is kept as a low-weight
/// component.
pub fn fit_mog(points: &Tensor, k: usize, seed: u64, config: EmConfig) -> Result<EmFit> {
    let m = points.rows();
    if k == 0 || m < k {
        return Err(Error::contract(format!(
            "cannot fit {k} clusters to {m} points"
        )));
    }
    if !points.all_finite() {
        return Err(Error::Numeric(
            "latent means contain non-finite values".into(),
        ));
    }
    if config.restarts == 0 {
        return Err(Error::contract("EM needs at least one restart"));
    }
    let rows: Vec<&[f64]> = (0..m).map(|i| points.row_slice(i)).collect();
    let mut best: Option<EmFit> = None;
    for restart in 0..config.restarts {
        let fit = fit_once(
            &rows,
            k,
            &mut rng_from(seed, &[EM_STREAM, restart as u64]),
            config,
        )?;
        let score = |f: &EmFit| {
            f.log_likelihood
                .last()
                .copied()
                .unwrap_or(f64::NEG_INFINITY)
        };
        if best.as_ref().is_none_or(|b| score(&fit) > score(b)) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn fit_once(rows: &[&[f64]], k: usize, rng: &mut Rng, config: EmConfig) -> Result<EmFit> {
    let m = rows.len();
    let rows = rows.to_vec();
    let spread = global_variance(&rows);
    let mut mix = Mixture {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(&rows, k, rng),
        vars: vec![spread.clone(); k],
    };

    let mut resp = vec![vec![0.0; k]; m];
    let mut history = Vec::new();
    let mut reseeds = 0;
    for _ in 0..config.max_iterations {
        let ll = mix.e_step(&rows, &mut resp);
        let empty = mix.empty_clusters(&resp);
        if !empty.is_empty() && reseeds < config.max_reseeds {
            reseeds += 1;
            for &c in &empty {
                let far = (0..m)
                    .max_by(|&a, &b| {
                        let da = sq_dist(rows[a], &mix.means[argmax(&resp[a])]);
                        let db = sq_dist(rows[b], &mix.means[argmax(&resp[b])]);
                        da.total_cmp(&db)
                    })
                    .expect("nonempty points");
                log::debug!("reseeding empty cluster {c} at point {far}");
                mix.means[c] = rows[far].to_vec();
                mix.vars[c] = spread.clone();
                mix.weights[c] = 1.0 / k as f64;
            }
            let s: f64 = mix.weights.iter().sum();
            mix.weights.iter_mut().for_each(|w| *w /= s);
            history.clear();
            continue;
        }
        let done = history
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() < config.tolerance);
        history.push(ll);
        if done {
            break;
        }
        mix.m_step(&rows, &resp);
    }

    let d = rows[0].len();
    let logits = Tensor::row(mix.weights.iter().map(|w| w.max(1e-12).ln()).collect());
    let means = Tensor::new(k, d, mix.means.concat())?;
    let log_vars = Tensor::new(
        k,
        d,
        mix.vars
            .concat()
            .into_iter()
            .map(|v| v.ln().max(PRIOR_LOG_VAR_FLOOR))
            .collect(),
    )?;
    Ok(EmFit {
        prior: MoGPrior::new(logits, means, log_vars)?,
        log_likelihood: history,
        reseeds,
    })
}

/// Mixture prior fitted to latent means with the default EM settings.
pub fn init_prior_from_latents(points: &Tensor, k: usize, seed: u64) -> Result<MoGPrior> {
    Ok(fit_mog(points, k, seed, EmConfig::default())?.prior)
}
