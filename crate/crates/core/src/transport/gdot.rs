//! Entropic Gromov-Wasserstein coupling between the components of two mixture priors.

use std::io::Write;

use rand::Rng as _;

use super::w2::prior_distances;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::vae::MoGPrior;

const JITTER_STREAM: u64 = 0x6a69_7474;
const NEWTON_ITERATIONS: usize = 1000;

/// `M[i][j][i'][j'] = (dS[i][i'] - dT[j][j'])²`, stored as the two
/// within-domain distance matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTensor {
    source: Tensor,
    target: Tensor,
}

impl CostTensor {
    pub fn new(source: Tensor, target: Tensor) -> Result<Self> {
        let k = source.rows();
        if source.shape() != [k, k] || target.shape() != [k, k] {
            return Err(Error::ShapeMismatch(format!(
                "distance matrices {:?} and {:?} must be square and equal-sized",
                source.shape(),
                target.shape()
            )));
        }
        if !(source.all_finite() && target.all_finite()) {
            return Err(Error::Numeric("distance matrices must be finite".into()));
        }
        Ok(CostTensor { source, target })
    }

    /// Within-domain component distances of each prior.
    pub fn from_priors(source: &MoGPrior, target: &MoGPrior) -> Result<Self> {
        if source.k() != target.k() {
            return Err(Error::ShapeMismatch(format!(
                "priors with {} and {} components",
                source.k(),
                target.k()
            )));
        }
        CostTensor::new(
            prior_distances(source, source)?,
            prior_distances(target, target)?,
        )
    }

    pub fn k(&self) -> usize {
        self.source.rows()
    }

    pub fn source_distances(&self) -> &Tensor {
        &self.source
    }

    pub fn target_distances(&self) -> &Tensor {
        &self.target
    }

    pub fn entry(&self, i: usize, j: usize, i2: usize, j2: usize) -> f64 {
        (self.source.get(i, i2) - self.target.get(j, j2)).powi(2)
    }

    /// All `K⁴` entries, index `((i K + j) K + i') K + j'`.
    pub fn dense(&self) -> Vec<f64> {
        let k = self.k();
        let mut out = Vec::with_capacity(k.pow(4));
        for i in 0..k {
            for j in 0..k {
                for i2 in 0..k {
                    for j2 in 0..k {
                        out.push(self.entry(i, j, i2, j2));
                    }
                }
            }
        }
        out
    }

    /// `[M ⊗ ψ]_ij = Σ_{i'j'} M[i][j][i'][j'] ψ_i'j'` in `O(K³)`, expanding the square:
    /// `(dS² r)_i + (dT² c)_j - 2 (dS ψ dTᵀ)_ij` with `r`, `c` the marginals of ψ.
    pub fn contract(&self, psi: &Tensor) -> Tensor {
        let k = self.k();
        let (ds, dt) = (&self.source, &self.target);
        let rows: Vec<f64> = (0..k).map(|i| psi.row_slice(i).iter().sum()).collect();
        let cols: Vec<f64> = (0..k)
            .map(|j| (0..k).map(|i| psi.get(i, j)).sum())
            .collect();
        let a: Vec<f64> = (0..k)
            .map(|i| (0..k).map(|i2| ds.get(i, i2).powi(2) * rows[i2]).sum())
            .collect();
        let b: Vec<f64> = (0..k)
            .map(|j| (0..k).map(|j2| dt.get(j, j2).powi(2) * cols[j2]).sum())
            .collect();
        // dS ψ, then (dS ψ) dTᵀ.
        let mut left = Tensor::zeros(k, k);
        for i in 0..k {
            for j2 in 0..k {
                left.set(
                    i,
                    j2,
                    (0..k).map(|i2| ds.get(i, i2) * psi.get(i2, j2)).sum(),
                );
            }
        }
        let mut out = Tensor::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let cross: f64 = (0..k).map(|j2| left.get(i, j2) * dt.get(j, j2)).sum();
                out.set(i, j, a[i] + b[j] - 2.0 * cross);
            }
        }
        out
    }

    /// Same as [`Self::contract`], summing the dense tensor directly.
    pub fn contract_dense(&self, psi: &Tensor) -> Tensor {
        let k = self.k();
        let m = self.dense();
        let mut out = Tensor::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let base = (i * k + j) * k * k;
                let s: f64 = (0..k * k).map(|q| m[base + q] * psi.data()[q]).sum();
                out.set(i, j, s);
            }
        }
        out
    }
}

/// `⟨M ⊗ ψ, ψ⟩`, the quadratic transport cost without entropy.
pub fn gw_objective(psi: &Tensor, cost: &CostTensor) -> f64 {
    cost.contract(psi)
        .data()
        .iter()
        .zip(psi.data())
        .map(|(g, p)| g * p)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Largest allowed marginal violation (max norm).
    pub tolerance: f64,
    /// Outer loop stops once no coupling entry moves by more than this.
    pub outer_tolerance: f64,
    /// Inner-iteration budget of the last scaling, which must reach `tolerance`.
    pub final_iterations: usize,
    /// Outer rounds first run at a temperature that starts at ten times the
    /// spread of the initial `G` and shrinks by this factor per round until it
    /// reaches `epsilon`; the `outer_iterations` rounds at `epsilon` follow.
    /// `0` starts directly at `epsilon`.
    pub temperature_decay: f64,
    pub jitter_seed: u64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 0.1,
            outer_iterations: 10,
            inner_iterations: 50,
            tolerance: 1e-6,
            outer_tolerance: 1e-7,
            final_iterations: 100_000,
            temperature_decay: 0.8,
            jitter_seed: 0,
        }
    }
}

/// Result of one log-domain scaling: `ψ = diag(u) H diag(v)`.
#[derive(Debug, Clone)]
pub struct Scaling {
    pub log_u: Vec<f64>,
    pub log_v: Vec<f64>,
    pub iterations: usize,
    /// Max-norm row-marginal violation after the last update.
    pub violation: f64,
    /// L1 row-marginal violation after each iteration.
    pub l1_history: Vec<f64>,
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn coupling_from(log_kernel: &Tensor, log_u: &[f64], log_v: &[f64]) -> Tensor {
    let k = log_u.len();
    let mut psi = Tensor::zeros(k, log_v.len());
    for i in 0..k {
        for j in 0..log_v.len() {
            psi.set(i, j, (log_u[i] + log_kernel.get(i, j) + log_v[j]).exp());
        }
    }
    psi
}

/// Log-domain Sinkhorn scaling of `H = exp(log_kernel)` onto marginals `a`, `b`.
///
/// Each iteration updates `u` and then `v`, so column marginals are exact and
/// the row-marginal violation measures progress. Stops once that violation is
/// at most `tol` or after `max_iterations`.
pub fn sinkhorn_scaling(
    log_kernel: &Tensor,
    a: &[f64],
    b: &[f64],
    warm: Option<(&[f64], &[f64])>,
    max_iterations: usize,
    tol: f64,
) -> Scaling {
    let (n, m) = (a.len(), b.len());
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let (mut log_u, mut log_v) = match warm {
        Some((u, v)) => (u.to_vec(), v.to_vec()),
        None => (vec![0.0; n], vec![0.0; m]),
    };
    let mut l1_history = Vec::new();
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iterations {
        for i in 0..n {
            log_u[i] = log_a[i] - log_sum_exp((0..m).map(|j| log_kernel.get(i, j) + log_v[j]));
        }
        for j in 0..m {
            log_v[j] = log_b[j] - log_sum_exp((0..n).map(|i| log_kernel.get(i, j) + log_u[i]));
        }
        iterations += 1;
        let mut l1 = 0.0;
        violation = 0.0;
        for i in 0..n {
            let row =
                (log_u[i] + log_sum_exp((0..m).map(|j| log_kernel.get(i, j) + log_v[j]))).exp();
            let err = (row - a[i]).abs();
            l1 += err;
            violation = f64::max(violation, err);
        }
        l1_history.push(l1);
        if violation <= tol {
            break;
        }
    }
    Scaling {
        log_u,
        log_v,
        iterations,
        violation,
        l1_history,
    }
}

/// In-place Cholesky solve of the symmetric positive definite system `m x = rhs`
/// (`m` row-major, `n x n`). Returns `None` when `m` is not numerically positive definite.
fn cholesky_solve(mut m: Vec<f64>, mut rhs: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = m[j * n + j];
        for k in 0..j {
            d -= m[j * n + k] * m[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        m[j * n + j] = d;
        for i in j + 1..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= m[i * n + k] * m[j * n + k];
            }
            m[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        for k in 0..i {
            rhs[i] -= m[i * n + k] * rhs[k];
        }
        rhs[i] /= m[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            rhs[i] -= m[k * n + i] * rhs[k];
        }
        rhs[i] /= m[i * n + i];
    }
    Some(rhs)
}

/// Damped Newton ascent on the dual of the scaling problem,
/// `Σ a log u + Σ b log v - Σ ψ`, with the last `log v` pinned to remove the
/// shift invariance. Sinkhorn converges at a rate set by the kernel's dynamic
/// range, which is hopeless when `G / ε` spans thousands.
pub fn newton_scaling(
    log_kernel: &Tensor,
    a: &[f64],
    b: &[f64],
    warm: (&[f64], &[f64]),
    max_iterations: usize,
    tol: f64,
) -> Scaling {
    let (n, m) = (a.len(), b.len());
    let (mut log_u, mut log_v) = (warm.0.to_vec(), warm.1.to_vec());
    let dual = |u: &[f64], v: &[f64]| {
        let mass: f64 = coupling_from(log_kernel, u, v).data().iter().sum();
        a.iter().zip(u).map(|(p, x)| p * x).sum::<f64>()
            + b.iter().zip(v).map(|(p, y)| p * y).sum::<f64>()
            - mass
    };
    let residual = |psi: &Tensor| {
        let rows: Vec<f64> = (0..n)
            .map(|i| a[i] - psi.row_slice(i).iter().sum::<f64>())
            .collect();
        let cols: Vec<f64> = (0..m)
            .map(|j| b[j] - (0..n).map(|i| psi.get(i, j)).sum::<f64>())
            .collect();
        (rows, cols)
    };
    let mut l1_history = Vec::new();
    let mut iterations = 0;
    let mut violation;
    // Levenberg damping; grows when underflowed entries leave the Hessian
    // singular or a step overshoots.
    let mut damping = 0.0;
    loop {
        let psi = coupling_from(log_kernel, &log_u, &log_v);
        let (dr, dc) = residual(&psi);
        violation = dr.iter().chain(&dc).fold(0.0f64, |w, x| w.max(x.abs()));
        if violation <= tol || iterations >= max_iterations {
            break;
        }
        iterations += 1;
        // Hessian of the negated dual over (log u, log v[..m-1]).
        let dim = n + m - 1;
        let mut h = vec![0.0; dim * dim];
        for i in 0..n {
            h[i * dim + i] = a[i] - dr[i];
            for j in 0..m - 1 {
                h[i * dim + n + j] = psi.get(i, j);
                h[(n + j) * dim + i] = psi.get(i, j);
            }
        }
        for j in 0..m - 1 {
            h[(n + j) * dim + n + j] = b[j] - dc[j];
        }
        for d in 0..dim {
            h[d * dim + d] += damping;
        }
        let rhs: Vec<f64> = dr.iter().chain(&dc[..m - 1]).copied().collect();
        let candidate = cholesky_solve(h, rhs, dim).map(|step| {
            let u: Vec<f64> = (0..n).map(|i| log_u[i] + step[i]).collect();
            let v: Vec<f64> = (0..m)
                .map(|j| log_v[j] + if j < m - 1 { step[n + j] } else { 0.0 })
                .collect();
            (u, v)
        });
        match candidate {
            Some((u, v)) if dual(&u, &v) > dual(&log_u, &log_v) => {
                log_u = u;
                log_v = v;
                damping = if damping < 1e-12 { 0.0 } else { damping * 0.1 };
            }
            _ => damping = (damping * 10.0).max(1e-12),
        }
        l1_history.push(dr.iter().map(|x| x.abs()).sum());
    }
    Scaling {
        log_u,
        log_v,
        iterations,
        violation,
        l1_history,
    }
}

fn spread(g: &Tensor) -> (f64, f64) {
    g.data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Scaling of `exp(-G / ε)` reached through a geometric schedule of larger
/// temperatures, starting at the spread of `G` and halving down to `ε`.
/// Each stage warm-starts the next; a cold start at small `ε` would need
/// on the order of `spread / ε` iterations to move the potentials into place.
/// Returns the log-kernel at `ε` and the scaling run on it.
fn annealed_scaling(
    g: &Tensor,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iterations: usize,
    tol: f64,
) -> (Tensor, Scaling) {
    let (lo, hi) = spread(g);
    // Potentials in cost units: log u = f / ε, log v = h / ε.
    let mut f = vec![0.0; a.len()];
    let mut h = vec![0.0; b.len()];
    let mut eps = (hi - lo).max(epsilon);
    while eps > epsilon {
        let log_kernel = g.map(|x| -x / eps);
        let warm: (Vec<f64>, Vec<f64>) = (
            f.iter().map(|x| x / eps).collect(),
            h.iter().map(|x| x / eps).collect(),
        );
        let s = sinkhorn_scaling(
            &log_kernel,
            a,
            b,
            Some((&warm.0, &warm.1)),
            max_iterations,
            tol,
        );
        f = s.log_u.iter().map(|x| x * eps).collect();
        h = s.log_v.iter().map(|x| x * eps).collect();
        eps = (eps * 0.5).max(epsilon);
    }
    let log_kernel = g.map(|x| -x / epsilon);
    let warm: (Vec<f64>, Vec<f64>) = (
        f.iter().map(|x| x / epsilon).collect(),
        h.iter().map(|x| x / epsilon).collect(),
    );
    let s = sinkhorn_scaling(
        &log_kernel,
        a,
        b,
        Some((&warm.0, &warm.1)),
        max_iterations,
        tol,
    );
    (log_kernel, s)
}

/// Solved coupling and solver diagnostics.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub psi: Tensor,
    /// Max-norm violation of the row and column marginals.
    pub violation: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

fn check_simplex(p: &[f64], name: &str) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|&x| x <= 0.0 || !x.is_finite()) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "{name} must be a strictly positive probability vector (sum {s})"
        )));
    }
    Ok(())
}

fn marginal_violation(psi: &Tensor, a: &[f64], b: &[f64]) -> f64 {
    let k = a.len();
    let mut worst = 0.0f64;
    for i in 0..k {
        worst = worst.max((psi.row_slice(i).iter().sum::<f64>() - a[i]).abs());
    }
    for j in 0..b.len() {
        worst = worst.max(((0..k).map(|i| psi.get(i, j)).sum::<f64>() - b[j]).abs());
    }
    worst
}

/// Starting coupling: the product measure with multiplicative jitter, scaled
/// back onto the marginals. The exact product is a stationary point of the
/// outer iteration for symmetric geometries.
fn initial_coupling(a: &[f64], b: &[f64], seed: u64) -> Tensor {
    let mut rng = rng_from(seed, &[JITTER_STREAM]);
    let mut psi = Tensor::zeros(a.len(), b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            psi.set(i, j, a[i] * b[j] * rng.random_range(0.99..=1.01));
        }
    }
    let log_kernel = psi.map(f64::ln);
    let s = sinkhorn_scaling(&log_kernel, a, b, None, 1000, 1e-12);
    coupling_from(&log_kernel, &s.log_u, &s.log_v)
}

/// Entropic Gromov-Wasserstein coupling with marginals `pi_s`, `pi_t`.
///
/// Each outer round forms `G = M ⊗ ψ`, the kernel `H = exp(-G / ε)` in log
/// space, and rescales it onto the marginals with Sinkhorn iterations
/// (see [`annealed_scaling`]). If the last round stopped short of the
/// tolerance, a Newton solve of the scaling dual finishes it, with plain
/// scaling up to `final_iterations` as the fallback.
pub fn gdot_sinkhorn(
    cost: &CostTensor,
    pi_s: &[f64],
    pi_t: &[f64],
    config: &SinkhornConfig,
) -> Result<Coupling> {
    let k = cost.k();
    if pi_s.len() != k || pi_t.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "marginals of length {} and {} for {k} components",
            pi_s.len(),
            pi_t.len()
        )));
    }
    check_simplex(pi_s, "source marginal")?;
    check_simplex(pi_t, "target marginal")?;
    if !(config.epsilon > 0.0 && config.epsilon.is_finite()) {
        return Err(Error::contract(format!(
            "epsilon must be positive, got {}",
            config.epsilon
        )));
    }
    if config.outer_iterations == 0 {
        return Err(Error::contract("at least one outer iteration is required"));
    }
    if !(0.0..1.0).contains(&config.temperature_decay) {
        return Err(Error::contract(format!(
            "temperature decay must lie in [0, 1), got {}",
            config.temperature_decay
        )));
    }

    let mut psi = initial_coupling(pi_s, pi_t, config.jitter_seed);
    let mut inner_total = 0;
    // Large temperatures let the coupling settle on the dominant structure of
    // both geometries before small ones lock in a permutation.
    if config.temperature_decay > 0.0 {
        let g = cost.contract(&psi);
        let (lo, hi) = spread(&g);
        let mut temperature = 10.0 * (hi - lo);
        while temperature > config.epsilon {
            let g = cost.contract(&psi);
            let (kernel, s) = annealed_scaling(
                &g,
                pi_s,
                pi_t,
                temperature,
                config.inner_iterations,
                config.tolerance,
            );
            inner_total += s.iterations;
            psi = coupling_from(&kernel, &s.log_u, &s.log_v);
            temperature *= config.temperature_decay;
        }
    }
    let mut last: Option<Scaling> = None;
    let mut outer = 0;
    let mut log_kernel = Tensor::zeros(k, k);
    while outer < config.outer_iterations {
        outer += 1;
        let g = cost.contract(&psi);
        let (kernel, s) = annealed_scaling(
            &g,
            pi_s,
            pi_t,
            config.epsilon,
            config.inner_iterations,
            config.tolerance,
        );
        log_kernel = kernel;
        inner_total += s.iterations;
        let next = coupling_from(&log_kernel, &s.log_u, &s.log_v);
        let moved = next.max_abs_diff(&psi);
        psi = next;
        last = Some(s);
        if moved <= config.outer_tolerance {
            break;
        }
    }

    let mut violation = marginal_violation(&psi, pi_s, pi_t);
    if violation > config.tolerance {
        let prev = last.expect("at least one outer round");
        let warm = (prev.log_u.as_slice(), prev.log_v.as_slice());
        let s = newton_scaling(
            &log_kernel,
            pi_s,
            pi_t,
            warm,
            NEWTON_ITERATIONS,
            config.tolerance,
        );
        inner_total += s.iterations;
        psi = coupling_from(&log_kernel, &s.log_u, &s.log_v);
        violation = marginal_violation(&psi, pi_s, pi_t);
        if violation > config.tolerance {
            let s = sinkhorn_scaling(
                &log_kernel,
                pi_s,
                pi_t,
                Some(warm),
                config.final_iterations,
                config.tolerance,
            );
            inner_total += s.iterations;
            psi = coupling_from(&log_kernel, &s.log_u, &s.log_v);
            violation = marginal_violation(&psi, pi_s, pi_t);
        }
    }
    if violation > config.tolerance || !psi.all_finite() {
        return Err(Error::Numeric(format!(
            "coupling marginals still off by {violation:e} after {inner_total} scaling iterations"
        )));
    }
    Ok(Coupling {
        psi,
        violation,
        outer_iterations: outer,
        inner_iterations: inner_total,
    })
}

/// Writes ψ as TSV, one line per source component.
pub fn write_coupling_tsv<W: Write>(psi: &Tensor, mut out: W) -> Result<()> {
    for i in 0..psi.rows() {
        let line: Vec<String> = psi.row_slice(i).iter().map(|x| format!("{x:e}")).collect();
        writeln!(out, "{}", line.join("\t"))?;
    }
    Ok(())
}
