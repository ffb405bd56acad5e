use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::vae::{MoGPrior, Posterior, PriorVars, PRIOR_LOG_VAR_FLOOR};

/// Squared 2-Wasserstein distance between axis-aligned Gaussians:
/// `‖μ₁ - μ₂‖² + ‖σ₁ - σ₂‖²`.
pub fn gaussian_w2(mu1: &[f64], sigma1: &[f64], mu2: &[f64], sigma2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if sigma1.len() != d || mu2.len() != d || sigma2.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "gaussians of dimension {d}, {}, {}, {}",
            sigma1.len(),
            mu2.len(),
            sigma2.len()
        )));
    }
    if sigma1.iter().chain(sigma2).any(|&s| s <= 0.0 || s.is_nan()) {
        return Err(Error::contract("standard deviations must be positive"));
    }
    let mean: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum();
    let spread: f64 = sigma1
        .iter()
        .zip(sigma2)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(mean + spread)
}

/// `K₁ x K₂` matrix of [`gaussian_w2`] between the components of two priors.
pub fn prior_distances(a: &MoGPrior, b: &MoGPrior) -> Result<Tensor> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "priors of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let (sa, sb) = (a.std_devs(), b.std_devs());
    let mut out = Tensor::zeros(a.k(), b.k());
    for i in 0..a.k() {
        for j in 0..b.k() {
            let d = gaussian_w2(
                a.means.row_slice(i),
                sa.row_slice(i),
                b.means.row_slice(j),
                sb.row_slice(j),
            )?;
            out.set(i, j, d);
        }
    }
    Ok(out)
}

/// Local alignment: the summed distance between the posteriors of rows that
/// are the same person in both domains.
pub fn local_alignment_loss(
    g: &mut Graph,
    source: &Posterior,
    target: &Posterior,
    aligned: &[bool],
) -> Result<Var> {
    let [n, d] = g.shape(source.mu);
    if g.shape(target.mu) != [n, d] || aligned.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "alignment of {:?} and {:?} posteriors with a mask of {}",
            [n, d],
            g.shape(target.mu),
            aligned.len()
        )));
    }
    if !aligned.iter().any(|&a| a) {
        return Ok(g.scalar(0.0));
    }
    let mask = g.constant(Tensor::column(
        aligned.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect(),
    ));
    let dmu = g.sub(source.mu, target.mu)?;
    let dmu = g.square(dmu)?;
    let sigma = |g: &mut Graph, lv: Var| -> Result<Var> {
        let half = g.scale(lv, 0.5)?;
        g.exp(half)
    };
    let ss = sigma(g, source.log_var)?;
    let st = sigma(g, target.log_var)?;
    let dsig = g.sub(ss, st)?;
    let dsig = g.square(dsig)?;
    let per_dim = g.add(dmu, dsig)?;
    let per_row = g.sum_axis(per_dim, Axis::Cols)?;
    let masked = g.mul(per_row, mask)?;
    g.sum(masked)
}

/// Global alignment: `Σ_ij ψ_ij d_W(source component i, target component j)`
/// with the coupling held constant.
pub fn global_alignment_loss(
    g: &mut Graph,
    psi: &Tensor,
    source: &PriorVars,
    target: &PriorVars,
) -> Result<Var> {
    let [ks, d] = g.shape(source.means);
    let [kt, d2] = g.shape(target.means);
    if d != d2 || psi.shape() != [ks, kt] {
        return Err(Error::ShapeMismatch(format!(
            "coupling {:?} between priors of shape {:?} and {:?}",
            psi.shape(),
            [ks, d],
            [kt, d2]
        )));
    }
    let sigma = |g: &mut Graph, lv: Var| -> Result<Var> {
        let lv = g.clamp(lv, PRIOR_LOG_VAR_FLOOR, f64::INFINITY)?;
        let half = g.scale(lv, 0.5)?;
        g.exp(half)
    };
    let ones = g.constant(Tensor::full(kt, d, 1.0));
    let mean_part = g.weighted_sq_dist(source.means, target.means, ones)?;
    let ss = sigma(g, source.log_vars)?;
    let st = sigma(g, target.log_vars)?;
    let spread_part = g.weighted_sq_dist(ss, st, ones)?;
    let dist = g.add(mean_part, spread_part)?;
    let coupling = g.constant(psi.clone());
    let weighted = g.mul(dist, coupling)?;
    g.sum(weighted)
}
