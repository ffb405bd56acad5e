//! Proxy A-distance between two embedding clouds.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

const SPLIT_STREAM: u64 = 0x7061_6473;
const MIN_SAMPLES: usize = 10;
const STEPS: usize = 500;
const LEARNING_RATE: f64 = 0.1;
const L2: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub d_a: f64,
    pub train_error: f64,
    /// Held-out error ε of the domain classifier.
    pub test_error: f64,
    pub source_samples: usize,
    pub target_samples: usize,
}

/// Halves one cloud at random; the first half trains, the rest tests. The
/// shuffle is keyed on the cloud's contents rather than its label, so swapping
/// the two clouds gives the same split with flipped labels.
fn stratified_halves(cloud: &Tensor, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = cloud.rows();
    let bits: Vec<u64> = cloud.data().iter().map(|x| x.to_bits()).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(derive_seed(seed, &bits), &[SPLIT_STREAM]));
    let test = idx.split_off(n / 2);
    (idx, test)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Linear {
    w: Vec<f64>,
    b: f64,
}

impl Linear {
    fn logit(&self, x: &[f64]) -> f64 {
        self.b + self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Full-batch gradient descent on mean logistic loss plus `L2/2 ‖w‖²`.
    fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Linear {
        let dim = xs[0].len();
        let mut model = Linear {
            w: vec![0.0; dim],
            b: 0.0,
        };
        let n = xs.len() as f64;
        for _ in 0..STEPS {
            let mut gw: Vec<f64> = model.w.iter().map(|w| L2 * w).collect();
            let mut gb = 0.0;
            for (x, y) in xs.iter().zip(ys) {
                let r = (sigmoid(model.logit(x)) - y) / n;
                gb += r;
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g += r * xi;
                }
            }
            for (w, g) in model.w.iter_mut().zip(&gw) {
                *w -= LEARNING_RATE * g;
            }
            model.b -= LEARNING_RATE * gb;
        }
        model
    }

    fn error(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let wrong = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| (self.logit(x) > 0.0) != (y > 0.5))
            .count();
        wrong as f64 / xs.len() as f64
    }
}

/// `d_A = 2 (1 - 2ε)` where ε is the held-out error of a logistic classifier
/// told to separate source rows (label 0) from target rows (label 1).
///
/// Features are standardized with the training half's mean and deviation, so
/// the fixed step size behaves the same at any embedding scale.
pub fn proxy_a_distance(source: &Tensor, target: &Tensor, seed: u64) -> Result<DiscrepancyReport> {
    if source.cols() != target.cols() {
        return Err(Error::ShapeMismatch(format!(
            "embeddings of width {} and {}",
            source.cols(),
            target.cols()
        )));
    }
    for (name, t) in [("source", source), ("target", target)] {
        if t.rows() < MIN_SAMPLES {
            return Err(Error::InsufficientData(format!(
                "{name} has {} embeddings, at least {MIN_SAMPLES} are needed",
                t.rows()
            )));
        }
    }
    if !(source.all_finite() && target.all_finite()) {
        return Err(Error::Numeric("embeddings must be finite".into()));
    }
    let (s_train, s_test) = stratified_halves(source, seed);
    let (t_train, t_test) = stratified_halves(target, seed);
    let gather = |s: &[usize], t: &[usize]| {
        let xs: Vec<Vec<f64>> = s
            .iter()
            .map(|&i| source.row_slice(i).to_vec())
            .chain(t.iter().map(|&i| target.row_slice(i).to_vec()))
            .collect();
        let ys: Vec<f64> = std::iter::repeat_n(0.0, s.len())
            .chain(std::iter::repeat_n(1.0, t.len()))
            .collect();
        (xs, ys)
    };
    let (mut train_x, train_y) = gather(&s_train, &t_train);
    let (mut test_x, test_y) = gather(&s_test, &t_test);

    let dim = source.cols();
    let n = train_x.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|d| train_x.iter().map(|x| x[d]).sum::<f64>() / n)
        .collect();
    let scale: Vec<f64> = (0..dim)
        .map(|d| {
            let var = train_x
                .iter()
                .map(|x| (x[d] - mean[d]).powi(2))
                .sum::<f64>()
                / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for x in train_x.iter_mut().chain(test_x.iter_mut()) {
        for d in 0..dim {
            x[d] = (x[d] - mean[d]) / scale[d];
        }
    }

    let model = Linear::fit(&train_x, &train_y);
    let test_error = model.error(&test_x, &test_y);
    Ok(DiscrepancyReport {
        d_a: 2.0 * (1.0 - 2.0 * test_error),
        train_error: model.error(&train_x, &train_y),
        test_error,
        source_samples: source.rows(),
        target_samples: target.rows(),
    })
}
