use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;
use vdea::autodiff::{grad_check, Graph, Tensor, Var};
use vdea::rng::{rng_from, Rng};
use vdea::transport::{
    gaussian_w2, gdot_sinkhorn, global_alignment_loss, gw_objective, local_alignment_loss,
    sinkhorn_scaling, CostTensor, SinkhornConfig,
};
use vdea::vae::{MoGPrior, Posterior, PriorVars};

fn simplex(k: usize, rng: &mut Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Pairwise distances of `k` random points, so the matrix is a genuine geometry.
fn geometry(k: usize, rng: &mut Rng) -> Tensor {
    let pts: Vec<[f64; 3]> = (0..k)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let mut d = Tensor::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            d.set(i, j, (0..3).map(|c| (pts[i][c] - pts[j][c]).powi(2)).sum());
        }
    }
    d
}

fn marginals_of(psi: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let k = psi.rows();
    let rows = (0..k).map(|i| psi.row_slice(i).iter().sum()).collect();
    let cols = (0..psi.cols())
        .map(|j| (0..k).map(|i| psi.get(i, j)).sum())
        .collect();
    (rows, cols)
}

#[test]
fn sinkhorn_output_is_feasible_on_random_instances() {
    for &k in &[2usize, 5, 10, 30] {
        for seed in 0..100u64 {
            let mut rng = rng_from(seed, &[k as u64]);
            let cost = CostTensor::new(geometry(k, &mut rng), geometry(k, &mut rng)).unwrap();
            let (ps, pt) = (simplex(k, &mut rng), simplex(k, &mut rng));
            let config = SinkhornConfig {
                epsilon: rng.random_range(0.01..=1.0),
                jitter_seed: seed,
                ..SinkhornConfig::default()
            };
            let c = gdot_sinkhorn(&cost, &ps, &pt, &config).unwrap();
            let (rows, cols) = marginals_of(&c.psi);
            for i in 0..k {
                assert!((rows[i] - ps[i]).abs() <= 1e-6, "K={k} seed={seed}");
                assert!((cols[i] - pt[i]).abs() <= 1e-6, "K={k} seed={seed}");
            }
            assert!(c.psi.data().iter().all(|&x| x >= 0.0));
        }
    }
}

#[test]
fn inner_marginal_violation_never_increases() {
    for seed in 0..50u64 {
        let mut rng = rng_from(seed, &[77]);
        let k = rng.random_range(2..12);
        let log_kernel = Tensor::new(
            k,
            k,
            (0..k * k).map(|_| rng.random_range(-30.0..0.0)).collect(),
        )
        .unwrap();
        let (a, b) = (simplex(k, &mut rng), simplex(k, &mut rng));
        let s = sinkhorn_scaling(&log_kernel, &a, &b, None, 200, 0.0);
        for w in s.l1_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "seed {seed}: {:?}", w);
        }
    }
}

const SMALL_EPSILON: f64 = 1e-3;

/// Three points with distinct pairwise distances, and the same geometry
/// relabeled by `rho`. Distinct means that confusing two distances costs at
/// least 10ε, so the entropic optimum is not a blend of two permutations.
fn planted(seed: u64) -> (CostTensor, Vec<usize>) {
    let mut rng = rng_from(seed, &[3]);
    loop {
        let ds = geometry(3, &mut rng);
        let (a, b, c) = (ds.get(0, 1), ds.get(0, 2), ds.get(1, 2));
        let gap = (a - b).abs().min((a - c).abs()).min((b - c).abs());
        if gap * gap < 10.0 * SMALL_EPSILON {
            continue;
        }
        let mut rho = vec![0, 1, 2];
        rho.shuffle(&mut rng);
        // Target component rho[i] is source component i.
        let mut dt = Tensor::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                dt.set(rho[i], rho[j], ds.get(i, j));
            }
        }
        return (CostTensor::new(ds, dt).unwrap(), rho);
    }
}

fn permutations3() -> Vec<[usize; 3]> {
    vec![
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ]
}

fn best_permutation_objective(cost: &CostTensor) -> f64 {
    permutations3()
        .into_iter()
        .map(|p| {
            let mut psi = Tensor::zeros(3, 3);
            for i in 0..3 {
                psi.set(i, p[i], 1.0 / 3.0);
            }
            gw_objective(&psi, cost)
        })
        .fold(f64::INFINITY, f64::min)
}

fn row_argmax(psi: &Tensor) -> Vec<usize> {
    (0..psi.rows())
        .map(|i| {
            let r = psi.row_slice(i);
            (0..r.len()).fold(0, |best, j| if r[j] > r[best] { j } else { best })
        })
        .collect()
}

#[test]
fn planted_permutation_is_recovered() {
    let uniform = [1.0 / 3.0; 3];
    let mut recovered = 0;
    for seed in 0..50u64 {
        let (cost, rho) = planted(seed);
        let config = SinkhornConfig {
            epsilon: SMALL_EPSILON,
            jitter_seed: seed,
            ..SinkhornConfig::default()
        };
        let c = gdot_sinkhorn(&cost, &uniform, &uniform, &config).unwrap();
        if row_argmax(&c.psi) == rho {
            recovered += 1;
        }
        let best = best_permutation_objective(&cost);
        let got = gw_objective(&c.psi, &cost);
        assert!(
            got <= best * 1.01 + 1e-12,
            "seed {seed}: {got} vs best permutation {best}"
        );
    }
    assert!(recovered >= 48, "recovered {recovered} of 50");
}

#[test]
fn argmax_structure_survives_rescaling() {
    let uniform = [1.0 / 3.0; 3];
    for seed in 0..10u64 {
        let (cost, _) = planted(seed);
        let scale = 1.7f64;
        // Latent coordinates times c scale every distance by c² and the cost by c⁴.
        let scaled = CostTensor::new(
            cost.source_distances().map(|x| x * scale * scale),
            cost.target_distances().map(|x| x * scale * scale),
        )
        .unwrap();
        for (a, b) in cost.dense().iter().zip(scaled.dense()) {
            assert!((b - a * scale.powi(4)).abs() <= 1e-12 * b.max(1.0));
        }
        let base = SinkhornConfig {
            epsilon: 0.05,
            jitter_seed: seed,
            ..SinkhornConfig::default()
        };
        let a = gdot_sinkhorn(&cost, &uniform, &uniform, &base).unwrap();
        let rescaled = SinkhornConfig {
            epsilon: 0.05 * scale.powi(4),
            ..base
        };
        let b = gdot_sinkhorn(&scaled, &uniform, &uniform, &rescaled).unwrap();
        assert_eq!(row_argmax(&a.psi), row_argmax(&b.psi));
    }
}

#[test]
fn contraction_matches_dense_sum_for_random_sizes() {
    for seed in 0..30u64 {
        let mut rng = rng_from(seed, &[5]);
        let k = rng.random_range(1..9);
        let cost = CostTensor::new(geometry(k, &mut rng), geometry(k, &mut rng)).unwrap();
        let psi = Tensor::new(k, k, (0..k * k).map(|_| rng.random::<f64>()).collect()).unwrap();
        assert!(cost.contract(&psi).max_abs_diff(&cost.contract_dense(&psi)) <= 1e-10);
    }
}

#[test]
fn cost_tensor_invariants() {
    let mut rng = rng_from(1, &[]);
    let cost = CostTensor::new(geometry(4, &mut rng), geometry(4, &mut rng)).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(cost.entry(i, j, i, j), 0.0);
            for i2 in 0..4 {
                for j2 in 0..4 {
                    assert_eq!(cost.entry(i, j, i2, j2), cost.entry(i2, j2, i, j));
                    assert!(cost.entry(i, j, i2, j2) >= 0.0);
                }
            }
        }
    }
}

fn random_prior(k: usize, d: usize, seed: u64) -> MoGPrior {
    let mut rng = rng_from(seed, &[11]);
    let mut t = |r: usize, c: usize, s: f64| {
        Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-s..s)).collect()).unwrap()
    };
    MoGPrior::new(t(1, k, 1.0), t(k, d, 2.0), t(k, d, 0.8)).unwrap()
}

fn bind(g: &mut Graph, p: &MoGPrior, trainable: bool) -> PriorVars {
    let mut leaf = |t: &Tensor| {
        if trainable {
            g.param(t.clone())
        } else {
            g.constant(t.clone())
        }
    };
    PriorVars {
        logits: leaf(&p.logits),
        means: leaf(&p.means),
        log_vars: leaf(&p.log_vars),
    }
}

#[test]
fn global_loss_equals_termwise_double_sum() {
    for seed in 0..5u64 {
        let (ps, pt) = (random_prior(3, 4, seed), random_prior(3, 4, seed + 100));
        let mut rng = rng_from(seed, &[12]);
        let psi = Tensor::new(3, 3, (0..9).map(|_| rng.random::<f64>()).collect()).unwrap();
        let mut g = Graph::new();
        let (vs, vt) = (bind(&mut g, &ps, false), bind(&mut g, &pt, false));
        let l = global_alignment_loss(&mut g, &psi, &vs, &vt).unwrap();
        let (ss, st) = (ps.std_devs(), pt.std_devs());
        let mut expected = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = gaussian_w2(
                    ps.means.row_slice(i),
                    ss.row_slice(i),
                    pt.means.row_slice(j),
                    st.row_slice(j),
                )
                .unwrap();
                expected += psi.get(i, j) * d;
            }
        }
        assert!((g.value(l).item() - expected).abs() < 1e-12 * expected.max(1.0));
    }
}

#[test]
fn global_loss_is_linear_in_each_coupling_entry() {
    let (ps, pt) = (random_prior(3, 2, 4), random_prior(3, 2, 5));
    let psi = Tensor::full(3, 3, 1.0 / 9.0);
    let value = |psi: &Tensor| {
        let mut g = Graph::new();
        let (vs, vt) = (bind(&mut g, &ps, false), bind(&mut g, &pt, false));
        let l = global_alignment_loss(&mut g, psi, &vs, &vt).unwrap();
        g.value(l).item()
    };
    let base = value(&psi);
    let mut zeroed = psi.clone();
    zeroed.set(1, 2, 0.0);
    let mut doubled = psi.clone();
    doubled.set(1, 2, 2.0 / 9.0);
    let term = base - value(&zeroed);
    assert!((value(&doubled) - (base + term)).abs() < 1e-12);
}

#[test]
fn global_loss_gradient_with_fixed_coupling() {
    let (ps, pt) = (random_prior(2, 4, 7), random_prior(2, 4, 8));
    let cost = CostTensor::from_priors(&ps, &pt).unwrap();
    let psi = gdot_sinkhorn(
        &cost,
        &ps.weights(),
        &pt.weights(),
        &SinkhornConfig::default(),
    )
    .unwrap()
    .psi;
    let params = vec![
        ps.means.clone(),
        ps.log_vars.clone(),
        pt.means.clone(),
        pt.log_vars.clone(),
    ];
    let err = grad_check(
        |g: &mut Graph, v: &[Var]| {
            let logits = g.constant(Tensor::zeros(1, 2));
            let s = PriorVars {
                logits,
                means: v[0],
                log_vars: v[1],
            };
            let t = PriorVars {
                logits,
                means: v[2],
                log_vars: v[3],
            };
            global_alignment_loss(g, &psi, &s, &t)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn local_loss_gradient() {
    let mut rng = rng_from(2, &[]);
    let mut t = |r: usize, c: usize| {
        Tensor::new(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    };
    let params = vec![t(4, 3), t(4, 3), t(4, 3), t(4, 3)];
    let mask = [true, false, true, true];
    let err = grad_check(
        |g: &mut Graph, v: &[Var]| {
            let s = Posterior {
                mu: v[0],
                log_var: v[1],
            };
            let t = Posterior {
                mu: v[2],
                log_var: v[3],
            };
            local_alignment_loss(g, &s, &t, &mask)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

proptest! {
    #[test]
    fn w2_is_a_symmetric_nonnegative_distance(
        mu1 in prop::collection::vec(-5.0f64..5.0, 3),
        mu2 in prop::collection::vec(-5.0f64..5.0, 3),
        s1 in prop::collection::vec(0.01f64..4.0, 3),
        s2 in prop::collection::vec(0.01f64..4.0, 3),
    ) {
        let ab = gaussian_w2(&mu1, &s1, &mu2, &s2).unwrap();
        let ba = gaussian_w2(&mu2, &s2, &mu1, &s1).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(gaussian_w2(&mu1, &s1, &mu1, &s1).unwrap(), 0.0);
    }
}
