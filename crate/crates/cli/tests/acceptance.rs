//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use vdea::autodiff::{grad_check, Graph, Tensor, Var};
use vdea::data::{generate_synthetic, Domain, PocdrDataset, SyntheticConfig};
use vdea::eval::{
    adjusted_rand_index, domain_discrepancy, evaluate_pairs, hard_assignments, RankingProtocol,
};
use vdea::rng::{rng_from, Rng};
use vdea::trainer::{total_loss, train, ModelParams, TrainConfig, Variant};
use vdea::transport::{
    gaussian_w2, gdot_sinkhorn, global_alignment_loss, gw_objective, local_alignment_loss,
    CostTensor, SinkhornConfig,
};
use vdea::vae::{
    forward_domain, mog_kl, vr_loss, Architecture, DomainParams, DomainVars, Posterior, PriorVars,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Runs one criterion, catching panics, and prints its line.
fn check(id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed < l);
    let pass = v.pass && in_time;
    let budget = limit
        .map(|l| format!(" of {}s", l.as_secs()))
        .unwrap_or_default();
    println!(
        "{} {id:>2} {name}: {}{} [{:.1}s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        if in_time {
            ""
        } else {
            "; over the time budget"
        },
        elapsed.as_secs_f64()
    );
    pass
}

fn normal(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn simplex(k: usize, rng: &mut Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

// 1

fn toy_domain(rng: &mut Rng) -> DomainParams {
    let arch = Architecture {
        items: 10,
        hidden: 6,
        latent: 4,
        clusters: 2,
    };
    let mut p = DomainParams::init(arch, rng).unwrap();
    p.prior.logits = normal(1, 2, 0.5, rng);
    p.prior.means = normal(2, 4, 1.0, rng);
    p.prior.log_vars = normal(2, 4, 0.3, rng);
    p
}

fn gradient_fidelity() -> Verdict {
    let rng = &mut rng_from(1, &[]);
    let (ps, pt) = (toy_domain(rng), toy_domain(rng));
    let binary = |rng: &mut Rng| {
        let data = (0..40)
            .map(|_| f64::from(rng.random::<f64>() < 0.3))
            .collect();
        Tensor::new(4, 10, data).unwrap()
    };
    let (xs, xt) = (binary(rng), binary(rng));
    let (es, et) = (normal(4, 4, 1.0, rng), normal(4, 4, 1.0, rng));
    let mask = [true, false, true, true];
    let cost = CostTensor::from_priors(&ps.prior, &pt.prior).unwrap();
    let psi = gdot_sinkhorn(
        &cost,
        &ps.prior.weights(),
        &pt.prior.weights(),
        &SinkhornConfig::default(),
    )
    .unwrap()
    .psi;
    let params: Vec<Tensor> = ps
        .tensors()
        .into_iter()
        .chain(pt.tensors())
        .cloned()
        .collect();
    let mut worst = Vec::new();
    for term in ["L_VR", "L_VA", "L_VG", "total"] {
        let err = grad_check(
            |g: &mut Graph, v: &[Var]| {
                let vs = DomainVars::from_slice(&v[..11])?;
                let vt = DomainVars::from_slice(&v[11..])?;
                let fs = forward_domain(g, &vs, &xs, &es)?;
                let ft = forward_domain(g, &vt, &xt, &et)?;
                let vr = vr_loss(g, &fs, &ft, 0.2)?;
                let va = local_alignment_loss(g, &fs.posterior, &ft.posterior, &mask)?;
                let vg = global_alignment_loss(g, &psi, &vs.prior, &vt.prior)?;
                match term {
                    "L_VR" => Ok(vr),
                    "L_VA" => Ok(va),
                    "L_VG" => Ok(vg),
                    _ => total_loss(g, vr, va, Some(vg), 0.7, 1.0, Variant::Full),
                }
            },
            &params,
            1e-5,
        )
        .unwrap();
        worst.push((term, err));
    }
    let pass = worst.iter().all(|&(_, e)| e <= 1e-4);
    let detail = worst
        .iter()
        .map(|(t, e)| format!("{t} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, format!("max relative error {detail} (limit 1e-4)"))
}

// 2

fn log_normal(z: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    z.iter()
        .zip(mean)
        .zip(var)
        .map(|((z, m), v)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (z - m).powi(2) / v))
        .sum()
}

fn kl_correctness() -> Verdict {
    let (k, d, samples) = (3, 4, 100_000);
    let mut worst: f64 = 0.0;
    for draw in 0..10u64 {
        let rng = &mut rng_from(draw, &[2]);
        let mu = normal(1, d, 1.0, rng);
        let log_var = normal(1, d, 0.5, rng);
        let gamma = simplex(k, rng);
        let logits = normal(1, k, 1.0, rng);
        let means = normal(k, d, 1.5, rng);
        let log_vars = normal(k, d, 0.5, rng);

        let mut g = Graph::new();
        let post = Posterior {
            mu: g.constant(mu.clone()),
            log_var: g.constant(log_var.clone()),
        };
        let log_gamma = g.constant(Tensor::row(gamma.iter().map(|x| x.ln()).collect()));
        let prior = PriorVars {
            logits: g.constant(logits.clone()),
            means: g.constant(means.clone()),
            log_vars: g.constant(log_vars.clone()),
        };
        let kl = mog_kl(&mut g, &post, log_gamma, &prior).unwrap();
        let exact = g.value(kl).item();

        let weights: Vec<f64> = {
            let e: Vec<f64> = logits.data().iter().map(|x| x.exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        };
        let q_var: Vec<f64> = log_var.data().iter().map(|v| v.exp()).collect();
        let p_var = log_vars.map(f64::exp);
        let mut z = vec![0.0; d];
        let mut acc = 0.0;
        for _ in 0..samples {
            for j in 0..d {
                let e: f64 = StandardNormal.sample(rng);
                z[j] = mu.data()[j] + e * q_var[j].sqrt();
            }
            let u: f64 = rng.random();
            let mut c = 0;
            let mut cum = gamma[0];
            while u >= cum && c + 1 < k {
                c += 1;
                cum += gamma[c];
            }
            let log_q = log_normal(&z, mu.data(), &q_var) + gamma[c].ln();
            let log_p = log_normal(&z, means.row_slice(c), p_var.row_slice(c)) + weights[c].ln();
            acc += log_q - log_p;
        }
        let estimate = acc / samples as f64;
        worst = worst.max((exact - estimate).abs() / exact.abs());
    }
    verdict(
        worst <= 0.02,
        format!(
            "worst relative gap {:.2}% over 10 draws (limit 2%)",
            100.0 * worst
        ),
    )
}

// 3

fn geometry(k: usize, rng: &mut Rng) -> Tensor {
    let pts: Vec<[f64; 3]> = (0..k)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let mut d = Tensor::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            d.set(i, j, (0..3).map(|c| (pts[i][c] - pts[j][c]).powi(2)).sum());
        }
    }
    d
}

fn sinkhorn_feasibility() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for k in [2usize, 5, 10, 30] {
        for seed in 0..100u64 {
            let rng = &mut rng_from(seed, &[3, k as u64]);
            let cost = CostTensor::new(geometry(k, rng), geometry(k, rng)).unwrap();
            let (a, b) = (simplex(k, rng), simplex(k, rng));
            let config = SinkhornConfig {
                epsilon: rng.random_range(0.01..=1.0),
                jitter_seed: seed,
                ..SinkhornConfig::default()
            };
            let psi = gdot_sinkhorn(&cost, &a, &b, &config).unwrap().psi;
            for i in 0..k {
                let row: f64 = psi.row_slice(i).iter().sum();
                let col: f64 = (0..k).map(|r| psi.get(r, i)).sum();
                worst = worst.max((row - a[i]).abs()).max((col - b[i]).abs());
            }
            count += 1;
        }
    }
    verdict(
        worst <= 1e-6,
        format!("worst marginal violation {worst:.1e} over {count} instances (limit 1e-6)"),
    )
}

// 4

fn gw_oracle() -> Verdict {
    const EPS: f64 = 1e-3;
    let uniform = [1.0 / 3.0; 3];
    let perms: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let (mut recovered, mut within) = (0, 0);
    for seed in 0..50u64 {
        let rng = &mut rng_from(seed, &[4]);
        // Distinct: any two distances differ by g with g^2 >= 10 eps.
        let ds = loop {
            let ds = geometry(3, rng);
            let (a, b, c) = (ds.get(0, 1), ds.get(0, 2), ds.get(1, 2));
            let gap = (a - b).abs().min((a - c).abs()).min((b - c).abs());
            if gap * gap >= 10.0 * EPS {
                break ds;
            }
        };
        let mut rho = vec![0, 1, 2];
        rho.shuffle(rng);
        let mut dt = Tensor::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                dt.set(rho[i], rho[j], ds.get(i, j));
            }
        }
        let cost = CostTensor::new(ds, dt).unwrap();
        let config = SinkhornConfig {
            epsilon: EPS,
            jitter_seed: seed,
            ..SinkhornConfig::default()
        };
        let psi = gdot_sinkhorn(&cost, &uniform, &uniform, &config)
            .unwrap()
            .psi;
        let argmax: Vec<usize> = (0..3)
            .map(|i| {
                let r = psi.row_slice(i);
                (0..3).fold(0, |b, j| if r[j] > r[b] { j } else { b })
            })
            .collect();
        recovered += usize::from(argmax == rho);
        let best = perms
            .iter()
            .map(|p| {
                let mut q = Tensor::zeros(3, 3);
                for i in 0..3 {
                    q.set(i, p[i], 1.0 / 3.0);
                }
                gw_objective(&q, &cost)
            })
            .fold(f64::INFINITY, f64::min);
        within += usize::from(gw_objective(&psi, &cost) <= best * 1.01 + 1e-12);
    }
    verdict(
        recovered >= 48 && within == 50,
        format!(
            "permutation recovered in {recovered}/50 (need 48), objective within 1% in {within}/50"
        ),
    )
}

// 5

fn closed_form_w2() -> Verdict {
    let cases = [
        (
            gaussian_w2(&[1.0, -2.0], &[0.5, 1.5], &[1.0, -2.0], &[0.5, 1.5]).unwrap(),
            0.0,
        ),
        (gaussian_w2(&[0.0], &[1.0], &[5.0], &[1.0]).unwrap(), 25.0),
        (gaussian_w2(&[1.0], &[2.0], &[4.0], &[0.5]).unwrap(), 11.25),
    ];
    let pass = cases.iter().all(|(got, want)| (got - want).abs() <= 1e-12);
    let detail = cases
        .iter()
        .map(|(g, _)| format!("{g}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, format!("got {detail} (expected 0, 25, 11.25)"))
}

// 6, 7

const SEEDS: u64 = 5;

fn trend_data(seed: u64, overlap_ratio: f64) -> PocdrDataset {
    generate_synthetic(&SyntheticConfig {
        seed,
        overlap_ratio,
        noise: 0.5,
        source_density: 0.6,
        target_density: 0.06,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn model_config(seed: u64, variant: Variant) -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        latent_dim: 8,
        clusters: 4,
        hidden: 64,
        learning_rate: 3e-3,
        lambda_vl: 0.05,
        lambda_vg: 1.0,
        pretrain_epochs: 10,
        epochs: 60,
        anneal_epochs: 30,
        patience: 0,
        data_seed: seed,
        model_seed: seed,
        noise_seed: seed,
        variant,
        ..TrainConfig::default()
    }
}

/// Best mean validation HR@5 of the two domains, and the returned model.
fn fit(data: &PocdrDataset, config: &TrainConfig) -> (f64, ModelParams) {
    let (model, log) = train(config, data).unwrap();
    let best = log.best().unwrap();
    (0.5 * (best.hr5_src + best.hr5_tgt), model)
}

struct TrendRun {
    seed: u64,
    base: f64,
    full: [f64; 3],
    d_a: (f64, f64),
}

fn trend_runs() -> Vec<TrendRun> {
    (0..SEEDS)
        .map(|seed| {
            let low = trend_data(seed, 0.3);
            let (base, base_model) = fit(&low, &model_config(seed, Variant::Base));
            let (full_low, full_model) = fit(&low, &model_config(seed, Variant::Full));
            let d_a = (
                domain_discrepancy(&base_model, &low, 0).unwrap().d_a,
                domain_discrepancy(&full_model, &low, 0).unwrap().d_a,
            );
            let mut full = [full_low, 0.0, 0.0];
            for (slot, ratio) in [(1, 0.6), (2, 0.9)] {
                full[slot] = fit(&trend_data(seed, ratio), &model_config(seed, Variant::Full)).0;
            }
            TrendRun {
                seed,
                base,
                full,
                d_a,
            }
        })
        .collect()
}

fn hr_trend(runs: &mut Option<Vec<TrendRun>>) -> Verdict {
    let r = runs.insert(trend_runs());
    for t in r.iter() {
        println!(
            "     seed {}: base@0.3 {:.4}, full@0.3/0.6/0.9 {:.4} {:.4} {:.4}",
            t.seed, t.base, t.full[0], t.full[1], t.full[2]
        );
    }
    let wins = r.iter().filter(|t| t.full[0] > t.base).count();
    let monotone = r
        .iter()
        .filter(|t| t.full[0] <= t.full[1] && t.full[1] <= t.full[2])
        .count();
    verdict(
        wins >= 4 && monotone >= 4,
        format!("full > base in {wins}/5, non-decreasing in K_u in {monotone}/5 (need 4 each)"),
    )
}

fn discrepancy_trend(runs: &Option<Vec<TrendRun>>) -> Verdict {
    let Some(r) = runs else {
        return verdict(false, "no training runs to measure");
    };
    for t in r {
        println!(
            "     seed {}: d_A base {:.3}, full {:.3}",
            t.seed, t.d_a.0, t.d_a.1
        );
    }
    let better = r.iter().filter(|t| t.d_a.1 < t.d_a.0).count();
    verdict(
        better >= 4,
        format!("d_A(full) < d_A(base) in {better}/5 (need 4)"),
    )
}

// 8

fn clustering() -> Verdict {
    let mut aris = Vec::new();
    for seed in 0..SEEDS {
        let data = generate_synthetic(&SyntheticConfig {
            seed,
            noise: 0.0,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let config = TrainConfig {
            prior_learning_rate: Some(0.1),
            ..model_config(seed, Variant::Full)
        };
        let (model, _) = train(&config, &data).unwrap();
        for d in Domain::BOTH {
            let hard = hard_assignments(model.domain(d), data.domain(d).train()).unwrap();
            aris.push(adjusted_rand_index(&hard, data.labels(d).unwrap()).unwrap());
        }
    }
    let worst = aris.iter().copied().fold(f64::INFINITY, f64::min);
    let listed = aris
        .iter()
        .map(|a| format!("{a:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        worst >= 0.5,
        format!("ARI per seed and domain {listed}; minimum {worst:.3} (need 0.5)"),
    )
}

// 9

fn random_scorer() -> Verdict {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let m = &data.source.matrix;
    let pairs: Vec<(u32, u32)> = m.positives().collect();
    let rng = &mut rng_from(9, &[]);
    let items = m.n_items();
    let r = evaluate_pairs(
        m,
        &pairs,
        &RankingProtocol::default(),
        Domain::Source,
        |users| {
            Tensor::new(
                users.len(),
                items,
                (0..users.len() * items).map(|_| rng.random()).collect(),
            )
        },
    )
    .unwrap();
    verdict(
        r.pairs >= 2000 && (0.03..=0.07).contains(&r.hr),
        format!(
            "HR@5 {:.4} over {} pairs (need [0.03, 0.07], 2000 pairs)",
            r.hr, r.pairs
        ),
    )
}

// 10

fn cli_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"batch_size": 64, "latent_dim": 8, "clusters": 4, "hidden": 64, "learning_rate": 0.003,
            "pretrain_epochs": 5, "epochs": 10, "anneal_epochs": 5, "patience": 0}"#,
    )
    .unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_vdea"))
            .current_dir(d)
            .env("RUST_LOG", "warn")
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    for r in ["a", "b"] {
        let ds = format!("{r}/data");
        let ckpt = format!("{r}/train/model.ckpt");
        run(&[
            "synth",
            "--out",
            &ds,
            "--clusters",
            "4",
            "--users",
            "600",
            "--items",
            "200",
            "--ku",
            "0.3",
            "--seed",
            "7",
        ]);
        run(&[
            "train",
            "--data",
            &ds,
            "--config",
            "cfg.json",
            "--variant",
            "full",
            "--out",
            &format!("{r}/train"),
        ]);
        run(&[
            "eval",
            "--data",
            &ds,
            "--checkpoint",
            &ckpt,
            "--split",
            "test",
            "--out",
            &format!("{r}/eval"),
        ]);
    }
    let read = |p: &str| std::fs::read(Path::new(d).join(p)).unwrap();
    let (a, b) = (read("a/eval/metrics.csv"), read("b/eval/metrics.csv"));
    verdict(
        a == b && !a.is_empty(),
        format!("metrics.csv {} bytes, identical: {}", a.len(), a == b),
    )
}

fn main() {
    let start = Instant::now();
    let secs = Duration::from_secs;
    let mut runs = None;
    let results = [
        check(1, "gradient fidelity", Some(secs(30)), gradient_fidelity),
        check(2, "KL correctness", Some(secs(60)), kl_correctness),
        check(
            3,
            "Sinkhorn feasibility",
            Some(secs(60)),
            sinkhorn_feasibility,
        ),
        check(4, "GW oracle equivalence", None, gw_oracle),
        check(5, "closed-form W2", None, closed_form_w2),
        check(6, "HR trend on synthetic data", Some(secs(15 * 60)), || {
            hr_trend(&mut runs)
        }),
        check(7, "domain discrepancy trend", None, || {
            discrepancy_trend(&runs)
        }),
        check(8, "clustering sanity", None, clustering),
        check(9, "metric harness sanity", None, random_scorer),
        check(10, "determinism", None, cli_determinism),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!(
        "{passed}/{} criteria passed in {:.0}s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if passed != results.len() {
        std::process::exit(1);
    }
}
