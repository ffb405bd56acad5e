use std::io::Write;
use std::time::Instant;

use log::{debug, info};

use super::config::{beta_schedule, total_loss, TrainConfig};
use super::model::ModelParams;
use crate::autodiff::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::data::{make_batches, Domain, PairedBatch, PocdrDataset, SplitKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate_topk, MetricsReport, RankingProtocol};
use crate::rng::{derive_seed, rng_from};
use crate::transport::{
    gdot_sinkhorn, global_alignment_loss, local_alignment_loss, CostTensor, SinkhornConfig,
};
use crate::vae::{
    forward_domain, infer_posterior, init_prior_from_latents, reconstruction_loss, sample_noise,
    vr_loss, Architecture, DomainParams,
};

const PRETRAIN_STAGE: u64 = 1;
const TRAIN_STAGE: u64 = 2;
const INIT_STREAM: u64 = 0x696e_6974;
const EM_STREAM: u64 = 0x656d;
const VALIDATION_STREAM: u64 = 0x0076_616c;

/// Reconstruction loss of all training users at their posterior means,
/// before and after one pretraining epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub start_loss: f64,
    pub end_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_vr: f64,
    pub l_va: f64,
    pub l_vg: f64,
    pub total: f64,
    pub beta: f64,
    pub hr5_src: f64,
    pub ndcg5_src: f64,
    pub hr5_tgt: f64,
    pub ndcg5_tgt: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub pretrain: Vec<PretrainEpoch>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch
            .and_then(|e| self.epochs.iter().find(|r| r.epoch == e))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epoch",
            "l_vr",
            "l_va",
            "l_vg",
            "total",
            "beta",
            "hr5_src",
            "ndcg5_src",
            "hr5_tgt",
            "ndcg5_tgt",
            "seconds",
        ])
        .map_err(crate::eval::csv_err)?;
        for r in &self.epochs {
            let mut row = vec![r.epoch.to_string()];
            row.extend(
                [
                    r.l_vr,
                    r.l_va,
                    r.l_vg,
                    r.total,
                    r.beta,
                    r.hr5_src,
                    r.ndcg5_src,
                    r.hr5_tgt,
                    r.ndcg5_tgt,
                ]
                .iter()
                .map(|x| format!("{x:.9e}")),
            );
            row.push(format!("{:.3}", r.seconds));
            w.write_record(&row).map_err(crate::eval::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Architectures both domains get under `config`.
pub fn architectures(config: &TrainConfig, dataset: &PocdrDataset) -> (Architecture, Architecture) {
    let arch = |items| Architecture {
        items,
        hidden: config.hidden,
        latent: config.latent_dim,
        clusters: config.clusters,
    };
    (
        arch(dataset.source.n_items()),
        arch(dataset.target.n_items()),
    )
}

/// Ranking protocol used for per-epoch validation.
pub fn validation_protocol(config: &TrainConfig) -> RankingProtocol {
    RankingProtocol {
        seed: derive_seed(config.data_seed, &[VALIDATION_STREAM]),
        ..RankingProtocol::default()
    }
}

fn effective_batch_size(config: &TrainConfig, dataset: &PocdrDataset) -> usize {
    let n = dataset.source.n_users().min(dataset.target.n_users());
    if config.batch_size > n {
        debug!(
            "batch size {} exceeds the {n} users of the smaller domain; using {n}",
            config.batch_size
        );
    }
    config.batch_size.min(n)
}

fn noise(
    config: &TrainConfig,
    stage: u64,
    epoch: usize,
    batch: usize,
    d: Domain,
    rows: usize,
) -> Tensor {
    let mut rng = rng_from(
        config.noise_seed,
        &[stage, epoch as u64, batch as u64, d.tag()],
    );
    sample_noise(rows, config.latent_dim, &mut rng)
}

fn inputs(dataset: &PocdrDataset, batch: &PairedBatch) -> (Tensor, Tensor) {
    (
        dataset.source.train().dense_rows(&batch.source_users),
        dataset.target.train().dense_rows(&batch.target_users),
    )
}

/// Mean reconstruction loss of every training user of one domain, encoded at its posterior mean.
fn full_reconstruction(params: &DomainParams, dataset: &PocdrDataset, d: Domain) -> Result<f64> {
    let data = dataset.domain(d);
    let users: Vec<u32> = (0..data.n_users() as u32).collect();
    let x = data.train().dense_rows(&users);
    let (mu, _) = infer_posterior(params, &x)?;
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false, false);
    let xv = g.constant(x);
    let z = g.constant(mu);
    let logits = crate::vae::decode_logits(&mut g, &vars.decoder, z)?;
    let loss = reconstruction_loss(&mut g, xv, logits)?;
    Ok(g.value(loss).item())
}

fn gradients_for(
    grads: &crate::autodiff::Gradients,
    vars: &[Var],
    params: &[&Tensor],
) -> Vec<Tensor> {
    vars.iter()
        .zip(params)
        .map(|(v, p)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
        })
        .collect()
}

fn check_finite(what: &str, epoch: usize, terms: &[(&str, f64)]) -> Result<()> {
    if terms.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let listed: Vec<String> = terms.iter().map(|(n, v)| format!("{n}={v}")).collect();
    Err(Error::Numeric(format!(
        "{what} diverged at epoch {epoch}: {}",
        listed.join(", ")
    )))
}

/// Fresh networks trained on reconstruction alone, then priors fitted by EM to
/// the posterior means of all training users.
pub fn pretrain_and_init(
    config: &TrainConfig,
    dataset: &PocdrDataset,
) -> Result<(ModelParams, Vec<PretrainEpoch>)> {
    config.validate()?;
    let (arch_s, arch_t) = architectures(config, dataset);
    let mut init_rng = rng_from(config.model_seed, &[INIT_STREAM]);
    let mut params = ModelParams {
        source: DomainParams::init(arch_s, &mut init_rng)?,
        target: DomainParams::init(arch_t, &mut init_rng)?,
    };
    let batch_size = effective_batch_size(config, dataset);
    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let n = DomainParams::NETWORK_TENSORS;
    let initial: Vec<Tensor> = params
        .source
        .tensors()
        .into_iter()
        .take(n)
        .chain(params.target.tensors().into_iter().take(n))
        .cloned()
        .collect();
    let mut adam = Adam::new(adam_config, &initial);

    let mut history = Vec::with_capacity(config.pretrain_epochs);
    for epoch in 0..config.pretrain_epochs {
        let start = full_reconstruction(&params.source, dataset, Domain::Source)?
            + full_reconstruction(&params.target, dataset, Domain::Target)?;
        let batches = make_batches(
            dataset,
            batch_size,
            derive_seed(config.model_seed, &[PRETRAIN_STAGE, epoch as u64]),
        )?;
        for (b, batch) in batches.iter().enumerate() {
            let (xs, xt) = inputs(dataset, batch);
            let mut g = Graph::new();
            let vs = params.source.bind(&mut g, true, false);
            let vt = params.target.bind(&mut g, true, false);
            let es = noise(
                config,
                PRETRAIN_STAGE,
                epoch,
                b,
                Domain::Source,
                batch.len(),
            );
            let et = noise(
                config,
                PRETRAIN_STAGE,
                epoch,
                b,
                Domain::Target,
                batch.len(),
            );
            let fs = forward_domain(&mut g, &vs, &xs, &es)?;
            let ft = forward_domain(&mut g, &vt, &xt, &et)?;
            let loss = vr_loss(&mut g, &fs, &ft, 0.0)?;
            check_finite("pretraining", epoch, &[("l_vr", g.value(loss).item())])?;
            let vars: Vec<Var> = vs.all()[..n]
                .iter()
                .chain(&vt.all()[..n])
                .copied()
                .collect();
            let grads = g.backward(loss)?;
            let mut targets: Vec<&mut Tensor> = {
                let ModelParams { source, target } = &mut params;
                source
                    .tensors_mut()
                    .into_iter()
                    .take(n)
                    .chain(target.tensors_mut().into_iter().take(n))
                    .collect()
            };
            let found: Vec<Tensor> = {
                let shapes: Vec<&Tensor> = targets.iter().map(|t| &**t).collect();
                gradients_for(&grads, &vars, &shapes)
            };
            let refs: Vec<&Tensor> = found.iter().collect();
            adam.step(&mut targets, &refs)?;
        }
        let end = full_reconstruction(&params.source, dataset, Domain::Source)?
            + full_reconstruction(&params.target, dataset, Domain::Target)?;
        check_finite("pretraining", epoch, &[("reconstruction", end)])?;
        debug!("pretrain epoch {epoch}: reconstruction {start:.4} -> {end:.4}");
        history.push(PretrainEpoch {
            epoch,
            start_loss: start,
            end_loss: end,
        });
    }

    for d in Domain::BOTH {
        let data = dataset.domain(d);
        let users: Vec<u32> = (0..data.n_users() as u32).collect();
        let (mu, _) = infer_posterior(params.domain(d), &data.train().dense_rows(&users))?;
        let prior = init_prior_from_latents(
            &mu,
            config.clusters,
            derive_seed(config.model_seed, &[EM_STREAM, d.tag()]),
        )?;
        params.domain_mut(d).prior = prior;
    }
    Ok((params, history))
}

/// Coupling between the two current priors, or `None` when the global term is off.
pub fn solve_coupling(
    config: &TrainConfig,
    params: &ModelParams,
    epoch: usize,
) -> Result<Option<Tensor>> {
    let (_, wg) = config.variant.weights(config.lambda_vl, config.lambda_vg);
    if wg == 0.0 {
        return Ok(None);
    }
    let (ps, pt) = (&params.source.prior, &params.target.prior);
    let cost = CostTensor::from_priors(ps, pt)?;
    let sinkhorn = SinkhornConfig {
        epsilon: config.epsilon,
        jitter_seed: derive_seed(config.model_seed, &[TRAIN_STAGE, epoch as u64]),
        ..SinkhornConfig::default()
    };
    Ok(Some(
        gdot_sinkhorn(&cost, &ps.weights(), &pt.weights(), &sinkhorn)?.psi,
    ))
}

/// Per-term values of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub l_vr: f64,
    pub l_va: f64,
    pub l_vg: f64,
    pub total: f64,
}

/// One gradient step on one paired batch. `psi` is the epoch's fixed coupling.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    config: &TrainConfig,
    dataset: &PocdrDataset,
    params: &mut ModelParams,
    adam: &mut Adam,
    batch: &PairedBatch,
    psi: Option<&Tensor>,
    beta: f64,
    epoch: usize,
    index: usize,
) -> Result<StepLosses> {
    let (xs, xt) = inputs(dataset, batch);
    let mut g = Graph::new();
    let vs = params.source.bind(&mut g, true, true);
    let vt = params.target.bind(&mut g, true, true);
    let es = noise(
        config,
        TRAIN_STAGE,
        epoch,
        index,
        Domain::Source,
        batch.len(),
    );
    let et = noise(
        config,
        TRAIN_STAGE,
        epoch,
        index,
        Domain::Target,
        batch.len(),
    );
    let fs = forward_domain(&mut g, &vs, &xs, &es)?;
    let ft = forward_domain(&mut g, &vt, &xt, &et)?;
    let vr = vr_loss(&mut g, &fs, &ft, beta)?;
    let va = local_alignment_loss(&mut g, &fs.posterior, &ft.posterior, &batch.aligned)?;
    let vg = match psi {
        Some(psi) => Some(global_alignment_loss(&mut g, psi, &vs.prior, &vt.prior)?),
        None => None,
    };
    let total = total_loss(
        &mut g,
        vr,
        va,
        vg,
        config.lambda_vl,
        config.lambda_vg,
        config.variant,
    )?;
    let losses = StepLosses {
        l_vr: g.value(vr).item(),
        l_va: g.value(va).item(),
        l_vg: vg.map_or(0.0, |v| g.value(v).item()),
        total: g.value(total).item(),
    };
    check_finite(
        "training",
        epoch,
        &[
            ("l_vr", losses.l_vr),
            ("l_va", losses.l_va),
            ("l_vg", losses.l_vg),
            ("total", losses.total),
        ],
    )?;
    let vars: Vec<Var> = vs.all().into_iter().chain(vt.all()).collect();
    let grads = g.backward(total)?;
    let mut targets = params.tensors_mut();
    let found = {
        let shapes: Vec<&Tensor> = targets.iter().map(|t| &**t).collect();
        gradients_for(&grads, &vars, &shapes)
    };
    let refs: Vec<&Tensor> = found.iter().collect();
    adam.step(&mut targets, &refs)?;
    debug_assert!(params
        .source
        .prior
        .weights()
        .iter()
        .all(|w| w.is_finite() && *w >= 0.0));
    debug_assert!(params
        .target
        .prior
        .weights()
        .iter()
        .all(|w| w.is_finite() && *w >= 0.0));
    Ok(losses)
}

/// Alignment training from already pretrained parameters. Returns the
/// parameters of the epoch with the best mean validation HR@5.
pub fn train_from(
    config: &TrainConfig,
    dataset: &PocdrDataset,
    mut params: ModelParams,
    log: &mut TrainLog,
) -> Result<ModelParams> {
    config.validate()?;
    let batch_size = effective_batch_size(config, dataset);
    let protocol = validation_protocol(config);
    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_config, &params.tensors());
    if let Some(rate) = config.prior_learning_rate {
        let per_domain = DomainParams::NAMES.len();
        for domain in 0..2 {
            for i in DomainParams::NETWORK_TENSORS + 1..per_domain {
                adam.set_learning_rate(domain * per_domain + i, rate)?;
            }
        }
    }
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 0..config.epochs {
        let clock = Instant::now();
        let beta = beta_schedule(epoch, config.anneal_epochs, config.beta_max);
        let psi = solve_coupling(config, &params, epoch)?;
        let batches = make_batches(
            dataset,
            batch_size,
            derive_seed(config.model_seed, &[TRAIN_STAGE, epoch as u64]),
        )?;
        let mut sums = [0.0; 4];
        for (b, batch) in batches.iter().enumerate() {
            let s = train_step(
                config,
                dataset,
                &mut params,
                &mut adam,
                batch,
                psi.as_ref(),
                beta,
                epoch,
                b,
            )?;
            for (acc, v) in sums.iter_mut().zip([s.l_vr, s.l_va, s.l_vg, s.total]) {
                *acc += v;
            }
        }
        let nb = batches.len() as f64;
        let report: MetricsReport = evaluate_topk(&params, dataset, SplitKind::Val, &protocol)?;
        let record = EpochRecord {
            epoch,
            l_vr: sums[0] / nb,
            l_va: sums[1] / nb,
            l_vg: sums[2] / nb,
            total: sums[3] / nb,
            beta,
            hr5_src: report.source.hr,
            ndcg5_src: report.source.ndcg,
            hr5_tgt: report.target.hr,
            ndcg5_tgt: report.target.ndcg,
            seconds: clock.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: total {:.4} (vr {:.4}, va {:.4}, vg {:.4}), beta {beta:.3}, val HR@5 {:.4}/{:.4}",
            record.total, record.l_vr, record.l_va, record.l_vg, record.hr5_src, record.hr5_tgt
        );
        log.epochs.push(record);
        let score = report.mean_hr();
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, params.clone()));
        }
        let best_epoch = best.as_ref().map(|b| b.1).unwrap_or(epoch);
        if config.patience > 0 && epoch - best_epoch >= config.patience {
            info!(
                "no validation improvement for {} epochs; stopping",
                config.patience
            );
            break;
        }
    }
    let (_, epoch, params) = best.expect("at least one epoch");
    log.best_epoch = Some(epoch);
    Ok(params)
}

/// Pretraining, prior initialization and alignment training.
pub fn train(config: &TrainConfig, dataset: &PocdrDataset) -> Result<(ModelParams, TrainLog)> {
    let (params, pretrain) = pretrain_and_init(config, dataset)?;
    let mut log = TrainLog {
        pretrain,
        ..TrainLog::default()
    };
    let params = train_from(config, dataset, params, &mut log)?;
    Ok((params, log))
}
