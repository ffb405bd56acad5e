//! One-axis sweeps over training configurations with a per-cell result cache.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embed::domain_discrepancy;
use super::ranking::{csv_err, evaluate_topk, RankingProtocol};
use crate::data::io::encode_matrix;
use crate::data::{PocdrDataset, SplitKind};
use crate::error::{Error, Result};
use crate::trainer::{train, TrainConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Variant,
    LambdaVl,
    LambdaVg,
    Clusters,
    Latent,
    OverlapRatio,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::Variant,
        SweepAxis::LambdaVl,
        SweepAxis::LambdaVg,
        SweepAxis::Clusters,
        SweepAxis::Latent,
        SweepAxis::OverlapRatio,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Variant => "variant",
            SweepAxis::LambdaVl => "lambda_vl",
            SweepAxis::LambdaVg => "lambda_vg",
            SweepAxis::Clusters => "k",
            SweepAxis::Latent => "d",
            SweepAxis::OverlapRatio => "k_u",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::contract(format!(
                "unknown sweep axis {s:?} (expected variant, lambda_vl, lambda_vg, k, d or k_u)"
            ))
            })
    }
}

/// One configuration to train and evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub config: TrainConfig,
    pub overlap_ratio: f64,
}

fn parse_value<T: FromStr>(axis: SweepAxis, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::contract(format!("{raw:?} is not a valid {axis} value")))
}

/// Cells of a sweep that changes `axis` to each of `values`, starting from
/// `base` and the dataset's revealed-overlap ratio `base_ratio`.
pub fn sweep_cells(
    base: &TrainConfig,
    base_ratio: f64,
    axis: SweepAxis,
    values: &[String],
) -> Result<Vec<AblationCell>> {
    if values.is_empty() {
        return Err(Error::contract(format!(
            "no values given for the {axis} sweep"
        )));
    }
    values
        .iter()
        .map(|raw| {
            let mut config = base.clone();
            let mut overlap_ratio = base_ratio;
            match axis {
                SweepAxis::Variant => config.variant = raw.trim().parse::<Variant>()?,
                SweepAxis::LambdaVl => config.lambda_vl = parse_value(axis, raw)?,
                SweepAxis::LambdaVg => config.lambda_vg = parse_value(axis, raw)?,
                SweepAxis::Clusters => config.clusters = parse_value(axis, raw)?,
                SweepAxis::Latent => config.latent_dim = parse_value(axis, raw)?,
                SweepAxis::OverlapRatio => overlap_ratio = parse_value(axis, raw)?,
            }
            config.validate()?;
            Ok(AblationCell {
                label: format!("{axis}={}", raw.trim()),
                config,
                overlap_ratio,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub hr_src: f64,
    pub ndcg_src: f64,
    pub hr_tgt: f64,
    pub ndcg_tgt: f64,
    pub d_a: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    /// `Ok` metrics or the failure message.
    pub outcome: std::result::Result<CellMetrics, String>,
    /// Loaded from the cache rather than recomputed.
    #[serde(skip)]
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOptions {
    pub protocol: RankingProtocol,
    pub split: SplitKind,
    /// Finished cells are stored here as `<sha256>.json` and reused.
    pub cache_dir: Option<PathBuf>,
    pub discrepancy_seed: u64,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions {
            protocol: RankingProtocol::default(),
            split: SplitKind::Test,
            cache_dir: None,
            discrepancy_seed: 0,
        }
    }
}

/// Digest of everything a cell's result depends on.
pub fn cell_key(
    cell: &AblationCell,
    dataset: &PocdrDataset,
    options: &AblationOptions,
) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cell)?);
    h.update(serde_json::to_vec(&options.protocol)?);
    h.update(options.split.as_str());
    h.update(options.discrepancy_seed.to_le_bytes());
    h.update(dataset.seed.to_le_bytes());
    for data in [&dataset.source, &dataset.target] {
        h.update(encode_matrix(&data.matrix));
        for part in [&data.split.train, &data.split.val, &data.split.test] {
            h.update((part.len() as u64).to_le_bytes());
            for k in part {
                h.update(k.to_le_bytes());
            }
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn run_cell(
    cell: &AblationCell,
    dataset: &PocdrDataset,
    options: &AblationOptions,
) -> Result<CellMetrics> {
    let data = if (cell.overlap_ratio - dataset.overlap.ratio()).abs() > 0.0 {
        dataset.with_overlap_ratio(cell.overlap_ratio)?
    } else {
        dataset.clone()
    };
    let (model, log) = train(&cell.config, &data)?;
    let report = evaluate_topk(&model, &data, options.split, &options.protocol)?;
    let discrepancy = domain_discrepancy(&model, &data, options.discrepancy_seed)?;
    Ok(CellMetrics {
        hr_src: report.source.hr,
        ndcg_src: report.source.ndcg,
        hr_tgt: report.target.hr,
        ndcg_tgt: report.target.ndcg,
        d_a: discrepancy.d_a,
        best_epoch: log.best_epoch.unwrap_or(0),
    })
}

fn read_cached(path: &Path) -> Option<AblationRow> {
    let bytes = fs::read(path).ok()?;
    match serde_json::from_slice::<AblationRow>(&bytes) {
        Ok(row) => Some(row),
        Err(e) => {
            log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
            None
        }
    }
}

fn write_cached(path: &Path, row: &AblationRow) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(row)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Trains and evaluates every cell in order. A failing cell is recorded and
/// the sweep moves on; failures are not cached, so a rerun retries them.
pub fn run_ablation(
    dataset: &PocdrDataset,
    cells: &[AblationCell],
    options: &AblationOptions,
) -> Result<Vec<AblationRow>> {
    if let Some(dir) = &options.cache_dir {
        fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let path = match &options.cache_dir {
            Some(dir) => Some(dir.join(format!("{}.json", cell_key(cell, dataset, options)?))),
            None => None,
        };
        if let Some(mut row) = path.as_deref().and_then(read_cached) {
            log::info!("{}: cached", cell.label);
            row.cached = true;
            rows.push(row);
            continue;
        }
        log::info!("{}: training", cell.label);
        let outcome = run_cell(cell, dataset, options).map_err(|e| {
            log::warn!("{} failed: {e}", cell.label);
            e.to_string()
        });
        let row = AblationRow {
            cell: cell.clone(),
            outcome,
            cached: false,
        };
        if let (Some(path), Ok(_)) = (&path, &row.outcome) {
            write_cached(path, &row)?;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "cell",
        "variant",
        "lambda_vl",
        "lambda_vg",
        "clusters",
        "latent_dim",
        "overlap_ratio",
        "status",
        "hr5_src",
        "ndcg5_src",
        "hr5_tgt",
        "ndcg5_tgt",
        "d_a",
        "best_epoch",
        "error",
    ])
    .map_err(csv_err)?;
    for row in rows {
        let c = &row.cell.config;
        let mut record = vec![
            row.cell.label.clone(),
            c.variant.to_string(),
            c.lambda_vl.to_string(),
            c.lambda_vg.to_string(),
            c.clusters.to_string(),
            c.latent_dim.to_string(),
            row.cell.overlap_ratio.to_string(),
        ];
        match &row.outcome {
            Ok(m) => {
                record.push("ok".into());
                for x in [m.hr_src, m.ndcg_src, m.hr_tgt, m.ndcg_tgt, m.d_a] {
                    record.push(format!("{x:.6}"));
                }
                record.push(m.best_epoch.to_string());
                record.push(String::new());
            }
            Err(msg) => {
                record.push("failed".into());
                record.extend(std::iter::repeat_n(String::new(), 6));
                record.push(msg.clone());
            }
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
