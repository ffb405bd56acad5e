use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::cluster::posterior_means;
use super::discrepancy::{proxy_a_distance, DiscrepancyReport};
use crate::data::{Domain, PocdrDataset};
use crate::error::Result;
use crate::trainer::ModelParams;

/// One TSV line per user of each domain: domain tag, user index, overlapped
/// flag (0/1), then the posterior mean.
pub fn write_embeddings<W: Write>(
    model: &ModelParams,
    dataset: &PocdrDataset,
    out: W,
) -> Result<()> {
    let mut w = BufWriter::new(out);
    for d in [Domain::Source, Domain::Target] {
        let data = dataset.domain(d);
        let mu = posterior_means(model.domain(d), data.train())?;
        let flags = dataset.overlap.flags(d, data.n_users());
        for (u, &flag) in flags.iter().enumerate() {
            write!(w, "{}\t{u}\t{}", d.as_str(), u8::from(flag))?;
            for x in mu.row_slice(u) {
                write!(w, "\t{x:e}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_embeddings(model: &ModelParams, dataset: &PocdrDataset, path: &Path) -> Result<()> {
    write_embeddings(model, dataset, fs::File::create(path)?)
}

/// Proxy A-distance between the two domains' posterior means.
pub fn domain_discrepancy(
    model: &ModelParams,
    dataset: &PocdrDataset,
    seed: u64,
) -> Result<DiscrepancyReport> {
    let source = posterior_means(&model.source, dataset.source.train())?;
    let target = posterior_means(&model.target, dataset.target.train())?;
    proxy_a_distance(&source, &target, seed)
}
