//! On-disk layout of preprocessed matrices and built datasets.
//!
//! A matrix is stored as `<domain>.npzlike`, a flat little-endian binary:
//!
//! ```text
//! "PODS" | u32 version | u64 rows | u64 cols | u64 nnz | nnz x (u32 row, u32 col)
//! ```
//!
//! next to `<domain>_users.txt` / `<domain>_items.txt` (one identifier per
//! line, in index order). A dataset directory adds `overlap.tsv`,
//! `splits.json`, optionally `labels.tsv`, and a `meta.json` summary.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{DomainData, OverlapMap, PocdrDataset, Split};
use super::matrix::{Domain, InteractionMatrix};
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"PODS";
pub const MATRIX_VERSION: u32 = 1;
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn encode_matrix(m: &InteractionMatrix) -> Vec<u8> {
    let nnz = m.nnz();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * nnz);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.n_users() as u64).to_le_bytes());
    out.extend_from_slice(&(m.n_items() as u64).to_le_bytes());
    out.extend_from_slice(&(nnz as u64).to_le_bytes());
    for (u, i) in m.positives() {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&i.to_le_bytes());
    }
    out
}

/// Decodes the binary layout into (rows, cols, pairs).
pub fn decode_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<(u32, u32)>)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MATRIX_MAGIC {
        return Err(Error::Format("not a PODS matrix file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != MATRIX_VERSION {
        return Err(Error::Format(format!(
            "unsupported matrix version {version}"
        )));
    }
    let (rows, cols, nnz) = (u64_at(8) as usize, u64_at(16) as usize, u64_at(24) as usize);
    if bytes.len() != HEADER_LEN + 8 * nnz {
        return Err(Error::Corrupt(format!(
            "matrix header declares {nnz} entries but payload is {} bytes",
            bytes.len() - HEADER_LEN
        )));
    }
    let pairs: Vec<(u32, u32)> = (0..nnz)
        .map(|k| (u32_at(HEADER_LEN + 8 * k), u32_at(HEADER_LEN + 4 + 8 * k)))
        .collect();
    if pairs
        .iter()
        .any(|&(r, c)| r as usize >= rows || c as usize >= cols)
    {
        return Err(Error::Corrupt("matrix entry outside declared shape".into()));
    }
    Ok((rows, cols, pairs))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let r = BufReader::new(fs::File::open(path)?);
    r.lines().map(|l| l.map_err(Error::from)).collect()
}

pub fn save_matrix(dir: &Path, d: Domain, m: &InteractionMatrix) -> Result<()> {
    let name = d.as_str();
    fs::write(dir.join(format!("{name}.npzlike")), encode_matrix(m))?;
    write_lines(
        &dir.join(format!("{name}_users.txt")),
        m.user_ids().iter().cloned(),
    )?;
    write_lines(
        &dir.join(format!("{name}_items.txt")),
        m.item_ids().iter().cloned(),
    )?;
    Ok(())
}

pub fn load_matrix(dir: &Path, d: Domain) -> Result<InteractionMatrix> {
    let name = d.as_str();
    let (rows, cols, pairs) = decode_matrix(&fs::read(dir.join(format!("{name}.npzlike")))?)?;
    let users = read_lines(&dir.join(format!("{name}_users.txt")))?;
    let items = read_lines(&dir.join(format!("{name}_items.txt")))?;
    if users.len() != rows || items.len() != cols {
        return Err(Error::Corrupt(format!(
            "{name}: identifier files list {}x{} but matrix is {rows}x{cols}",
            users.len(),
            items.len()
        )));
    }
    let mut grouped = vec![Vec::new(); rows];
    for (u, i) in pairs {
        grouped[u as usize].push(i);
    }
    InteractionMatrix::new(users, items, grouped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub format_version: u32,
    /// "matrices" for ingest output, "dataset" for a built dataset.
    pub kind: String,
    pub source_users: usize,
    pub source_items: usize,
    pub source_positives: usize,
    pub target_users: usize,
    pub target_items: usize,
    pub target_positives: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overlap_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overlapped_users: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

impl Meta {
    fn of(kind: &str, s: &InteractionMatrix, t: &InteractionMatrix) -> Meta {
        Meta {
            format_version: FORMAT_VERSION,
            kind: kind.into(),
            source_users: s.n_users(),
            source_items: s.n_items(),
            source_positives: s.nnz(),
            target_users: t.n_users(),
            target_items: t.n_items(),
            target_positives: t.nnz(),
            overlap_ratio: None,
            overlapped_users: None,
            seed: None,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_meta(dir: &Path) -> Result<Meta> {
    let path = dir.join("meta.json");
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Format(format!(
            "{} is not a dataset directory (no meta.json)",
            dir.display()
        )),
        _ => Error::Io(e),
    })?;
    let meta: Meta = serde_json::from_slice(&bytes)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset format version {}",
            meta.format_version
        )));
    }
    Ok(meta)
}

/// Writes the output of preprocessing: both matrices, no overlap or splits.
pub fn save_matrices(
    dir: &Path,
    source: &InteractionMatrix,
    target: &InteractionMatrix,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_matrix(dir, Domain::Source, source)?;
    save_matrix(dir, Domain::Target, target)?;
    write_json(
        &dir.join("meta.json"),
        &Meta::of("matrices", source, target),
    )
}

pub fn load_matrices(dir: &Path) -> Result<(InteractionMatrix, InteractionMatrix)> {
    read_meta(dir)?;
    Ok((
        load_matrix(dir, Domain::Source)?,
        load_matrix(dir, Domain::Target)?,
    ))
}

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    source: Split,
    target: Split,
}

pub fn save_dataset(dir: &Path, ds: &PocdrDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_matrix(dir, Domain::Source, &ds.source.matrix)?;
    save_matrix(dir, Domain::Target, &ds.target.matrix)?;
    write_lines(
        &dir.join("overlap.tsv"),
        ds.overlap.pairs().iter().map(|(s, t)| format!("{s}\t{t}")),
    )?;
    write_json(
        &dir.join("splits.json"),
        &SplitsFile {
            source: ds.source.split.clone(),
            target: ds.target.split.clone(),
        },
    )?;
    if let Some(labels) = &ds.labels {
        let lines = Domain::BOTH.iter().flat_map(|&d| {
            labels[d.tag() as usize]
                .iter()
                .enumerate()
                .map(move |(u, c)| format!("{}\t{u}\t{c}", d.as_str()))
        });
        write_lines(&dir.join("labels.tsv"), lines)?;
    }
    let mut meta = Meta::of("dataset", &ds.source.matrix, &ds.target.matrix);
    meta.overlap_ratio = Some(ds.overlap.ratio());
    meta.overlapped_users = Some(ds.overlap.len());
    meta.seed = Some(ds.seed);
    write_json(&dir.join("meta.json"), &meta)
}

fn parse_tsv_u32(line: &str, fields: usize, file: &str, lineno: usize) -> Result<Vec<u32>> {
    let parts: Vec<&str> = line.split('\t').collect();
    let bad = || Error::Parse {
        line: lineno as u64 + 1,
        message: format!("{file}: malformed line {line:?}"),
    };
    if parts.len() != fields {
        return Err(bad());
    }
    parts
        .iter()
        .map(|p| p.parse::<u32>().map_err(|_| bad()))
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<PocdrDataset> {
    let meta = read_meta(dir)?;
    if meta.kind != "dataset" {
        return Err(Error::Format(format!(
            "{} holds {:?}, not a built dataset",
            dir.display(),
            meta.kind
        )));
    }
    let source = load_matrix(dir, Domain::Source)?;
    let target = load_matrix(dir, Domain::Target)?;

    let mut pairs = Vec::new();
    for (n, line) in read_lines(&dir.join("overlap.tsv"))?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let v = parse_tsv_u32(line, 2, "overlap.tsv", n)?;
        if v[0] as usize >= source.n_users() || v[1] as usize >= target.n_users() {
            return Err(Error::Corrupt(format!(
                "overlap.tsv line {}: user out of range",
                n + 1
            )));
        }
        pairs.push((v[0], v[1]));
    }
    let overlap = OverlapMap::new(pairs, meta.overlap_ratio.unwrap_or(0.0))?;

    let splits: SplitsFile = serde_json::from_slice(&fs::read(dir.join("splits.json"))?)?;

    let labels_path = dir.join("labels.tsv");
    let labels = if labels_path.exists() {
        let mut by_domain: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (n, line) in read_lines(&labels_path)?.iter().enumerate() {
            let (tag, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: n as u64 + 1,
                message: "labels.tsv: missing domain tag".into(),
            })?;
            let v = parse_tsv_u32(rest, 2, "labels.tsv", n)?;
            by_domain
                .entry(tag.to_string())
                .or_default()
                .push((v[0], v[1]));
        }
        let collect = |d: Domain, n: usize| -> Result<Vec<u32>> {
            let mut out = vec![u32::MAX; n];
            for &(u, c) in by_domain.get(d.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                *out.get_mut(u as usize)
                    .ok_or_else(|| Error::Corrupt("label user out of range".into()))? = c;
            }
            if out.contains(&u32::MAX) {
                return Err(Error::Corrupt(format!(
                    "labels.tsv misses {} users",
                    d.as_str()
                )));
            }
            Ok(out)
        };
        Some([
            collect(Domain::Source, source.n_users())?,
            collect(Domain::Target, target.n_users())?,
        ])
    } else {
        None
    };

    Ok(PocdrDataset {
        source: DomainData::new(source, splits.source)?,
        target: DomainData::new(target, splits.target)?,
        overlap,
        seed: meta.seed.unwrap_or(0),
        labels,
    })
}
