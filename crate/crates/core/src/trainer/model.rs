use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::vae::{Architecture, DomainParams};

const MAGIC: &[u8; 4] = b"VDEA";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Both domains' autoencoders and priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub source: DomainParams,
    pub target: DomainParams,
}

impl ModelParams {
    pub fn domain(&self, d: Domain) -> &DomainParams {
        match d {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    pub fn domain_mut(&mut self, d: Domain) -> &mut DomainParams {
        match d {
            Domain::Source => &mut self.source,
            Domain::Target => &mut self.target,
        }
    }

    /// Checkpoint names, `src.` or `tgt.` followed by the per-domain name.
    pub fn names() -> Vec<String> {
        let mut out = Vec::with_capacity(2 * DomainParams::NAMES.len());
        for prefix in ["src", "tgt"] {
            out.extend(DomainParams::NAMES.iter().map(|n| format!("{prefix}.{n}")));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.source
            .tensors()
            .into_iter()
            .chain(self.target.tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let ModelParams { source, target } = self;
        source
            .tensors_mut()
            .into_iter()
            .chain(target.tensors_mut())
            .collect()
    }

    /// Fails when the checkpoint's shapes disagree with the expected architectures,
    /// naming the first disagreeing size.
    pub fn check_architecture(&self, source: &Architecture, target: &Architecture) -> Result<()> {
        for (d, expected) in [(Domain::Source, source), (Domain::Target, target)] {
            let got = self.domain(d).arch();
            let fields = [
                ("item count", got.items, expected.items),
                ("hidden width", got.hidden, expected.hidden),
                ("latent dimension", got.latent, expected.latent),
                ("cluster count", got.clusters, expected.clusters),
            ];
            for (what, have, want) in fields {
                if have != want {
                    return Err(Error::ShapeMismatch(format!(
                        "{} {what} is {have} in the checkpoint but {want} in the configuration",
                        d.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn encode_checkpoint(&self) -> Vec<u8> {
        let names = Self::names();
        let tensors = self.tensors();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(names.len() as u32).to_le_bytes());
        for (name, t) in names.iter().zip(tensors) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a VDEA checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let names = Self::names();
        let count = r.u32()? as usize;
        if count != names.len() {
            return Err(Error::Corrupt(format!(
                "{count} tensors, expected {}",
                names.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for expected in &names {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
            if name != expected {
                return Err(Error::Corrupt(format!(
                    "found tensor {name:?} where {expected:?} belongs"
                )));
            }
            let rank = r.u32()?;
            if rank != 2 {
                return Err(Error::Corrupt(format!("{name} has rank {rank}")));
            }
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| {
                    Error::Corrupt(format!("{name} payload of {rows} x {cols} is truncated"))
                })?;
            let data = r
                .take(8 * n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor::new(rows, cols, data)?);
        }
        if r.remaining() != 0 {
            return Err(Error::Corrupt(format!("{} trailing bytes", r.remaining())));
        }
        let target: [Tensor; 11] = tensors.split_off(11).try_into().expect("eleven tensors");
        let source: [Tensor; 11] = tensors.try_into().expect("eleven tensors");
        let corrupt = |e: Error| match e {
            Error::ShapeMismatch(m) => Error::Corrupt(m),
            other => other,
        };
        Ok(ModelParams {
            source: DomainParams::from_tensors(source).map_err(corrupt)?,
            target: DomainParams::from_tensors(target).map_err(corrupt)?,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Corrupt(format!(
                "truncated at byte {}: wanted {n} more, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn checkpoint_save(params: &ModelParams, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&params.encode_checkpoint())?;
    f.sync_all()?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<ModelParams> {
    ModelParams::decode_checkpoint(&fs::read(path)?)
}
