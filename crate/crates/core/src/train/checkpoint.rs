use std::fs;
use std::path::Path;

use super::optim::Adadelta;
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CSTR";
pub const VERSION: u32 = 1;
/// Name prefix of optimizer-state records.
pub const OPT_PREFIX: &str = "__opt__.";
/// Name prefix of trainer-state records.
pub const TRAINER_PREFIX: &str = "__trainer__.";

/// Parameters, optimizer state and step count, in a fixed record order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    /// Canonical configuration text of the run that produced the file.
    pub config: String,
    pub records: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn capture(
        step: u64,
        config: String,
        store: &ParameterStore<f32>,
        opt: &Adadelta<f32>,
        extra: Vec<(String, Tensor<f32>)>,
    ) -> Self {
        let mut records: Vec<(String, Tensor<f32>)> =
            store.iter().map(|(n, t, _)| (n.to_string(), t.clone())).collect();
        for (n, t) in &opt.sq_grad {
            records.push((format!("{OPT_PREFIX}sq_grad.{n}"), t.clone()));
        }
        for (n, t) in &opt.sq_delta {
            records.push((format!("{OPT_PREFIX}sq_delta.{n}"), t.clone()));
        }
        records.extend(extra.into_iter().map(|(n, t)| (format!("{TRAINER_PREFIX}{n}"), t)));
        Checkpoint { step, config, records }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Trainer record stored under [`TRAINER_PREFIX`].
    pub fn trainer_record(&self, name: &str) -> Option<&Tensor<f32>> {
        self.get(&format!("{TRAINER_PREFIX}{name}"))
    }

    /// Writes parameters into `store` (every store entry must be present)
    /// and replaces the optimizer accumulators.
    pub fn restore(&self, store: &mut ParameterStore<f32>, opt: &mut Adadelta<f32>) -> Result<()> {
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for name in &names {
            let t = self
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            store.set(name, t.clone())?;
        }
        opt.sq_grad.clear();
        opt.sq_delta.clear();
        for (n, t) in &self.records {
            if let Some(rest) = n.strip_prefix(OPT_PREFIX) {
                if let Some(p) = rest.strip_prefix("sq_grad.") {
                    opt.sq_grad.insert(p.to_string(), t.clone());
                } else if let Some(p) = rest.strip_prefix("sq_delta.") {
                    opt.sq_delta.insert(p.to_string(), t.clone());
                } else {
                    return Err(Error::Checkpoint(format!("unknown optimizer record `{n}`")));
                }
            } else if !n.starts_with(TRAINER_PREFIX) && !store.contains(n) {
                return Err(Error::Checkpoint(format!("unexpected tensor `{n}`")));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        put_str(&mut out, &self.config);
        for (name, t) in &self.records {
            put_str(&mut out, name);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic (not a checkpoint file)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let step = r.u64()?;
        let config = r.string()?;
        let mut records = Vec::new();
        while r.pos < bytes.len() {
            let name = r.string()?;
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::new(&shape, data)
                .map_err(|e| Error::Checkpoint(format!("record `{name}`: {e}")))?;
            records.push((name, tensor));
        }
        Ok(Checkpoint { step, config, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
}
