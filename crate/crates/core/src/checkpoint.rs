//! Versioned little-endian checkpoint files.
//!
//! ```text
//! magic "RDNSCKPT" | u32 version | str precision | str spec-json | str config-json
//! u64 next_epoch
//! u32 n_params  { str path | u8 kind | u32 ndim | u64 dims.. | values | u8 has_velocity | velocity? }
//! u32 n_stats   { str path | u32 channels | mean | var }
//! "END!"
//! ```
//!
//! `str` is a `u32` byte length followed by UTF-8; `values` are `T::BYTES` each.

use std::io::Write;
use std::path::Path;

use crate::arch::ArchSpec;
use crate::autograd::RunningStats;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Real, Tensor};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"RDNSCKPT";
pub const VERSION: u32 = 1;
const TRAILER: &[u8; 4] = b"END!";

/// Everything needed to continue a run.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real = f64> {
    pub network: Network<T>,
    pub config: Option<TrainConfig>,
    pub next_epoch: usize,
}

/// Header fields readable without knowing the precision.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub precision: String,
    pub spec: ArchSpec,
    pub config: Option<TrainConfig>,
    pub next_epoch: usize,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_values<T: Real>(out: &mut Vec<u8>, v: &[T]) {
    for &x in v {
        x.write_le(out);
    }
}

pub fn encode<T: Real>(net: &Network<T>, config: Option<&TrainConfig>, next_epoch: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, T::NAME);
    put_str(&mut out, &serde_json::to_string(net.spec()).expect("spec serializes"));
    let cfg = config.map_or(String::new(), |c| serde_json::to_string(c).expect("config serializes"));
    put_str(&mut out, &cfg);
    put_u64(&mut out, next_epoch as u64);

    put_u32(&mut out, net.params().len() as u32);
    for p in net.params().iter() {
        put_str(&mut out, &p.path);
        out.push(p.kind.code());
        put_u32(&mut out, p.value.ndim() as u32);
        for &d in p.value.shape() {
            put_u64(&mut out, d as u64);
        }
        put_values(&mut out, p.value.data());
        match &p.velocity {
            Some(v) => {
                out.push(1);
                put_values(&mut out, v.data());
            }
            None => out.push(0),
        }
    }
    let stats: Vec<_> = net.running_stats().collect();
    put_u32(&mut out, stats.len() as u32);
    for (path, s) in stats {
        put_str(&mut out, path);
        put_u32(&mut out, s.channels() as u32);
        put_values(&mut out, &s.mean);
        put_values(&mut out, &s.var);
    }
    out.extend_from_slice(TRAILER);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated at byte {} while reading {what}",
                self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn str(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?)
            .map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }

    fn values<T: Real>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let bytes = n
            .checked_mul(T::BYTES)
            .ok_or_else(|| Error::Checkpoint(format!("{what} size overflows")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect())
    }
}

fn read_header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads version {VERSION})"
        )));
    }
    let precision = r.str("precision")?.to_string();
    let spec: ArchSpec = serde_json::from_str(r.str("spec")?)
        .map_err(|e| Error::Checkpoint(format!("embedded spec is invalid: {e}")))?;
    let cfg = r.str("config")?;
    let config = if cfg.is_empty() {
        None
    } else {
        Some(
            serde_json::from_str(cfg)
                .map_err(|e| Error::Checkpoint(format!("embedded config is invalid: {e}")))?,
        )
    };
    let next_epoch = r.u64("next epoch")? as usize;
    Ok(CheckpointHeader {
        version,
        precision,
        spec,
        config,
        next_epoch,
    })
}

pub fn decode_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    read_header(&mut Reader { bytes, pos: 0 })
}

/// Decode a checkpoint; with `expected`, the embedded spec must match it.
pub fn decode<T: Real>(bytes: &[u8], expected: Option<&ArchSpec>) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let h = read_header(&mut r)?;
    if h.precision != T::NAME {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} values, requested {}",
            h.precision,
            T::NAME
        )));
    }
    if let Some(want) = expected {
        let diff = h.spec.diff(want);
        if !diff.is_empty() {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch (checkpoint != requested): {}",
                diff.join("; ")
            )));
        }
    }
    let mut params = ParamStore::new();
    let n = r.u32("parameter count")?;
    for _ in 0..n {
        let path = r.str("parameter path")?.to_string();
        let kind = ParamKind::from_code(r.u8("parameter kind")?)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter kind for '{path}'")))?;
        let ndim = r.u32("rank")? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| Error::Checkpoint(format!("shape of '{path}' overflows")))?;
        let value = Tensor::new(&shape, r.values(len, &path)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let velocity = match r.u8("velocity flag")? {
            0 => None,
            1 => Some(
                Tensor::new(&shape, r.values(len, &path)?)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
            ),
            f => return Err(Error::Checkpoint(format!("bad velocity flag {f} for '{path}'"))),
        };
        let id = params.insert(path, kind, value)?;
        params.get_mut(id).velocity = velocity;
    }
    let n = r.u32("statistics count")?;
    let mut stats = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let path = r.str("statistics path")?.to_string();
        let c = r.u32("channels")? as usize;
        let mean = r.values(c, &path)?;
        let var = r.values(c, &path)?;
        stats.push((path, RunningStats { mean, var }));
    }
    if r.take(4, "trailer")? != TRAILER {
        return Err(Error::Checkpoint("missing end marker".into()));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected bytes after the end marker",
            bytes.len() - r.pos
        )));
    }
    let network = Network::from_state(&h.spec, params, stats)?;
    Ok(Checkpoint {
        network,
        config: h.config,
        next_epoch: h.next_epoch,
    })
}

/// Write atomically: a sibling temporary file is renamed over `path`.
pub fn save<T: Real>(
    net: &Network<T>,
    config: Option<&TrainConfig>,
    next_epoch: usize,
    path: &Path,
) -> Result<()> {
    let bytes = encode(net, config, next_epoch);
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path, expected: Option<&ArchSpec>) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected)
}

pub fn load_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_header(&bytes)
}

/// Save only the network (no optimizer position).
pub fn save_checkpoint<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    save(net, None, 0, path)
}

/// Load a network whose architecture must equal `spec`.
pub fn load_checkpoint<T: Real>(path: &Path, spec: &ArchSpec) -> Result<Network<T>> {
    Ok(load::<T>(path, Some(spec))?.network)
}
