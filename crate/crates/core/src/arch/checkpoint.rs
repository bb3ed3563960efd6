//! Checkpoint container.
//!
//! ```text
//! magic    "TKCK"
//! version  u32 LE
//! header   u32 LE byte length + UTF-8 key=value text (arch config + epoch)
//! count    u32 LE
//! records  u16 LE name length + UTF-8 name + TKTN tensor
//! ```
//!
//! Optimizer state is stored as ordinary records under the `opt.` prefix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ArchConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::kv;
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::{Precision, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TKCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const OPT_PREFIX: &str = "opt.";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ArchConfig,
    pub epoch: u32,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Snapshot of every parameter and buffer of `model`.
    pub fn from_model(model: &Model, epoch: u32) -> Checkpoint {
        Checkpoint {
            config: model.config().clone(),
            epoch,
            tensors: model
                .tensors()
                .into_iter()
                .map(|(n, t, _)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    /// Adds optimizer tensors; `name` is stored as `opt.{name}`.
    pub fn with_optimizer_state(mut self, state: impl IntoIterator<Item = (String, Tensor)>) -> Checkpoint {
        self.tensors
            .extend(state.into_iter().map(|(n, t)| (format!("{OPT_PREFIX}{n}"), t)));
        self
    }

    pub fn model_tensors(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.tensors.iter().filter(|(n, _)| !n.starts_with(OPT_PREFIX))
    }

    /// Optimizer tensors with the `opt.` prefix stripped.
    pub fn optimizer_tensors(&self) -> Vec<(String, Tensor)> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(OPT_PREFIX).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    /// Rebuilds the model, optionally in a different precision.
    pub fn to_model(&self, precision: Option<Precision>) -> Result<Model> {
        let mut cfg = self.config.clone();
        if let Some(p) = precision {
            cfg.precision = p;
        }
        let mut model = Model::new(&cfg, 0)?;
        let tensors: Vec<(String, Tensor)> = self.model_tensors().cloned().collect();
        model.load_tensors(&tensors)?;
        Ok(model)
    }
}

fn eof(what: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated checkpoint: missing {what}"))
        } else {
            Error::RawIo(e)
        }
    }
}

pub fn write_checkpoint<W: Write>(w: &mut W, ck: &Checkpoint) -> Result<()> {
    let mut pairs = ck.config.to_pairs();
    pairs.push(("epoch".into(), ck.epoch.to_string()));
    let header = kv::render(&pairs);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    let count = u32::try_from(ck.tensors.len()).map_err(|_| Error::Invalid("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in &ck.tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Invalid(format!("tensor name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof("magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(eof("version"))?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut b4).map_err(eof("header length"))?;
    let mut header = vec![0u8; u32::from_le_bytes(b4) as usize];
    r.read_exact(&mut header).map_err(eof("header"))?;
    let header = String::from_utf8(header).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let mut pairs = kv::parse(&header)?;
    let epoch = match pairs.iter().position(|(k, _)| k == "epoch") {
        Some(i) => kv::parse_num("epoch", &pairs.remove(i).1)?,
        None => return Err(Error::Format("checkpoint header lacks epoch".into())),
    };
    let config = ArchConfig::from_kv(&kv::render(&pairs))?;
    r.read_exact(&mut b4).map_err(eof("tensor count"))?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2).map_err(eof("tensor name length"))?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut name).map_err(eof("tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        tensors.push((name, read_tensor(r)?));
    }
    Ok(Checkpoint { config, epoch, tensors })
}

/// Writes through a sibling temporary file and renames it into place.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let write = || -> Result<()> {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_checkpoint(&mut w, ck)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        Ok(())
    };
    if let Err(e) = write() {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(f))
}
