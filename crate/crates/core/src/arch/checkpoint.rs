//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"ULMV"  u32 version
//! 20 × u32 configuration fields
//! repeated until EOF:
//!   u32 name_len, name bytes (UTF-8)
//!   u32 rank, rank × u64 extents
//!   numel × f64
//! ```
//!
//! Trainable parameters come first in model order, then the batch-norm
//! buffers. Values are stored bit-for-bit, so a save/load round trip
//! reproduces inference outputs exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::{ChannelShare, ModelConfig};
use super::model::Model;
use crate::error::{Error, Result};


pub const MAGIC: &[u8; 4] = b"ULMV";
pub const VERSION: u32 = 1;
const CONFIG_FIELDS: usize = 20;

fn bad(msg: impl Into<String>) -> Error {
    Error::BadCheckpoint(msg.into())
}

fn encode_config(c: &ModelConfig) -> [u32; CONFIG_FIELDS] {
    let mut out = [0u32; CONFIG_FIELDS];
    for (o, &ch) in out.iter_mut().zip(&c.channels) {
        *o = ch as u32;
    }
    let rest = [
        c.input_channels,
        c.input_size[0],
        c.input_size[1],
        c.branches_per_pvm,
        c.conv_stages,
        c.pvm_stages,
        c.d_state,
        c.expand,
        c.conv_k,
        c.dt_rank.unwrap_or(0),
        c.head_hidden,
        c.num_outputs,
        c.bidirectional as usize,
        match c.scab_shared {
            ChannelShare::Conv1d => 0,
            ChannelShare::Linear => 1,
        },
    ];
    for (o, v) in out[6..].iter_mut().zip(rest) {
        *o = v as u32;
    }
    out
}

fn decode_config(f: &[u32; CONFIG_FIELDS]) -> Result<ModelConfig> {
    let u = |i: usize| f[i] as usize;
    let mut channels = [0; 6];
    for (c, &v) in channels.iter_mut().zip(f) {
        *c = v as usize;
    }
    let flag = |i: usize, what: &str| match f[i] {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(bad(format!("{what} flag has value {v}"))),
    };
    Ok(ModelConfig {
        channels,
        input_channels: u(6),
        input_size: [u(7), u(8)],
        branches_per_pvm: u(9),
        conv_stages: u(10),
        pvm_stages: u(11),
        d_state: u(12),
        expand: u(13),
        conv_k: u(14),
        dt_rank: if f[15] == 0 { None } else { Some(u(15)) },
        head_hidden: u(16),
        num_outputs: u(17),
        bidirectional: flag(18, "bidirectional")?,
        scab_shared: if flag(19, "scab_shared")? { ChannelShare::Linear } else { ChannelShare::Conv1d },
    })
}

/// Serializes a model to any writer.
pub fn write_model(model: &Model, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in encode_config(&model.config) {
        w.write_all(&v.to_le_bytes())?;
    }
    for (name, t) in model.params.iter().chain(model.buffers.iter()) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Serializes a model to bytes.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    write_model(model, &mut out).expect("writing to a Vec cannot fail");
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Parses a checkpoint, validating every tensor against the architecture its
/// header describes.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    cur.pos = 4;
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut fields = [0u32; CONFIG_FIELDS];
    for f in fields.iter_mut() {
        *f = cur.u32("config")?;
    }
    let config = decode_config(&fields)?;
    config.validate().map_err(|e| bad(format!("invalid config: {e}")))?;
    let mut model = Model::new(config, 0)?;
    let mut seen = std::collections::HashSet::new();
    while !cur.done() {
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| bad("tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        if rank > 8 {
            return Err(bad(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("extent")? as usize);
        }
        let slot = match model.params.get_mut(&name) {
            Some(t) => t,
            None => model.buffers.get_mut(&name).ok_or_else(|| bad(format!("unexpected tensor {name}")))?,
        };
        if slot.shape() != shape.as_slice() {
            return Err(bad(format!("{name}: shape {shape:?}, expected {:?}", slot.shape())));
        }
        let raw = cur.take(slot.numel() * 8, &name)?;
        for (v, b) in slot.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().unwrap());
        }
        if !seen.insert(name.clone()) {
            return Err(bad(format!("duplicate tensor {name}")));
        }
    }
    let expected = model.params.len() + model.buffers.len();
    if seen.len() != expected {
        let missing: Vec<&str> = model
            .params
            .names()
            .chain(model.buffers.names())
            .filter(|n| !seen.contains(*n))
            .collect();
        return Err(bad(format!("missing tensors: {}", missing.join(", "))));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_model(model, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    File::open(path)
        .map(BufReader::new)
        .and_then(|mut r| r.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

