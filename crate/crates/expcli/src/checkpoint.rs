//! Binary network checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RSA1"  u32 version  u32 layer_count
//! per layer:
//!   u8 kind  u8 activation  u8 scheme  u64 steps_since_factorize  u32 tensor_count
//!   per tensor: u32 name_len  name  u32 rows  u32 cols  rows·cols × f64
//! ```
//!
//! `scheme` and `steps_since_factorize` are zero for non-ROSA layers.

use std::path::Path;

use rosa_core::adapters::{AdapterState, FullAdapter, Ia3Adapter, LoraAdapter, RosaAdapter};
use rosa_core::network::{Activation, DenseLayer, Mlp};
use rosa_core::{Matrix, SamplingScheme};

use crate::error::{ExpError, Result};

pub const MAGIC: &[u8; 4] = b"RSA1";
pub const VERSION: u32 = 1;

const KIND_FULL: u8 = 0;
const KIND_ROSA: u8 = 1;
const KIND_LORA: u8 = 2;
const KIND_IA3: u8 = 3;

fn tensor_names(kind: u8) -> Option<&'static [&'static str]> {
    match kind {
        KIND_FULL => Some(&["weight", "original", "bias"]),
        KIND_ROSA => Some(&["w_fixed", "a", "b", "original", "bias"]),
        KIND_LORA => Some(&["w_frozen", "a", "b", "bias"]),
        KIND_IA3 => Some(&["w_frozen", "scale", "bias"]),
        _ => None,
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, m: &Matrix) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, m.rows());
    put_u32(out, m.cols());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(net: &Mlp) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, net.layers().len());
    for (i, layer) in net.layers().iter().enumerate() {
        let (kind, scheme, steps, tensors): (u8, u8, u64, Vec<&Matrix>) = match &layer.adapter {
            AdapterState::Full(f) => (KIND_FULL, 0, 0, vec![f.weight(), f.original()]),
            AdapterState::Rosa(r) => (
                KIND_ROSA,
                r.scheme().code(),
                r.steps_since_factorize(),
                vec![r.w_fixed(), r.a(), r.b(), r.original()],
            ),
            AdapterState::Lora(l) => (KIND_LORA, 0, 0, vec![l.w_frozen(), l.a(), l.b()]),
            AdapterState::Ia3(a) => (KIND_IA3, 0, 0, vec![a.w_frozen(), a.scale()]),
        };
        out.push(kind);
        out.push(layer.activation.code());
        out.push(scheme);
        out.extend_from_slice(&steps.to_le_bytes());
        let names = tensor_names(kind).expect("known kind");
        put_u32(&mut out, names.len());
        for (name, t) in names.iter().zip(tensors.into_iter().chain([&layer.bias])) {
            put_tensor(&mut out, &format!("layer{i}.{name}"), t);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, at: usize, message: impl Into<String>) -> Result<T> {
        Err(ExpError::Format {
            offset: at as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&end| end <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => self.fail(self.pos, format!("truncated while reading {what}")),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self, expected: &str) -> Result<Matrix> {
        let start = self.pos;
        let len = self.u32("tensor name length")?;
        let name = self.take(len, "tensor name")?;
        if name != expected.as_bytes() {
            return self.fail(
                start,
                format!("expected tensor {expected:?}, found {:?}", String::from_utf8_lossy(name)),
            );
        }
        let rows = self.u32("tensor rows")?;
        let cols = self.u32("tensor cols")?;
        let count = rows
            .checked_mul(cols)
            .filter(|c| c.checked_mul(8).is_some())
            .ok_or_else(|| ExpError::Format {
                offset: start as u64,
                message: format!("tensor {expected} shape {rows}x{cols} overflows"),
            })?;
        let data_at = self.pos;
        let raw = self.take(count * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Matrix::new(rows, cols, data).or_else(|e| self.fail(data_at, format!("tensor {expected}: {e}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Mlp> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return r.fail(0, "bad magic, not a checkpoint");
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return r.fail(4, format!("unsupported version {version}"));
    }
    let layer_count = r.u32("layer count")?;
    if layer_count == 0 {
        return r.fail(8, "checkpoint has no layers");
    }
    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for i in 0..layer_count {
        let layer_at = r.pos;
        let kind = r.u8("layer kind")?;
        let act_code = r.u8("activation")?;
        let scheme_code = r.u8("scheme")?;
        let steps = r.u64("steps since factorize")?;
        let Some(names) = tensor_names(kind) else {
            return r.fail(layer_at, format!("unknown layer kind {kind}"));
        };
        let Some(activation) = Activation::from_code(act_code) else {
            return r.fail(layer_at + 1, format!("unknown activation {act_code}"));
        };
        let count_at = r.pos;
        if r.u32("tensor count")? != names.len() {
            return r.fail(count_at, format!("layer {i} has the wrong tensor count"));
        }
        let mut t: Vec<Matrix> = Vec::with_capacity(names.len());
        for name in names {
            t.push(r.tensor(&format!("layer{i}.{name}"))?);
        }
        let bias = t.pop().expect("bias is always stored");
        let mut t = t.into_iter();
        let mut next = || t.next().expect("tensor count checked");
        let adapter = match kind {
            KIND_FULL => FullAdapter::from_parts(next(), next()).map(AdapterState::Full),
            KIND_ROSA => {
                let Some(scheme) = SamplingScheme::from_code(scheme_code) else {
                    return r.fail(layer_at + 2, format!("unknown scheme {scheme_code}"));
                };
                RosaAdapter::from_parts(next(), next(), next(), scheme, steps, next()).map(AdapterState::Rosa)
            }
            KIND_LORA => LoraAdapter::from_parts(next(), next(), next()).map(AdapterState::Lora),
            _ => Ia3Adapter::from_parts(next(), next()).map(AdapterState::Ia3),
        };
        let layer = adapter
            .and_then(|a| DenseLayer::new(a, bias, activation))
            .or_else(|e| r.fail(layer_at, format!("layer {i}: {e}")))?;
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Mlp::new(layers).or_else(|e| r.fail(0, e.to_string()))
}

pub fn save_checkpoint(net: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net)).map_err(|e| ExpError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    let bytes = std::fs::read(path).map_err(|e| ExpError::io(path, e))?;
    decode(&bytes)
}
