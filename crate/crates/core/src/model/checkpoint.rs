//! Binary checkpoint: magic, version, a UTF-8 header block, then named
//! tensors with little-endian `f32` payloads.

use std::fmt::Write as _;
use std::path::Path;

use super::{CatsModel, ModelConfig};
use crate::corpus::{CharVocab, LabelVocab};
use crate::embeddings::{ContextMode, ContextProvider, StaticTable, VectorStore};
use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CATS";
pub const CHECKPOINT_VERSION: u32 = 1;

const TABLE_TENSOR: &str = "ctx.table";

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: impl Iterator<Item = f32>) {
    put_str(out, name);
    put_u32(out, dims.len() as u32);
    for &d in dims {
        put_u32(out, d as u32);
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in checkpoint".into()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.string()?;
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 2 {
            return Err(Error::Format(format!("tensor {name} has rank {rank}")));
        }
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Format(format!("tensor {name} has bad extents {dims:?}")))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, Tensor::new(dims, data)?))
    }
}

fn header(model: &CatsModel<f32>, run: &str) -> String {
    let c = &model.config;
    let mut h = String::from("[config]\n");
    let kv = [
        ("d_char", c.d_char.to_string()),
        ("d_enc", c.d_enc.to_string()),
        ("d_dec", c.d_dec.to_string()),
        ("d_att", c.d_att.to_string()),
        ("joint", c.joint.to_string()),
        ("use_sentence_vector", c.use_sentence_vector.to_string()),
        ("char_encoder_enabled", c.char_encoder_enabled.to_string()),
        ("max_decode_factor", c.max_decode_factor.to_string()),
        ("max_decode_slack", c.max_decode_slack.to_string()),
        ("dropout", c.dropout.to_string()),
        ("context", model.provider.mode().to_string()),
        ("context_dim", model.provider.dim().to_string()),
        ("sentence_dim", model.shapes.sent.to_string()),
    ];
    for (k, v) in kv {
        let _ = writeln!(h, "{k}={v}");
    }
    h.push_str("[chars]\n");
    let cps: Vec<String> = model.chars.chars().iter().map(|&ch| format!("{:x}", ch as u32)).collect();
    let _ = writeln!(h, "{}", cps.join(" "));
    h.push_str("[labels]\n");
    for l in model.labels.labels() {
        let _ = writeln!(h, "{l}");
    }
    h.push_str("[table]\n");
    if let Some(t) = model.provider.static_table() {
        for k in t.keys() {
            let _ = writeln!(h, "{k}");
        }
    }
    h.push_str("[run]\n");
    h.push_str(run);
    h
}

#[derive(Default)]
struct Header {
    config: Vec<(String, String)>,
    chars: Vec<String>,
    labels: Vec<String>,
    table: Vec<String>,
    run: String,
}

fn parse_header(text: &str) -> Result<Header> {
    let mut h = Header::default();
    let mut section = "";
    let mut rest = text;
    while !rest.is_empty() {
        let (line, tail) = match rest.split_once('\n') {
            Some((l, t)) => (l, t),
            None => (rest, ""),
        };
        if section == "[run]" {
            h.run = rest.to_string();
            break;
        }
        rest = tail;
        if line.starts_with('[') && line.ends_with(']') {
            section = match line {
                "[config]" => "[config]",
                "[chars]" => "[chars]",
                "[labels]" => "[labels]",
                "[table]" => "[table]",
                "[run]" => "[run]",
                other => return Err(Error::Format(format!("unknown checkpoint section {other}"))),
            };
            continue;
        }
        match section {
            "[config]" => {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Format(format!("bad config line {line:?}")))?;
                h.config.push((k.to_string(), v.to_string()));
            }
            "[chars]" => h.chars.extend(line.split_whitespace().map(str::to_string)),
            "[labels]" => h.labels.push(line.to_string()),
            "[table]" => h.table.push(line.to_string()),
            _ => return Err(Error::Format("checkpoint header does not start with [config]".into())),
        }
    }
    Ok(h)
}

impl Header {
    fn get(&self, key: &str) -> Result<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))
    }

    fn num(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Format(format!("bad value for {key}")))
    }

    fn real(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Format(format!("bad value for {key}")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Format(format!("bad value for {key}")))
    }
}

impl CatsModel<f32> {
    /// Serializes the model; `run` is stored verbatim and returned by
    /// [`CatsModel::from_checkpoint_bytes`].
    pub fn to_checkpoint_bytes(&self, run: &str) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_str(&mut out, &header(self, run));
        let table = self.provider.static_table();
        put_u32(&mut out, (self.params.len() + table.is_some() as usize) as u32);
        for (_, p) in self.params.iter() {
            put_tensor(&mut out, &p.name, p.value.dims(), p.value.data().iter().copied());
        }
        if let Some(t) = table {
            let data = t.keys().iter().flat_map(|k| t.lookup(k).iter().copied());
            put_tensor(&mut out, TABLE_TENSOR, &[t.len(), t.dim()], data);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>, run: &str) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes(run))?;
        Ok(())
    }

    /// Inverse of [`CatsModel::to_checkpoint_bytes`]. Models using external
    /// vectors come back with an empty store; attach one with
    /// [`CatsModel::set_vector_store`].
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let h = parse_header(&r.string()?)?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        let mut table_data = None;
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            if name == TABLE_TENSOR {
                table_data = Some(t);
            } else {
                params.add(name, t);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after {count} tensors",
                bytes.len() - r.pos
            )));
        }

        let config = ModelConfig {
            d_char: h.num("d_char")?,
            d_enc: h.num("d_enc")?,
            d_dec: h.num("d_dec")?,
            d_att: h.num("d_att")?,
            joint: h.flag("joint")?,
            use_sentence_vector: h.flag("use_sentence_vector")?,
            char_encoder_enabled: h.flag("char_encoder_enabled")?,
            max_decode_factor: h.num("max_decode_factor")?,
            max_decode_slack: h.num("max_decode_slack")?,
            dropout: h.real("dropout")?,
        };
        let mut chars = CharVocab::new();
        for cp in &h.chars {
            let ch = u32::from_str_radix(cp, 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| Error::Format(format!("bad character code {cp}")))?;
            chars.insert(ch);
        }
        let labels = LabelVocab::from_labels(&h.labels);
        let dim = h.num("context_dim")?;
        let mode: ContextMode = h.get("context")?.parse()?;
        let table = match table_data {
            Some(t) => {
                if t.dims() != [h.table.len(), t.cols()] {
                    return Err(Error::Format("static table does not match its key list".into()));
                }
                let entries = h.table.iter().cloned().zip(t.data().chunks(t.cols()).map(<[f32]>::to_vec));
                Some(StaticTable::from_entries(t.cols(), entries)?)
            }
            None => None,
        };
        let missing = || Error::Format(format!("{mode} checkpoint without a static table"));
        let provider = match mode {
            ContextMode::Zeros => ContextProvider::zeros(dim)?,
            ContextMode::Static => ContextProvider::Static {
                table: table.ok_or_else(missing)?,
            },
            ContextMode::Rnn => ContextProvider::rnn_from_params(table.ok_or_else(missing)?, &params)?,
            ContextMode::External => ContextProvider::External {
                store: VectorStore::new(dim),
            },
        };
        if provider.dim() != dim {
            return Err(Error::Format("context width disagrees with the header".into()));
        }
        let model = CatsModel::from_parts(config, chars, labels, provider, params, h.num("sentence_dim")?)?;
        Ok((model, h.run))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }
}
