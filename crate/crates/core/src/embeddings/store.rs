use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Surface-keyed vectors with a fallback row for unknown keys.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticTable {
    dim: usize,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    rows: Vec<f32>,
    unk: Vec<f32>,
    duplicates: Vec<String>,
}

impl StaticTable {
    /// Builds a table from `(key, vector)` pairs. Later duplicates replace
    /// earlier ones. The unknown row is the mean of the kept rows.
    pub fn from_entries(dim: usize, entries: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("static table dimension must be positive"));
        }
        let mut t = StaticTable {
            dim,
            keys: Vec::new(),
            index: HashMap::new(),
            rows: Vec::new(),
            unk: vec![0.0; dim],
            duplicates: Vec::new(),
        };
        for (key, v) in entries {
            if v.len() != dim {
                return Err(Error::invalid(format!("vector for {key:?} has width {}, expected {dim}", v.len())));
            }
            t.insert(key, &v);
        }
        t.recompute_unk();
        Ok(t)
    }

    fn insert(&mut self, key: String, v: &[f32]) {
        if let Some(&i) = self.index.get(&key) {
            warn!("duplicate static vector for {key:?}; keeping the last one");
            self.duplicates.push(key);
            self.rows[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
        } else {
            self.index.insert(key.clone(), self.keys.len());
            self.keys.push(key);
            self.rows.extend_from_slice(v);
        }
    }

    fn recompute_unk(&mut self) {
        let n = self.keys.len();
        let mut unk = vec![0.0f64; self.dim];
        for row in self.rows.chunks(self.dim) {
            for (u, &x) in unk.iter_mut().zip(row) {
                *u += x as f64;
            }
        }
        self.unk = unk.iter().map(|&u| if n == 0 { 0.0 } else { (u / n as f64) as f32 }).collect();
    }

    /// Uniform(-0.5, 0.5) vectors for `keys`, deterministic in `seed`.
    pub fn random<S: AsRef<str>>(keys: impl IntoIterator<Item = S>, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for k in keys {
            let k = k.as_ref().to_string();
            if seen.insert(k.clone()) {
                let v = (0..dim).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
                entries.push((k, v));
            }
        }
        Self::from_entries(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn duplicates(&self) -> &[String] {
        &self.duplicates
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index.get(key).map(|&i| &self.rows[i * self.dim..(i + 1) * self.dim])
    }

    pub fn unk(&self) -> &[f32] {
        &self.unk
    }

    /// The row for `key`, or the unknown row.
    pub fn lookup(&self, key: &str) -> &[f32] {
        self.get(key).unwrap_or(&self.unk)
    }

    /// Text format: `<count> <dim>` header, then `<key> <f_1> ... <f_dim>`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
        let mut h = header.split_whitespace();
        let count: usize = h
            .next()
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| Error::parse(1, "header must be `<count> <dim>`"))?;
        let dim: usize = h
            .next()
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| Error::parse(1, "header must be `<count> <dim>`"))?;
        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines {
            let mut parts = line.split(' ').filter(|p| !p.is_empty());
            let key = parts.next().ok_or_else(|| Error::parse(i + 1, "empty row"))?.to_string();
            let v: Vec<f32> = parts
                .map(|p| p.parse().map_err(|_| Error::parse(i + 1, format!("bad float {p:?}"))))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(Error::parse(i + 1, format!("row has {} values, header says {dim}", v.len())));
            }
            entries.push((key, v));
        }
        if entries.len() != count {
            return Err(Error::Format(format!("header announces {count} rows, found {}", entries.len())));
        }
        Self::from_entries(dim, entries)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for k in &self.keys {
            out.push_str(k);
            for x in self.lookup(k) {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_static_table(path: impl AsRef<Path>) -> Result<StaticTable> {
    StaticTable::parse(&std::fs::read_to_string(path)?)
}

const CTX_MAGIC: &str = "CTXV1";

/// Contextual vectors keyed by `(sent_id, token_index)`, plus optional
/// sentence vectors (stored under token index -1 in the file).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VectorStore {
    dim: usize,
    tokens: BTreeMap<(String, usize), Vec<f32>>,
    sentences: BTreeMap<String, Vec<f32>>,
}

impl VectorStore {
    pub fn new(dim: usize) -> Self {
        VectorStore {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len() + self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_sentence_vectors(&self) -> bool {
        !self.sentences.is_empty()
    }

    fn check(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::invalid(format!("vector of width {} in store of width {}", v.len(), self.dim)));
        }
        Ok(())
    }

    pub fn insert_token(&mut self, sent_id: &str, token_index: usize, v: Vec<f32>) -> Result<()> {
        self.check(&v)?;
        self.tokens.insert((sent_id.to_string(), token_index), v);
        Ok(())
    }

    pub fn insert_sentence(&mut self, sent_id: &str, v: Vec<f32>) -> Result<()> {
        self.check(&v)?;
        self.sentences.insert(sent_id.to_string(), v);
        Ok(())
    }

    pub fn token(&self, sent_id: &str, token_index: usize) -> Option<&[f32]> {
        self.tokens.get(&(sent_id.to_string(), token_index)).map(Vec::as_slice)
    }

    pub fn sentence(&self, sent_id: &str) -> Option<&[f32]> {
        self.sentences.get(sent_id).map(Vec::as_slice)
    }

    pub fn require_token(&self, sent_id: &str, token_index: usize) -> Result<&[f32]> {
        self.token(sent_id, token_index).ok_or_else(|| Error::MissingVector {
            sent_id: sent_id.to_string(),
            token_index: token_index as i64,
        })
    }

    pub fn require_sentence(&self, sent_id: &str) -> Result<&[f32]> {
        self.sentence(sent_id).ok_or_else(|| Error::MissingVector {
            sent_id: sent_id.to_string(),
            token_index: -1,
        })
    }

    /// Adds every record of `other`; widths must agree.
    pub fn merge(&mut self, other: VectorStore) -> Result<()> {
        if self.is_empty() && self.dim == 0 {
            self.dim = other.dim;
        }
        if other.dim != self.dim {
            return Err(Error::Format(format!("cannot merge stores of width {} and {}", self.dim, other.dim)));
        }
        self.tokens.extend(other.tokens);
        self.sentences.extend(other.sentences);
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Format("empty vector store".into()))?;
        let mut h = header.split_whitespace();
        if h.next() != Some(CTX_MAGIC) {
            return Err(Error::Format(format!("expected {CTX_MAGIC} header, got {header:?}")));
        }
        let dim: usize = h
            .next()
            .and_then(|d| d.parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::Format("missing vector width".into()))?;
        let mut store = VectorStore::new(dim);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(i + 1, "records are `sent_id<TAB>token_index<TAB>values`"));
            }
            let idx: i64 = cols[1].parse().map_err(|_| Error::parse(i + 1, "bad token index"))?;
            let v: Vec<f32> = cols[2]
                .split(' ')
                .filter(|p| !p.is_empty())
                .map(|p| p.parse().map_err(|_| Error::parse(i + 1, format!("bad float {p:?}"))))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(Error::parse(i + 1, format!("record has {} values, header says {dim}", v.len())));
            }
            match idx {
                -1 => store.insert_sentence(cols[0], v)?,
                i if i >= 0 => store.insert_token(cols[0], i as usize, v)?,
                _ => return Err(Error::parse(i + 1, format!("token index {idx} < -1"))),
            }
        }
        Ok(store)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CTX_MAGIC} {}\n", self.dim);
        let fmt = |out: &mut String, id: &str, idx: i64, v: &[f32]| {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{id}\t{idx}\t{}", vals.join(" "));
        };
        for (id, v) in &self.sentences {
            fmt(&mut out, id, -1, v);
        }
        for ((id, idx), v) in &self.tokens {
            fmt(&mut out, id, *idx as i64, v);
        }
        out
    }
}

pub fn load_vector_store(path: impl AsRef<Path>) -> Result<VectorStore> {
    VectorStore::parse(&std::fs::read_to_string(path)?)
}
