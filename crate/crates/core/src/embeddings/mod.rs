//! Per-token context vectors: zeros, a static surface table, a sentence
//! BiLSTM over a frozen static table, or externally computed vectors.

mod store;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use store::{load_static_table, load_vector_store, StaticTable, VectorStore};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::numeric::{run_bilstm, Graph, LstmParams, ParamStore, Scalar, Tensor, Var};

/// Parameter-name prefix of the contextualizer LSTMs.
pub const RNN_PREFIX: &str = "ctx.rnn";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextMode {
    Zeros,
    Static,
    Rnn,
    External,
}

impl FromStr for ContextMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(ContextMode::Zeros),
            "static" => Ok(ContextMode::Static),
            "rnn" => Ok(ContextMode::Rnn),
            "external" => Ok(ContextMode::External),
            other => Err(Error::invalid(format!("unknown embeddings mode {other:?}"))),
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::Zeros => "zeros",
            ContextMode::Static => "static",
            ContextMode::Rnn => "rnn",
            ContextMode::External => "external",
        })
    }
}

/// Everything needed to construct a [`ContextProvider`].
#[derive(Clone, Debug)]
pub enum ContextSpec {
    Zeros { dim: usize },
    Static { table: StaticTable },
    Rnn { table: StaticTable, hidden: usize },
    External { store: VectorStore },
}

impl ContextSpec {
    pub fn build<F: Scalar, R: Rng>(self, params: &mut ParamStore<F>, rng: &mut R) -> Result<ContextProvider> {
        match self {
            ContextSpec::Zeros { dim } => ContextProvider::zeros(dim),
            ContextSpec::Static { table } => Ok(ContextProvider::Static { table }),
            ContextSpec::Rnn { table, hidden } => ContextProvider::rnn(table, hidden, params, rng),
            ContextSpec::External { store } => {
                if store.dim() == 0 {
                    return Err(Error::invalid("external vector store has no width"));
                }
                Ok(ContextProvider::External { store })
            }
        }
    }
}

/// Source of the vector fed to the encoder alongside every character.
///
/// The static table is never trained. In rnn mode the two LSTMs live in the
/// model's parameter store under [`RNN_PREFIX`] and are trained with it.
#[derive(Clone, Debug, PartialEq)]
pub enum ContextProvider {
    Zeros { dim: usize },
    Static { table: StaticTable },
    Rnn { table: StaticTable, fwd: LstmParams, bwd: LstmParams },
    External { store: VectorStore },
}

impl ContextProvider {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("context dimension must be positive"));
        }
        Ok(ContextProvider::Zeros { dim })
    }

    /// Registers a fresh contextualizer with `hidden` units per direction.
    pub fn rnn<F: Scalar, R: Rng>(table: StaticTable, hidden: usize, params: &mut ParamStore<F>, rng: &mut R) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::invalid("rnn hidden size must be positive"));
        }
        let fwd = LstmParams::register(params, &format!("{RNN_PREFIX}.fwd"), table.dim(), hidden, rng);
        let bwd = LstmParams::register(params, &format!("{RNN_PREFIX}.bwd"), table.dim(), hidden, rng);
        Ok(ContextProvider::Rnn { table, fwd, bwd })
    }

    /// Rebinds a contextualizer whose parameters are already in `params`.
    pub fn rnn_from_params<F: Scalar>(table: StaticTable, params: &ParamStore<F>) -> Result<Self> {
        let fwd = LstmParams::lookup(params, &format!("{RNN_PREFIX}.fwd"))?;
        let bwd = LstmParams::lookup(params, &format!("{RNN_PREFIX}.bwd"))?;
        if fwd.input != table.dim() || bwd.input != table.dim() || fwd.hidden != bwd.hidden {
            return Err(Error::Format("contextualizer shapes do not match the static table".into()));
        }
        Ok(ContextProvider::Rnn { table, fwd, bwd })
    }

    pub fn mode(&self) -> ContextMode {
        match self {
            ContextProvider::Zeros { .. } => ContextMode::Zeros,
            ContextProvider::Static { .. } => ContextMode::Static,
            ContextProvider::Rnn { .. } => ContextMode::Rnn,
            ContextProvider::External { .. } => ContextMode::External,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ContextProvider::Zeros { dim } => *dim,
            ContextProvider::Static { table } => table.dim(),
            ContextProvider::Rnn { fwd, .. } => 2 * fwd.hidden,
            ContextProvider::External { store } => store.dim(),
        }
    }

    /// Width of sentence vectors, when the provider has any.
    pub fn sentence_dim(&self) -> Option<usize> {
        match self {
            ContextProvider::External { store } if store.has_sentence_vectors() => Some(store.dim()),
            _ => None,
        }
    }

    pub fn static_table(&self) -> Option<&StaticTable> {
        match self {
            ContextProvider::Static { table } | ContextProvider::Rnn { table, .. } => Some(table),
            _ => None,
        }
    }

    /// Swaps in a new store for an external provider (vectors for another
    /// split, say). Widths must agree.
    pub fn set_vector_store(&mut self, new: VectorStore) -> Result<()> {
        match self {
            ContextProvider::External { store } => {
                if new.dim() != store.dim() {
                    return Err(Error::invalid(format!(
                        "vector store has width {}, model expects {}",
                        new.dim(),
                        store.dim()
                    )));
                }
                *store = new;
                Ok(())
            }
            _ => Err(Error::invalid(format!("{} provider does not read a vector store", self.mode()))),
        }
    }

    /// Context vectors of `items` (sentence, token index), one row each.
    pub fn token_vectors<'a, F: Scalar>(
        &self,
        g: &mut Graph<'a, F>,
        params: &'a ParamStore<F>,
        items: &[(&Sentence, usize)],
    ) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::invalid("no tokens requested"));
        }
        for (s, i) in items {
            if *i >= s.tokens.len() {
                return Err(Error::invalid(format!(
                    "token index {i} out of range for sentence {:?} of {} tokens",
                    s.sent_id,
                    s.tokens.len()
                )));
            }
        }
        let dim = self.dim();
        match self {
            ContextProvider::Zeros { .. } => g.constant(Tensor::zeros(&[items.len(), dim])),
            ContextProvider::Static { table } => {
                let rows = items.iter().map(|(s, i)| table.lookup(&s.tokens[*i].surface));
                g.constant(rows_tensor(rows, dim)?)
            }
            ContextProvider::External { store } => {
                let rows = items
                    .iter()
                    .map(|(s, i)| store.require_token(&s.sent_id, *i))
                    .collect::<Result<Vec<_>>>()?;
                g.constant(rows_tensor(rows.into_iter(), dim)?)
            }
            ContextProvider::Rnn { table, fwd, bwd } => rnn_vectors(g, params, table, fwd, bwd, items),
        }
    }

    /// Sentence vectors of `items`, one row each.
    pub fn sentence_vectors<F: Scalar>(&self, g: &mut Graph<'_, F>, items: &[(&Sentence, usize)]) -> Result<Var> {
        match self {
            ContextProvider::External { store } => {
                let rows = items
                    .iter()
                    .map(|(s, _)| store.require_sentence(&s.sent_id))
                    .collect::<Result<Vec<_>>>()?;
                g.constant(rows_tensor(rows.into_iter(), store.dim())?)
            }
            _ => Err(Error::invalid(format!("{} provider has no sentence vectors", self.mode()))),
        }
    }

    /// The context vector of one token.
    pub fn vector_for<F: Scalar>(&self, params: &ParamStore<F>, sentence: &Sentence, token_index: usize) -> Result<Vec<F>> {
        let mut g = Graph::new();
        let v = self.token_vectors(&mut g, params, &[(sentence, token_index)])?;
        Ok(g.value(v).data().to_vec())
    }
}

fn rows_tensor<'r, F: Scalar>(rows: impl Iterator<Item = &'r [f32]>, dim: usize) -> Result<Tensor<F>> {
    let mut data = Vec::new();
    for r in rows {
        data.extend(r.iter().map(|&x| F::lit(x as f64)));
    }
    let n = data.len() / dim;
    Tensor::new(vec![n, dim], data)
}

/// Runs the contextualizer once over every distinct sentence in `items` and
/// gathers the requested positions.
fn rnn_vectors<'a, F: Scalar>(
    g: &mut Graph<'a, F>,
    params: &'a ParamStore<F>,
    table: &StaticTable,
    fwd: &LstmParams,
    bwd: &LstmParams,
    items: &[(&Sentence, usize)],
) -> Result<Var> {
    let mut sentences: Vec<&Sentence> = Vec::new();
    let mut slot = Vec::with_capacity(items.len());
    for (s, i) in items {
        let k = match sentences.iter().position(|x| std::ptr::eq(*x, *s)) {
            Some(k) => k,
            None => {
                sentences.push(s);
                sentences.len() - 1
            }
        };
        slot.push((k, *i));
    }
    let n = sentences.len();
    let steps = sentences.iter().map(|s| s.tokens.len()).max().unwrap_or(0);
    let lengths: Vec<usize> = sentences.iter().map(|s| s.tokens.len()).collect();
    let dim = table.dim();
    let mut inputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut data = Vec::with_capacity(n * dim);
        for s in &sentences {
            match s.tokens.get(t) {
                Some(tok) => data.extend(table.lookup(&tok.surface).iter().map(|&x| F::lit(x as f64))),
                None => data.extend(std::iter::repeat_n(F::zero(), dim)),
            }
        }
        inputs.push(g.constant(Tensor::new(vec![n, dim], data)?)?);
    }
    let f = fwd.bind(g, params)?;
    let b = bwd.bind(g, params)?;
    let outputs = run_bilstm(g, &f, &b, &inputs, &lengths)?;
    let stacked = g.concat(&outputs, 0)?;
    let ids: Vec<usize> = slot.iter().map(|&(k, t)| t * n + k).collect();
    g.embedding(stacked, &ids)
}
