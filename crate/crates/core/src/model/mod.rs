//! Character encoder-decoder with additive attention, fed a per-token
//! context vector, with an optional label head for joint segmentation and
//! tagging.

mod checkpoint;
mod decode;
mod forward;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use decode::{beam_search, greedy_search, Decoded, Hypothesis, Prediction, StepModel};
pub use forward::{BatchLoss, Encoded, Example};

use crate::corpus::{CharVocab, LabelVocab};
use crate::embeddings::{ContextProvider, ContextSpec, VectorStore};
use crate::error::{Error, Result};
use crate::numeric::{init_uniform, Graph, LstmParams, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_char: usize,
    pub d_enc: usize,
    pub d_dec: usize,
    pub d_att: usize,
    pub joint: bool,
    /// Feed the sentence vector to the label head as well.
    pub use_sentence_vector: bool,
    /// When off, the encoder sees only the context vector.
    pub char_encoder_enabled: bool,
    pub max_decode_factor: usize,
    pub max_decode_slack: usize,
    /// Drop probability on decoder states during training; 0 disables it.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_char: 100,
            d_enc: 256,
            d_dec: 256,
            d_att: 128,
            joint: false,
            use_sentence_vector: false,
            char_encoder_enabled: true,
            max_decode_factor: 3,
            max_decode_slack: 10,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.d_char, self.d_enc, self.d_dec, self.d_att].contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.use_sentence_vector && !self.joint {
            return Err(Error::Config("sentence vectors are only used by the joint model".into()));
        }
        Ok(())
    }

    /// Decoding step cap for a surface of `len` characters.
    pub fn max_steps(&self, len: usize) -> usize {
        self.max_decode_factor * len + self.max_decode_slack
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EncoderWeights {
    BiLstm { fwd: LstmParams, bwd: LstmParams },
    Projection { w: ParamId, b: ParamId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Weights {
    char_embed: ParamId,
    encoder: EncoderWeights,
    att_s: ParamId,
    att_h: ParamId,
    att_v: ParamId,
    decoder: LstmParams,
    out_w: ParamId,
    out_b: ParamId,
    label: Option<(ParamId, ParamId)>,
}

/// Widths every parameter shape is derived from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Shapes {
    chars: usize,
    labels: usize,
    ctx: usize,
    sent: usize,
}

impl Weights {
    fn register<F: Scalar>(store: &mut ParamStore<F>, cfg: &ModelConfig, s: Shapes, rng: &mut ChaCha8Rng) -> Self {
        let char_embed = store.add("char_embed", init_uniform(rng, &[s.chars, cfg.d_char], cfg.d_char));
        let h2 = 2 * cfg.d_enc;
        let encoder = if cfg.char_encoder_enabled {
            EncoderWeights::BiLstm {
                fwd: LstmParams::register(store, "enc.fwd", cfg.d_char + s.ctx, cfg.d_enc, rng),
                bwd: LstmParams::register(store, "enc.bwd", cfg.d_char + s.ctx, cfg.d_enc, rng),
            }
        } else {
            EncoderWeights::Projection {
                w: store.add("enc.proj.W", init_uniform(rng, &[s.ctx, h2], s.ctx)),
                b: store.add("enc.proj.b", Tensor::zeros(&[h2])),
            }
        };
        let att_s = store.add("att.Ws", init_uniform(rng, &[cfg.d_dec, cfg.d_att], cfg.d_dec));
        let att_h = store.add("att.Wh", init_uniform(rng, &[h2, cfg.d_att], h2));
        let att_v = store.add("att.v", init_uniform(rng, &[cfg.d_att, 1], cfg.d_att));
        let decoder = LstmParams::register(store, "dec", cfg.d_char + h2, cfg.d_dec, rng);
        let out_w = store.add("out.W", init_uniform(rng, &[cfg.d_dec, s.chars], cfg.d_dec));
        let out_b = store.add("out.b", Tensor::zeros(&[s.chars]));
        let label = cfg.joint.then(|| {
            let input = cfg.d_dec + s.ctx + s.sent;
            (
                store.add("label.W", init_uniform(rng, &[input, s.labels], input)),
                store.add("label.b", Tensor::zeros(&[s.labels])),
            )
        });
        Weights {
            char_embed,
            encoder,
            att_s,
            att_h,
            att_v,
            decoder,
            out_w,
            out_b,
            label,
        }
    }

    fn lookup<F: Scalar>(store: &ParamStore<F>, cfg: &ModelConfig, s: Shapes) -> Result<Self> {
        let find = |name: &str, dims: &[usize]| -> Result<ParamId> {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            let got = store.get(id).value.dims();
            if got != dims {
                return Err(Error::Format(format!("parameter {name} has shape {got:?}, expected {dims:?}")));
            }
            Ok(id)
        };
        let h2 = 2 * cfg.d_enc;
        let lstm = |prefix: &str, input: usize, hidden: usize| -> Result<LstmParams> {
            let p = LstmParams::lookup(store, prefix)?;
            if p.input != input || p.hidden != hidden {
                return Err(Error::Format(format!("LSTM {prefix} has shape {}x{}", p.input, p.hidden)));
            }
            Ok(p)
        };
        let encoder = if cfg.char_encoder_enabled {
            EncoderWeights::BiLstm {
                fwd: lstm("enc.fwd", cfg.d_char + s.ctx, cfg.d_enc)?,
                bwd: lstm("enc.bwd", cfg.d_char + s.ctx, cfg.d_enc)?,
            }
        } else {
            EncoderWeights::Projection {
                w: find("enc.proj.W", &[s.ctx, h2])?,
                b: find("enc.proj.b", &[h2])?,
            }
        };
        let label = if cfg.joint {
            let input = cfg.d_dec + s.ctx + s.sent;
            Some((find("label.W", &[input, s.labels])?, find("label.b", &[s.labels])?))
        } else {
            None
        };
        Ok(Weights {
            char_embed: find("char_embed", &[s.chars, cfg.d_char])?,
            encoder,
            att_s: find("att.Ws", &[cfg.d_dec, cfg.d_att])?,
            att_h: find("att.Wh", &[h2, cfg.d_att])?,
            att_v: find("att.v", &[cfg.d_att, 1])?,
            decoder: lstm("dec", cfg.d_char + h2, cfg.d_dec)?,
            out_w: find("out.W", &[cfg.d_dec, s.chars])?,
            out_b: find("out.b", &[s.chars])?,
            label,
        })
    }
}

/// Parameters bound into one graph.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Bound {
    char_embed: Var,
    att_s: Var,
    att_h: Var,
    att_v: Var,
    decoder: crate::numeric::BoundLstm,
    out_w: Var,
    out_b: Var,
    label: Option<(Var, Var)>,
}

/// A trainable segmenter: weights, vocabularies and context source.
#[derive(Clone, Debug, PartialEq)]
pub struct CatsModel<F = f32> {
    config: ModelConfig,
    chars: CharVocab,
    labels: LabelVocab,
    provider: ContextProvider,
    params: ParamStore<F>,
    shapes: Shapes,
    w: Weights,
}

impl<F: Scalar> CatsModel<F> {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(config: ModelConfig, chars: CharVocab, labels: LabelVocab, ctx: ContextSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.joint && labels.is_empty() {
            return Err(Error::Config("joint model needs a non-empty label vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        // The contextualizer draws from its own stream so that changing model
        // sizes does not reshuffle its initialization.
        let mut ctx_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let provider = ctx.build(&mut params, &mut ctx_rng)?;
        let sent = match (config.use_sentence_vector, provider.sentence_dim()) {
            (false, _) => 0,
            (true, Some(d)) => d,
            (true, None) => return Err(Error::Config("sentence vectors requested but the provider has none".into())),
        };
        let shapes = Shapes {
            chars: chars.len(),
            labels: labels.len(),
            ctx: provider.dim(),
            sent,
        };
        let w = Weights::register(&mut params, &config, shapes, &mut rng);
        Ok(CatsModel {
            config,
            chars,
            labels,
            provider,
            params,
            shapes,
            w,
        })
    }

    /// Reassembles a model around existing parameters.
    pub(crate) fn from_parts(
        config: ModelConfig,
        chars: CharVocab,
        labels: LabelVocab,
        provider: ContextProvider,
        params: ParamStore<F>,
        sent: usize,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = Shapes {
            chars: chars.len(),
            labels: labels.len(),
            ctx: provider.dim(),
            sent,
        };
        let w = Weights::lookup(&params, &config, shapes)?;
        Ok(CatsModel {
            config,
            chars,
            labels,
            provider,
            params,
            shapes,
            w,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn chars(&self) -> &CharVocab {
        &self.chars
    }

    pub fn labels(&self) -> &LabelVocab {
        &self.labels
    }

    pub fn provider(&self) -> &ContextProvider {
        &self.provider
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn ctx_dim(&self) -> usize {
        self.shapes.ctx
    }

    /// Width of the sentence vector given to the label head (0 if unused).
    pub fn sentence_dim(&self) -> usize {
        self.shapes.sent
    }

    /// Ids of the label head weight and bias, when joint.
    pub fn label_head(&self) -> Option<(ParamId, ParamId)> {
        self.w.label
    }

    pub fn set_vector_store(&mut self, store: VectorStore) -> Result<()> {
        self.provider.set_vector_store(store)
    }

    /// The same model with parameters converted to another precision.
    pub fn cast<G: Scalar>(&self) -> CatsModel<G> {
        CatsModel {
            config: self.config.clone(),
            chars: self.chars.clone(),
            labels: self.labels.clone(),
            provider: self.provider.clone(),
            params: self.params.cast(),
            shapes: self.shapes,
            w: self.w,
        }
    }

    pub(crate) fn bind<'a>(&self, g: &mut Graph<'a, F>, p: &'a ParamStore<F>) -> Result<Bound> {
        Ok(Bound {
            char_embed: g.param(p, self.w.char_embed)?,
            att_s: g.param(p, self.w.att_s)?,
            att_h: g.param(p, self.w.att_h)?,
            att_v: g.param(p, self.w.att_v)?,
            decoder: self.w.decoder.bind(g, p)?,
            out_w: g.param(p, self.w.out_w)?,
            out_b: g.param(p, self.w.out_b)?,
            label: match self.w.label {
                Some((w, b)) => Some((g.param(p, w)?, g.param(p, b)?)),
                None => None,
            },
        })
    }
}
