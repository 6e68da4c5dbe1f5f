use super::{Bound, CatsModel, EncoderWeights};
use crate::corpus::{Sentence, BOS, EOT, PAD, SPACE};
use crate::error::{Error, Result};
use rand::{Rng, RngCore};

use crate::numeric::{lstm_cell, run_bilstm, Graph, ParamStore, Scalar, Tensor, Var};

/// Additive score that removes a padded source position from attention.
const MASKED: f64 = -1e9;

/// One token with its gold target symbols and (for joint models) one label
/// id per segment.
#[derive(Clone, Debug)]
pub struct Example<'c> {
    pub sentence: &'c Sentence,
    pub index: usize,
    pub target: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Encoder output for a batch of tokens.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub(crate) w: Bound,
    /// One `B x 2·d_enc` node per source position.
    pub states: Vec<Var>,
    keys: Vec<Var>,
    mask: Option<Var>,
    /// `B x d_ctx` context vectors.
    pub ctx: Var,
    pub sent: Option<Var>,
    /// Surface lengths in characters.
    pub surface_lengths: Vec<usize>,
}

impl Encoded {
    pub fn batch(&self) -> usize {
        self.surface_lengths.len()
    }
}

/// Graph nodes of one batch loss.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    /// The optimized objective.
    pub loss: Var,
    pub seg: Var,
    pub tag: Option<Var>,
    /// Masked per-position cross-entropy, row `t·B + b`.
    pub position_ce: Var,
    pub positions: usize,
    pub label_positions: usize,
}

impl<F: Scalar> CatsModel<F> {
    pub fn example<'c>(&self, sentence: &'c Sentence, index: usize) -> Result<Example<'c>> {
        let tok = sentence.tokens.get(index).ok_or_else(|| {
            Error::invalid(format!("token {index} out of range in sentence {:?}", sentence.sent_id))
        })?;
        tok.validate()?;
        let target = self.chars.target_string(tok);
        let labels = if self.config.joint {
            let ls = tok.labels.as_ref().ok_or_else(|| {
                Error::invalid(format!(
                    "joint model needs labels: sentence {:?}, token {index}",
                    sentence.sent_id
                ))
            })?;
            ls.iter()
                .map(|l| {
                    self.labels
                        .id_of(l)
                        .ok_or_else(|| Error::invalid(format!("label {l:?} is not in the label vocabulary")))
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Example {
            sentence,
            index,
            target,
            labels,
        })
    }

    /// Runs the encoder over the surfaces of `items`.
    pub fn encode<'a>(&'a self, g: &mut Graph<'a, F>, items: &[(&Sentence, usize)]) -> Result<Encoded> {
        self.encode_with(g, &self.params, items)
    }

    /// [`CatsModel::encode`] reading weights from `params`, which must have
    /// this model's layout.
    pub fn encode_with<'a>(
        &self,
        g: &mut Graph<'a, F>,
        params: &'a ParamStore<F>,
        items: &[(&Sentence, usize)],
    ) -> Result<Encoded> {
        let w = self.bind(g, params)?;
        let mut sources = Vec::with_capacity(items.len());
        for (s, i) in items {
            let tok = s
                .tokens
                .get(*i)
                .ok_or_else(|| Error::invalid(format!("token {i} out of range in sentence {:?}", s.sent_id)))?;
            if tok.surface.is_empty() {
                return Err(Error::invalid(format!("empty surface in sentence {:?}", s.sent_id)));
            }
            sources.push(self.chars.encode(&tok.surface));
        }
        let batch = sources.len();
        let ctx = self.provider.token_vectors(g, params, items)?;
        let sent = if self.shapes.sent > 0 {
            Some(self.provider.sentence_vectors(g, items)?)
        } else {
            None
        };
        let surface_lengths: Vec<usize> = sources.iter().map(Vec::len).collect();
        let (states, lengths) = match self.w.encoder {
            EncoderWeights::BiLstm { fwd, bwd } => {
                let steps = surface_lengths.iter().copied().max().unwrap_or(0);
                let mut inputs = Vec::with_capacity(steps);
                for t in 0..steps {
                    let ids: Vec<usize> = sources.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
                    let e = g.embedding(w.char_embed, &ids)?;
                    inputs.push(g.concat(&[e, ctx], 1)?);
                }
                let f = fwd.bind(g, params)?;
                let b = bwd.bind(g, params)?;
                (run_bilstm(g, &f, &b, &inputs, &surface_lengths)?, surface_lengths.clone())
            }
            EncoderWeights::Projection { w: pw, b: pb } => {
                let pw = g.param(params, pw)?;
                let pb = g.param(params, pb)?;
                let h = g.matmul(ctx, pw)?;
                (vec![g.add_bias(h, pb)?], vec![1; batch])
            }
        };
        let keys = states
            .iter()
            .map(|&h| g.matmul(h, w.att_h))
            .collect::<Result<Vec<_>>>()?;
        let n = states.len();
        let mask = if lengths.iter().any(|&l| l < n) {
            let mut m = vec![F::zero(); batch * n];
            for (r, &l) in lengths.iter().enumerate() {
                for x in &mut m[r * n + l..(r + 1) * n] {
                    *x = F::lit(MASKED);
                }
            }
            Some(g.constant(Tensor::new(vec![batch, n], m)?)?)
        } else {
            None
        };
        Ok(Encoded {
            w,
            states,
            keys,
            mask,
            ctx,
            sent,
            surface_lengths,
        })
    }

    /// Additive attention of decoder state `s` (`B x d_dec`) over the
    /// encoder states. Returns the context (`B x 2·d_enc`) and weights
    /// (`B x n`).
    pub fn attend(&self, g: &mut Graph<'_, F>, enc: &Encoded, s: Var) -> Result<(Var, Var)> {
        let n = enc.states.len();
        let sw = g.matmul(s, enc.w.att_s)?;
        let mut scores = Vec::with_capacity(n);
        for &k in &enc.keys {
            let e = g.add(sw, k)?;
            let e = g.tanh(e)?;
            scores.push(g.matmul(e, enc.w.att_v)?);
        }
        let e = if n == 1 { scores[0] } else { g.concat(&scores, 1)? };
        let e = match enc.mask {
            Some(m) => g.add(e, m)?,
            None => e,
        };
        let alpha = g.softmax(e)?;
        let mut context = None;
        for (j, &h) in enc.states.iter().enumerate() {
            let a = if n == 1 { alpha } else { g.slice_cols(alpha, j, 1)? };
            let term = g.scale_rows(h, a)?;
            context = Some(match context {
                None => term,
                Some(c) => g.add(c, term)?,
            });
        }
        Ok((context.expect("at least one encoder state"), alpha))
    }

    pub fn initial_state(&self, g: &mut Graph<'_, F>, enc: &Encoded) -> Result<(Var, Var)> {
        let h = g.constant(Tensor::zeros(&[enc.batch(), self.config.d_dec]))?;
        let c = g.constant(Tensor::zeros(&[enc.batch(), self.config.d_dec]))?;
        Ok((h, c))
    }

    /// Feeds the previous symbol of every row and returns the new state.
    pub fn decoder_step(&self, g: &mut Graph<'_, F>, enc: &Encoded, h: Var, c: Var, prev: &[usize]) -> Result<(Var, Var)> {
        let (context, _) = self.attend(g, enc, h)?;
        let e = g.embedding(enc.w.char_embed, prev)?;
        let x = g.concat(&[e, context], 1)?;
        lstm_cell(g, &enc.w.decoder, x, h, c)
    }

    pub fn char_logits(&self, g: &mut Graph<'_, F>, enc: &Encoded, h: Var) -> Result<Var> {
        let z = g.matmul(h, enc.w.out_w)?;
        g.add_bias(z, enc.w.out_b)
    }

    /// Label logits for decoder states `h`, where row `k` of `h` belongs to
    /// batch row `owners[k]` (identity when `None`).
    pub fn label_logits(&self, g: &mut Graph<'_, F>, enc: &Encoded, h: Var, owners: Option<&[usize]>) -> Result<Var> {
        let (lw, lb) = enc
            .w
            .label
            .ok_or_else(|| Error::invalid("model has no label head"))?;
        let gather = |g: &mut Graph<'_, F>, v: Var| match owners {
            Some(o) => g.embedding(v, o),
            None => Ok(v),
        };
        let mut parts = vec![h, gather(g, enc.ctx)?];
        if let Some(s) = enc.sent {
            parts.push(gather(g, s)?);
        }
        let x = g.concat(&parts, 1)?;
        let z = g.matmul(x, lw)?;
        g.add_bias(z, lb)
    }

    /// Teacher-forced loss of a batch: mean cross-entropy over all target
    /// positions, and for joint models `λ·L_seg + (1−λ)·L_tag` with the
    /// label loss read at every SPACE and EOT position.
    pub fn batch_loss<'a>(&'a self, g: &mut Graph<'a, F>, batch: &[Example<'_>], lambda: f64) -> Result<BatchLoss> {
        self.batch_loss_with(g, &self.params, batch, lambda)
    }

    pub fn batch_loss_with<'a>(
        &self,
        g: &mut Graph<'a, F>,
        params: &'a ParamStore<F>,
        batch: &[Example<'_>],
        lambda: f64,
    ) -> Result<BatchLoss> {
        self.loss_impl(g, params, batch, lambda, None)
    }

    /// Training loss: `batch_loss` with inverted dropout on the decoder
    /// states, masks drawn from `rng`. Same as `batch_loss` when the
    /// configured rate is 0.
    pub fn batch_loss_train<'a>(
        &'a self,
        g: &mut Graph<'a, F>,
        batch: &[Example<'_>],
        lambda: f64,
        rng: &mut dyn RngCore,
    ) -> Result<BatchLoss> {
        self.loss_impl(g, &self.params, batch, lambda, Some(rng))
    }

    fn loss_impl<'a>(
        &self,
        g: &mut Graph<'a, F>,
        params: &'a ParamStore<F>,
        batch: &[Example<'_>],
        lambda: f64,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let items: Vec<(&Sentence, usize)> = batch.iter().map(|e| (e.sentence, e.index)).collect();
        let enc = self.encode_with(g, params, &items)?;
        let bsz = batch.len();
        let steps = batch.iter().map(|e| e.target.len()).max().unwrap_or(0);
        let (mut h, mut c) = self.initial_state(g, &enc)?;
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let prev: Vec<usize> = batch
                .iter()
                .map(|e| if t == 0 { BOS } else { e.target.get(t - 1).copied().unwrap_or(PAD) })
                .collect();
            (h, c) = self.decoder_step(g, &enc, h, c, &prev)?;
            states.push(h);
        }
        let mut all = g.concat(&states, 0)?;
        let p = self.config.dropout;
        if let (Some(rng), true) = (rng, p > 0.0) {
            let keep = F::lit(1.0 / (1.0 - p));
            let shape = g.value(all).dims().to_vec();
            let n: usize = shape.iter().product();
            let mask = (0..n).map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep }).collect();
            let mask = g.constant(Tensor::new(shape, mask)?)?;
            all = g.mul(all, mask)?;
        }
        let logits = self.char_logits(g, &enc, all)?;
        let mut targets = Vec::with_capacity(steps * bsz);
        let mut mask = Vec::with_capacity(steps * bsz);
        for t in 0..steps {
            for e in batch {
                let valid = t < e.target.len();
                targets.push(if valid { e.target[t] } else { PAD });
                mask.push(if valid { F::one() } else { F::zero() });
            }
        }
        let positions: usize = batch.iter().map(|e| e.target.len()).sum();
        let ce = g.cross_entropy(logits, &targets)?;
        let mask = g.constant(Tensor::new(vec![steps * bsz, 1], mask)?)?;
        let position_ce = g.mul(ce, mask)?;
        let total = g.sum(position_ce)?;
        let seg = g.scale(total, F::lit(1.0 / positions as f64))?;

        if !self.config.joint {
            return Ok(BatchLoss {
                loss: seg,
                seg,
                tag: None,
                position_ce,
                positions,
                label_positions: 0,
            });
        }
        let mut rows = Vec::new();
        let mut owners = Vec::new();
        let mut gold = Vec::new();
        let mut next_label = vec![0usize; bsz];
        for t in 0..steps {
            for (b, e) in batch.iter().enumerate() {
                if matches!(e.target.get(t), Some(&SPACE) | Some(&EOT)) {
                    let l = *e.labels.get(next_label[b]).ok_or_else(|| {
                        Error::invalid(format!(
                            "sentence {:?}, token {}: fewer labels than segments",
                            e.sentence.sent_id, e.index
                        ))
                    })?;
                    next_label[b] += 1;
                    rows.push(t * bsz + b);
                    owners.push(b);
                    gold.push(l);
                }
            }
        }
        let hs = g.embedding(all, &rows)?;
        let label_logits = self.label_logits(g, &enc, hs, Some(&owners))?;
        let lce = g.cross_entropy(label_logits, &gold)?;
        let ltotal = g.sum(lce)?;
        let tag = g.scale(ltotal, F::lit(1.0 / rows.len() as f64))?;
        let a = g.scale(seg, F::lit(lambda))?;
        let b = g.scale(tag, F::lit(1.0 - lambda))?;
        let loss = g.add(a, b)?;
        Ok(BatchLoss {
            loss,
            seg,
            tag: Some(tag),
            position_ce,
            positions,
            label_positions: rows.len(),
        })
    }

    /// Loss values `(L, L_seg, L_tag)` of a single token.
    pub fn forward_teacher_forced(&self, sentence: &Sentence, index: usize, lambda: f64) -> Result<(f64, f64, Option<f64>)> {
        let ex = self.example(sentence, index)?;
        let mut g = Graph::new();
        let out = self.batch_loss(&mut g, std::slice::from_ref(&ex), lambda)?;
        let val = |v: Var| g.value(v).data()[0].to_f64_lossless();
        Ok((val(out.loss), val(out.seg), out.tag.map(val)))
    }
}
