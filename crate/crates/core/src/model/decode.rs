use std::thread;

use super::{CatsModel, Encoded};
use crate::corpus::{Corpus, Sentence, TokenEntry, BOS, EOT, PAD, SPACE, UNK};
use crate::error::{Error, Result};
use crate::numeric::{Graph, Scalar, Var};

/// A left-to-right symbol model that search procedures can drive.
pub trait StepModel {
    type State: Clone;

    /// State from which the first symbol is predicted.
    fn start(&mut self) -> Result<Self::State>;

    /// Log-probabilities of the next symbol. Impossible symbols are `-inf`.
    fn log_probs(&mut self, state: &Self::State) -> Result<Vec<f64>>;

    fn advance(&mut self, state: &Self::State, symbol: usize) -> Result<Self::State>;

    /// Label read out when `state` emits SPACE or EOT.
    fn label(&mut self, _state: &Self::State) -> Result<Option<usize>> {
        Ok(None)
    }

    fn max_steps(&self) -> usize;
}

/// An emitted symbol sequence with its log-probability.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Hypothesis {
    pub symbols: Vec<usize>,
    pub score: f64,
    /// One entry per emitted SPACE or EOT.
    pub labels: Vec<Option<usize>>,
    /// Label of the unterminated last segment of a truncated output.
    pub trailing_label: Option<usize>,
    pub truncated: bool,
}

impl Hypothesis {
    /// Log-probability per emitted symbol.
    pub fn normalized_score(&self) -> f64 {
        if self.symbols.is_empty() {
            self.score
        } else {
            self.score / self.symbols.len() as f64
        }
    }
}

fn is_boundary(s: usize) -> bool {
    s == SPACE || s == EOT
}

/// Index of the first maximal finite entry.
fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        if x.is_finite() && best.is_none_or(|b| x > xs[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn greedy_search<M: StepModel>(m: &mut M) -> Result<Hypothesis> {
    let mut state = m.start()?;
    let mut hyp = Hypothesis::default();
    for _ in 0..m.max_steps() {
        let lp = m.log_probs(&state)?;
        let sym = argmax(&lp).ok_or_else(|| Error::invalid("no symbol has finite probability"))?;
        hyp.score += lp[sym];
        hyp.symbols.push(sym);
        if is_boundary(sym) {
            hyp.labels.push(m.label(&state)?);
        }
        if sym == EOT {
            return Ok(hyp);
        }
        state = m.advance(&state, sym)?;
    }
    hyp.truncated = true;
    hyp.trailing_label = m.label(&state)?;
    Ok(hyp)
}

/// Beam search keeping `width` hypotheses per step; finished hypotheses are
/// compared by length-normalized log-probability. Ties keep the earlier
/// candidate, so `width == 1` reproduces [`greedy_search`].
pub fn beam_search<M: StepModel>(m: &mut M, width: usize) -> Result<Hypothesis> {
    if width == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    let mut live = vec![(m.start()?, Hypothesis::default())];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..m.max_steps() {
        let mut cands = Vec::new();
        for (i, (state, hyp)) in live.iter().enumerate() {
            let lp = m.log_probs(state)?;
            for (s, &x) in lp.iter().enumerate() {
                if x.is_finite() {
                    cands.push((hyp.score + x, i, s));
                }
            }
        }
        if cands.is_empty() {
            return Err(Error::invalid("no symbol has finite probability"));
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0));
        cands.truncate(width);
        let mut next = Vec::with_capacity(cands.len());
        for (score, i, s) in cands {
            let (state, prev) = &live[i];
            let mut hyp = prev.clone();
            hyp.symbols.push(s);
            hyp.score = score;
            if is_boundary(s) {
                hyp.labels.push(m.label(state)?);
            }
            if s == EOT {
                finished.push(hyp);
            } else {
                next.push((m.advance(state, s)?, hyp));
            }
        }
        live = next;
        if finished.len() >= width || live.is_empty() {
            break;
        }
    }
    if finished.is_empty() {
        for (state, hyp) in &mut live {
            hyp.truncated = true;
            hyp.trailing_label = m.label(state)?;
        }
        finished = live.into_iter().map(|(_, h)| h).collect();
    }
    let mut best = 0;
    for (i, h) in finished.iter().enumerate() {
        if h.normalized_score() > finished[best].normalized_score() {
            best = i;
        }
    }
    Ok(finished.swap_remove(best))
}

/// A decoded token.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub segments: Vec<String>,
    pub labels: Option<Vec<String>>,
    pub truncated: bool,
    pub score: f64,
    pub symbols: Vec<usize>,
}

impl Decoded {
    /// Every emitted segment was empty.
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Encoded batch plus the graph that holds it.
struct Session<'a, F: Scalar> {
    model: &'a CatsModel<F>,
    g: Graph<'a, F>,
    enc: Encoded,
}

impl<'a, F: Scalar> Session<'a, F> {
    fn new(model: &'a CatsModel<F>, items: &[(&Sentence, usize)]) -> Result<Self> {
        let mut g = Graph::new();
        let enc = model.encode(&mut g, items)?;
        Ok(Session { model, g, enc })
    }

    fn start(&mut self) -> Result<(Var, Var)> {
        let (h, c) = self.model.initial_state(&mut self.g, &self.enc)?;
        let bos = vec![BOS; self.enc.batch()];
        self.model.decoder_step(&mut self.g, &self.enc, h, c, &bos)
    }

    fn step(&mut self, h: Var, c: Var, prev: &[usize]) -> Result<(Var, Var)> {
        self.model.decoder_step(&mut self.g, &self.enc, h, c, prev)
    }

    /// Row-wise log-softmax in `f64`, with the symbols that never appear in
    /// targets ruled out.
    fn log_probs(&mut self, h: Var) -> Result<Vec<Vec<f64>>> {
        let z = self.model.char_logits(&mut self.g, &self.enc, h)?;
        let t = self.g.value(z);
        Ok((0..t.rows())
            .map(|r| {
                let row: Vec<f64> = t.row(r).iter().map(|x| x.to_f64_lossless()).collect();
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                let mut lp: Vec<f64> = row.iter().map(|&x| x - lse).collect();
                for s in [PAD, UNK, BOS] {
                    if s < lp.len() {
                        lp[s] = f64::NEG_INFINITY;
                    }
                }
                lp
            })
            .collect())
    }

    fn labels(&mut self, h: Var) -> Result<Vec<Option<usize>>> {
        if !self.model.config.joint {
            return Ok(vec![None; self.g.value(h).rows()]);
        }
        let z = self.model.label_logits(&mut self.g, &self.enc, h, None)?;
        let t = self.g.value(z);
        Ok((0..t.rows())
            .map(|r| {
                let row: Vec<f64> = t.row(r).iter().map(|x| x.to_f64_lossless()).collect();
                argmax(&row)
            })
            .collect())
    }
}

/// A single-token session seen through [`StepModel`].
struct TokenStepper<'a, F: Scalar> {
    session: Session<'a, F>,
    cap: usize,
}

impl<F: Scalar> StepModel for TokenStepper<'_, F> {
    type State = (Var, Var);

    fn start(&mut self) -> Result<Self::State> {
        self.session.start()
    }

    fn log_probs(&mut self, state: &Self::State) -> Result<Vec<f64>> {
        Ok(self.session.log_probs(state.0)?.swap_remove(0))
    }

    fn advance(&mut self, state: &Self::State, symbol: usize) -> Result<Self::State> {
        self.session.step(state.0, state.1, &[symbol])
    }

    fn label(&mut self, state: &Self::State) -> Result<Option<usize>> {
        Ok(self.session.labels(state.0)?[0])
    }

    fn max_steps(&self) -> usize {
        self.cap
    }
}

/// Output of decoding a whole corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Input corpus with predicted segments (and labels, when joint).
    pub corpus: Corpus,
    /// `(sentence index, token index)` of outputs cut by the step cap.
    pub truncated: Vec<(usize, usize)>,
    /// `(sentence index, token index)` of outputs with no segments.
    pub empty: Vec<(usize, usize)>,
}

impl<F: Scalar> CatsModel<F> {
    pub(crate) fn finish(&self, hyp: Hypothesis) -> Decoded {
        let joint = self.config.joint;
        let label_name = |l: Option<usize>| {
            l.and_then(|i| self.labels.label_of(i))
                .unwrap_or("_")
                .to_string()
        };
        let mut segments = Vec::new();
        let mut labels = Vec::new();
        let mut cur = Vec::new();
        let mut boundary = 0;
        for &s in &hyp.symbols {
            if is_boundary(s) {
                if !cur.is_empty() {
                    segments.push(self.chars.decode(&cur).concat());
                    labels.push(label_name(hyp.labels.get(boundary).copied().flatten()));
                    cur.clear();
                }
                boundary += 1;
                if s == EOT {
                    break;
                }
            } else {
                cur.push(s);
            }
        }
        if !cur.is_empty() {
            segments.push(self.chars.decode(&cur).concat());
            labels.push(label_name(hyp.trailing_label));
        }
        Decoded {
            segments,
            labels: joint.then_some(labels),
            truncated: hyp.truncated,
            score: hyp.score,
            symbols: hyp.symbols,
        }
    }

    /// Greedy decoding of a batch of tokens. Rows are independent: every
    /// result equals decoding that token alone.
    pub fn greedy_decode(&self, items: &[(&Sentence, usize)]) -> Result<Vec<Decoded>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let mut sess = Session::new(self, items)?;
        let n = items.len();
        let caps: Vec<usize> = sess.enc.surface_lengths.iter().map(|&l| self.config.max_steps(l)).collect();
        let mut hyps = vec![Hypothesis::default(); n];
        let mut active = vec![true; n];
        let (mut h, mut c) = sess.start()?;
        while active.iter().any(|&a| a) {
            let lp = sess.log_probs(h)?;
            let mut prev = vec![PAD; n];
            let mut wants_label = false;
            for r in (0..n).filter(|&r| active[r]) {
                let sym = argmax(&lp[r]).ok_or_else(|| Error::invalid("no symbol has finite probability"))?;
                prev[r] = sym;
                wants_label |= is_boundary(sym);
            }
            let labels = if wants_label { Some(sess.labels(h)?) } else { None };
            let mut cut = Vec::new();
            let rows: Vec<usize> = (0..n).filter(|&r| active[r]).collect();
            for r in rows {
                let sym = prev[r];
                let hyp = &mut hyps[r];
                hyp.score += lp[r][sym];
                hyp.symbols.push(sym);
                if is_boundary(sym) {
                    hyp.labels.push(labels.as_ref().and_then(|l| l[r]));
                }
                if sym == EOT {
                    active[r] = false;
                } else if hyp.symbols.len() == caps[r] {
                    active[r] = false;
                    hyp.truncated = true;
                    cut.push(r);
                }
            }
            if active.iter().any(|&a| a) || (!cut.is_empty() && self.config.joint) {
                (h, c) = sess.step(h, c, &prev)?;
            }
            if !cut.is_empty() {
                let trailing = sess.labels(h)?;
                for r in cut {
                    hyps[r].trailing_label = trailing[r];
                }
            }
        }
        Ok(hyps.into_iter().map(|h| self.finish(h)).collect())
    }

    pub fn beam_decode(&self, sentence: &Sentence, index: usize, width: usize) -> Result<Decoded> {
        if width == 0 {
            return Err(Error::invalid("beam width must be at least 1"));
        }
        let items = [(sentence, index)];
        let session = Session::new(self, &items)?;
        let cap = self.config.max_steps(session.enc.surface_lengths[0]);
        let mut stepper = TokenStepper { session, cap };
        let beam = beam_search(&mut stepper, width)?;
        let hyp = if width > 1 {
            let greedy = greedy_search(&mut stepper)?;
            if greedy.normalized_score() > beam.normalized_score() {
                greedy
            } else {
                beam
            }
        } else {
            beam
        };
        Ok(self.finish(hyp))
    }

    /// Decodes every token of `corpus`, greedily or with a beam, over up to
    /// `threads` workers. Results are merged in sentence order.
    pub fn predict_corpus(&self, corpus: &Corpus, beam: Option<usize>, threads: usize) -> Result<Prediction>
    where
        F: Send + Sync,
    {
        let n = corpus.sentences.len();
        let threads = threads.clamp(1, n.max(1));
        let chunk = n.div_ceil(threads).max(1);
        let results: Vec<Result<Vec<Vec<Decoded>>>> = if threads == 1 {
            vec![self.decode_sentences(&corpus.sentences, beam)]
        } else {
            thread::scope(|scope| {
                let handles: Vec<_> = corpus
                    .sentences
                    .chunks(chunk)
                    .map(|part| scope.spawn(move || self.decode_sentences(part, beam)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("decoding worker panicked"))))
                    .collect()
            })
        };
        let mut decoded = Vec::with_capacity(n);
        for r in results {
            decoded.extend(r?);
        }
        let mut out = corpus.clone();
        let mut truncated = Vec::new();
        let mut empty = Vec::new();
        for (si, (sent, dec)) in out.sentences.iter_mut().zip(decoded).enumerate() {
            for (ti, (tok, d)) in sent.tokens.iter_mut().zip(dec).enumerate() {
                if d.truncated {
                    truncated.push((si, ti));
                }
                if d.is_empty() {
                    empty.push((si, ti));
                }
                let mut entry = TokenEntry::new(tok.surface.clone(), d.segments);
                entry.labels = d.labels;
                *tok = entry;
            }
            sent.dep = None;
            sent.reindex();
        }
        Ok(Prediction {
            corpus: out,
            truncated,
            empty,
        })
    }

    fn decode_sentences(&self, sentences: &[Sentence], beam: Option<usize>) -> Result<Vec<Vec<Decoded>>> {
        const BATCH: usize = 64;
        let items: Vec<(&Sentence, usize)> = sentences
            .iter()
            .flat_map(|s| (0..s.tokens.len()).map(move |i| (s, i)))
            .collect();
        let mut flat = Vec::with_capacity(items.len());
        match beam {
            Some(w) => {
                for &(s, i) in &items {
                    flat.push(self.beam_decode(s, i, w)?);
                }
            }
            None => {
                for part in items.chunks(BATCH) {
                    flat.extend(self.greedy_decode(part)?);
                }
            }
        }
        let mut flat = flat.into_iter();
        Ok(sentences
            .iter()
            .map(|s| flat.by_ref().take(s.tokens.len()).collect())
            .collect())
    }
}
