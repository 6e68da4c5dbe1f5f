//! Automatic error breakdown of mismatching tokens.
//!
//! For each token whose predicted segments differ from gold:
//!
//! 1. The concatenated predicted characters are aligned to the concatenated
//!    gold characters. Any edit marks the token as one model artifact.
//! 2. Predicted word boundaries are carried through the alignment into gold
//!    character offsets. Boundaries are compared as multisets: extra
//!    predicted ones are over-segmentation, missing gold ones are
//!    under-segmentation.
//! 3. Each boundary event is a prefix error when its offset lies before the
//!    midpoint of the gold stem (the longest gold segment, leftmost on
//!    ties), and a suffix error otherwise.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::align::{align, AlignOp};
use super::pair_sentences;
use crate::corpus::{Corpus, Sentence, TokenEntry};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorCategory {
    OverSegPrefix,
    UnderSegPrefix,
    OverSegSuffix,
    UnderSegSuffix,
    ModelArtifact,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::OverSegPrefix,
        ErrorCategory::UnderSegPrefix,
        ErrorCategory::OverSegSuffix,
        ErrorCategory::UnderSegSuffix,
        ErrorCategory::ModelArtifact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::OverSegPrefix => "Over-seg. prefix",
            ErrorCategory::UnderSegPrefix => "Under-seg. prefix",
            ErrorCategory::OverSegSuffix => "Over-seg. suffix",
            ErrorCategory::UnderSegSuffix => "Under-seg. suffix",
            ErrorCategory::ModelArtifact => "Model artifacts",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ErrorBreakdown {
    pub over_seg_prefix: usize,
    pub under_seg_prefix: usize,
    pub over_seg_suffix: usize,
    pub under_seg_suffix: usize,
    pub model_artifacts: usize,
    /// Sentences examined after sampling.
    pub sentences: usize,
    /// Tokens whose segmentation differs from gold.
    pub mismatched_tokens: usize,
}

impl ErrorBreakdown {
    pub fn total(&self) -> usize {
        self.over_seg_prefix + self.under_seg_prefix + self.over_seg_suffix + self.under_seg_suffix + self.model_artifacts
    }

    pub fn count(&self, c: ErrorCategory) -> usize {
        match c {
            ErrorCategory::OverSegPrefix => self.over_seg_prefix,
            ErrorCategory::UnderSegPrefix => self.under_seg_prefix,
            ErrorCategory::OverSegSuffix => self.over_seg_suffix,
            ErrorCategory::UnderSegSuffix => self.under_seg_suffix,
            ErrorCategory::ModelArtifact => self.model_artifacts,
        }
    }

    fn bump(&mut self, c: ErrorCategory) {
        match c {
            ErrorCategory::OverSegPrefix => self.over_seg_prefix += 1,
            ErrorCategory::UnderSegPrefix => self.under_seg_prefix += 1,
            ErrorCategory::OverSegSuffix => self.over_seg_suffix += 1,
            ErrorCategory::UnderSegSuffix => self.under_seg_suffix += 1,
            ErrorCategory::ModelArtifact => self.model_artifacts += 1,
        }
    }

    /// Share of all errors in category `c`, in percent.
    pub fn percent(&self, c: ErrorCategory) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * self.count(c) as f64 / t as f64,
        }
    }

    /// The category with the most events; earlier categories win ties.
    pub fn dominant(&self) -> Option<ErrorCategory> {
        if self.total() == 0 {
            return None;
        }
        let mut best = ErrorCategory::ALL[0];
        for c in ErrorCategory::ALL {
            if self.count(c) > self.count(best) {
                best = c;
            }
        }
        Some(best)
    }
}

impl fmt::Display for ErrorBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in ErrorCategory::ALL {
            writeln!(f, "{}\t{:.1}% ({})", c.name(), self.percent(c), self.count(c))?;
        }
        let pct = if self.total() == 0 { 0.0 } else { 100.0 };
        write!(f, "Total errors\t{pct:.1}% ({})", self.total())
    }
}

/// Error events of one token, in the order they were found. Empty when
/// `pred` equals `gold`.
pub fn classify_token(pred: &[String], gold: &[String]) -> Vec<ErrorCategory> {
    if pred == gold {
        return Vec::new();
    }
    let p: Vec<char> = pred.iter().flat_map(|s| s.chars()).collect();
    let g: Vec<char> = gold.iter().flat_map(|s| s.chars()).collect();
    let ops = align(&p, &g);
    let mut events = Vec::new();
    if ops.iter().any(|o| o.is_edit()) {
        events.push(ErrorCategory::ModelArtifact);
    }

    // to_gold[k]: gold offset reached once the first k predicted characters
    // have been consumed.
    let mut to_gold = vec![0usize; p.len() + 1];
    let mut gj = 0;
    for op in &ops {
        match *op {
            AlignOp::Match(i, _) | AlignOp::Sub(i, _) => {
                gj += 1;
                to_gold[i + 1] = gj;
            }
            AlignOp::Del(i) => to_gold[i + 1] = gj,
            AlignOp::Ins(_) => gj += 1,
        }
    }

    let inner = |segs: &[String]| -> Vec<usize> {
        let mut out = Vec::new();
        let mut off = 0;
        for s in &segs[..segs.len().saturating_sub(1)] {
            off += s.chars().count();
            out.push(off);
        }
        out
    };
    let mut pred_b: Vec<usize> = inner(pred).into_iter().map(|k| to_gold[k]).collect();
    let mut gold_b = inner(gold);
    pred_b.sort_unstable();
    gold_b.sort_unstable();

    let (mut stem_start, mut stem_len, mut off) = (0, 0, 0);
    for s in gold {
        let n = s.chars().count();
        if n > stem_len {
            stem_start = off;
            stem_len = n;
        }
        off += n;
    }
    // Compare 2·offset against start + end to stay in integers.
    let is_prefix = |o: usize| 2 * o < 2 * stem_start + stem_len;

    let over = |o| if is_prefix(o) { ErrorCategory::OverSegPrefix } else { ErrorCategory::OverSegSuffix };
    let under = |o| if is_prefix(o) { ErrorCategory::UnderSegPrefix } else { ErrorCategory::UnderSegSuffix };
    let (mut a, mut b) = (0, 0);
    while a < pred_b.len() && b < gold_b.len() {
        let (x, y) = (pred_b[a], gold_b[b]);
        if x == y {
            a += 1;
            b += 1;
        } else if x < y {
            events.push(over(x));
            a += 1;
        } else {
            events.push(under(y));
            b += 1;
        }
    }
    events.extend(pred_b[a..].iter().map(|&x| over(x)));
    events.extend(gold_b[b..].iter().map(|&y| under(y)));
    events
}

fn sample<'c>(pairs: Vec<(&'c Sentence, &'c Sentence)>, size: usize, seed: u64) -> Vec<(&'c Sentence, &'c Sentence)> {
    if size >= pairs.len() {
        return pairs;
    }
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut keep = idx[..size].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| pairs[i]).collect()
}

/// Breaks the errors of `pred` down by category over a seeded sample of
/// `sample_size` sentences (all of them if the corpus is smaller).
pub fn analyze_errors(pred: &Corpus, gold: &Corpus, sample_size: usize, seed: u64) -> Result<ErrorBreakdown> {
    let pairs = sample(pair_sentences(pred, gold)?, sample_size, seed);
    let mut out = ErrorBreakdown {
        sentences: pairs.len(),
        ..Default::default()
    };
    for (ps, gs) in pairs {
        if ps.tokens.len() != gs.tokens.len() {
            return Err(Error::Alignment {
                sent_id: ps.sent_id.clone(),
                msg: format!("{} predicted tokens, {} gold tokens", ps.tokens.len(), gs.tokens.len()),
            });
        }
        for (p, g) in ps.tokens.iter().zip(&gs.tokens) {
            let events = classify_token(&p.segments, &g.segments);
            if !events.is_empty() {
                out.mismatched_tokens += 1;
            }
            for e in events {
                out.bump(e);
            }
        }
    }
    Ok(out)
}

/// A reference system that never splits: every token is predicted as its
/// own surface.
pub fn under_splitting_baseline(corpus: &Corpus) -> Corpus {
    let mut out = corpus.clone();
    for s in &mut out.sentences {
        for t in &mut s.tokens {
            *t = TokenEntry::unsegmented(t.surface.clone());
        }
        s.dep = None;
        s.reindex();
    }
    out
}
