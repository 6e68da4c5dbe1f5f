//! Segmentation, labeled-segment, dependency-triplet and entity-span
//! scores, plus an automatic error breakdown.
//!
//! Predicted and gold corpora are paired by `sent_id`; within a sentence,
//! tokens are paired by position because both sides share the raw tokens.

mod align;
mod errors;

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use log::debug;

pub use align::{align, AlignOp};
pub use errors::{analyze_errors, classify_token, under_splitting_baseline, ErrorBreakdown, ErrorCategory};

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Seg,
    Pos,
    Dep,
    Ner,
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seg" => Ok(Task::Seg),
            "pos" => Ok(Task::Pos),
            "dep" => Ok(Task::Dep),
            "ner" => Ok(Task::Ner),
            other => Err(Error::invalid(format!("unknown task {other:?}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Seg => "seg",
            Task::Pos => "pos",
            Task::Dep => "dep",
            Task::Ner => "ner",
        })
    }
}

/// Micro-averaged precision, recall and F1 with their raw counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl EvalReport {
    pub fn from_counts(task: Task, matched: usize, predicted: usize, gold: usize) -> Self {
        debug_assert!(matched <= predicted.min(gold));
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EvalReport {
            task,
            precision,
            recall,
            f1,
            matched,
            predicted,
            gold,
        }
    }

    /// `key=value` lines, one field per line.
    pub fn to_kv(&self) -> String {
        format!(
            "task={}\nprecision={:.6}\nrecall={:.6}\nf1={:.6}\nmatched={}\npredicted={}\ngold={}\n",
            self.task, self.precision, self.recall, self.f1, self.matched, self.predicted, self.gold
        )
    }

    pub fn tsv_header() -> &'static str {
        "task\tprecision\trecall\tf1\tmatched\tpredicted\tgold"
    }

    pub fn to_tsv_row(&self) -> String {
        format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}",
            self.task, self.precision, self.recall, self.f1, self.matched, self.predicted, self.gold
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Task {}", self.task)?;
        writeln!(f, "Precision {:.4}", self.precision)?;
        writeln!(f, "Recall {:.4}", self.recall)?;
        writeln!(f, "F1 {:.4}", self.f1)?;
        write!(
            f,
            "Counts matched={} predicted={} gold={}",
            self.matched, self.predicted, self.gold
        )
    }
}

/// Size of the multiset intersection of `a` and `b`.
pub fn multiset_intersection<T: Eq + Hash>(a: impl IntoIterator<Item = T>, b: impl IntoIterator<Item = T>) -> usize {
    let mut counts: HashMap<T, usize> = HashMap::new();
    for x in a {
        *counts.entry(x).or_default() += 1;
    }
    let mut n = 0;
    for y in b {
        if let Some(c) = counts.get_mut(&y) {
            if *c > 0 {
                *c -= 1;
                n += 1;
            }
        }
    }
    n
}

#[derive(Default)]
struct Tally {
    matched: usize,
    predicted: usize,
    gold: usize,
}

impl Tally {
    fn add<T: Eq + Hash>(&mut self, pred: Vec<T>, gold: Vec<T>) {
        self.predicted += pred.len();
        self.gold += gold.len();
        self.matched += multiset_intersection(pred, gold);
    }

    fn report(&self, task: Task) -> EvalReport {
        EvalReport::from_counts(task, self.matched, self.predicted, self.gold)
    }
}

/// Pairs every predicted sentence with the gold sentence of the same id.
pub(crate) fn pair_sentences<'c>(pred: &'c Corpus, gold: &'c Corpus) -> Result<Vec<(&'c Sentence, &'c Sentence)>> {
    if pred.len() != gold.len() {
        return Err(Error::invalid(format!(
            "prediction has {} sentences, gold has {}",
            pred.len(),
            gold.len()
        )));
    }
    let by_id: HashMap<&str, &Sentence> = gold.sentences.iter().map(|s| (s.sent_id.as_str(), s)).collect();
    pred.sentences
        .iter()
        .map(|p| {
            let g = by_id.get(p.sent_id.as_str()).ok_or_else(|| Error::Alignment {
                sent_id: p.sent_id.clone(),
                msg: "not present in gold".into(),
            })?;
            Ok((p, *g))
        })
        .collect()
}

fn pair_tokens<'c>(pred: &'c Corpus, gold: &'c Corpus) -> Result<Vec<(&'c Sentence, &'c Sentence)>> {
    let pairs = pair_sentences(pred, gold)?;
    for (p, g) in &pairs {
        if p.tokens.len() != g.tokens.len() {
            return Err(Error::Alignment {
                sent_id: p.sent_id.clone(),
                msg: format!("{} predicted tokens, {} gold tokens", p.tokens.len(), g.tokens.len()),
            });
        }
    }
    Ok(pairs)
}

/// Segment precision/recall/F1: per token, the multiset of predicted
/// segments against the multiset of gold segments.
pub fn seg_prf(pred: &Corpus, gold: &Corpus) -> Result<EvalReport> {
    let mut t = Tally::default();
    for (ps, gs) in pair_tokens(pred, gold)? {
        for (p, g) in ps.tokens.iter().zip(&gs.tokens) {
            t.add(
                p.segments.iter().map(String::as_str).collect(),
                g.segments.iter().map(String::as_str).collect(),
            );
        }
    }
    Ok(t.report(Task::Seg))
}

fn labeled_segments(s: &Sentence, ti: usize) -> Result<Vec<(&str, &str)>> {
    let tok = &s.tokens[ti];
    let labels = tok.labels.as_ref().ok_or_else(|| Error::Alignment {
        sent_id: s.sent_id.clone(),
        msg: format!("token {ti} ({:?}) has no labels", tok.surface),
    })?;
    if labels.len() != tok.segments.len() {
        return Err(Error::Alignment {
            sent_id: s.sent_id.clone(),
            msg: format!("token {ti} has {} labels for {} segments", labels.len(), tok.segments.len()),
        });
    }
    Ok(tok
        .segments
        .iter()
        .map(String::as_str)
        .zip(labels.iter().map(String::as_str))
        .collect())
}

/// Like [`seg_prf`] over `(segment, label)` pairs.
pub fn labeled_seg_f1(pred: &Corpus, gold: &Corpus) -> Result<EvalReport> {
    let mut t = Tally::default();
    for (ps, gs) in pair_tokens(pred, gold)? {
        for ti in 0..ps.tokens.len() {
            t.add(labeled_segments(ps, ti)?, labeled_segments(gs, ti)?);
        }
    }
    Ok(t.report(Task::Pos))
}

const ROOT: &str = "ROOT";

fn fhr_triplets(s: &Sentence) -> Result<Vec<(&str, &str, &str)>> {
    let dep = s.dep.as_ref().ok_or_else(|| Error::Alignment {
        sent_id: s.sent_id.clone(),
        msg: "no dependency annotation".into(),
    })?;
    dep.iter()
        .map(|d| {
            let head = match d.head {
                0 => ROOT,
                h => dep
                    .get(h - 1)
                    .map(|x| x.form.as_str())
                    .ok_or_else(|| Error::Alignment {
                        sent_id: s.sent_id.clone(),
                        msg: format!("head {h} outside the sentence"),
                    })?,
            };
            Ok((d.form.as_str(), head, d.rel.as_str()))
        })
        .collect()
}

/// F1 over (form, head form, relation) triplets, matched as multisets per
/// sentence. Heads are named by form because word indices are not
/// comparable across different segmentations.
pub fn aligned_fhr_f1(pred: &Corpus, gold: &Corpus) -> Result<EvalReport> {
    let mut t = Tally::default();
    for (ps, gs) in pair_sentences(pred, gold)? {
        t.add(fhr_triplets(ps)?, fhr_triplets(gs)?);
    }
    Ok(t.report(Task::Dep))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Biose<'a> {
    B(&'a str),
    I(&'a str),
    E(&'a str),
    S(&'a str),
    O,
}

fn parse_biose(tag: &str) -> Option<Biose<'_>> {
    if tag == "O" {
        return Some(Biose::O);
    }
    let (p, ty) = tag.split_once('-')?;
    if ty.is_empty() {
        return None;
    }
    Some(match p {
        "B" => Biose::B(ty),
        "I" => Biose::I(ty),
        "E" => Biose::E(ty),
        "S" => Biose::S(ty),
        _ => return None,
    })
}

/// Entity spans `(surface, type)` of one sentence. Segments of one token
/// are concatenated; tokens are joined by a space.
fn entity_spans(s: &Sentence) -> Result<Vec<(String, String)>> {
    let mut words: Vec<(&str, usize, &str)> = Vec::new();
    for ti in 0..s.tokens.len() {
        for (seg, label) in labeled_segments(s, ti)? {
            words.push((seg, ti, label));
        }
    }
    let surface = |from: usize, to: usize| {
        let mut out = String::new();
        for k in from..=to {
            if k > from && words[k].1 != words[k - 1].1 {
                out.push(' ');
            }
            out.push_str(words[k].0);
        }
        out
    };
    let mut spans = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    let close = |open: &mut Option<(&str, usize)>, end: usize, spans: &mut Vec<(String, String)>| {
        if let Some((ty, start)) = open.take() {
            spans.push((surface(start, end), ty.to_string()));
        }
    };
    for (k, &(_, _, label)) in words.iter().enumerate() {
        let tag = parse_biose(label).ok_or_else(|| Error::Alignment {
            sent_id: s.sent_id.clone(),
            msg: format!("{label:?} is not a BIOSE tag"),
        })?;
        match tag {
            Biose::O => close(&mut open, k.saturating_sub(1), &mut spans),
            Biose::S(ty) => {
                close(&mut open, k.saturating_sub(1), &mut spans);
                spans.push((surface(k, k), ty.to_string()));
            }
            Biose::B(ty) => {
                if open.is_some() {
                    debug!("{}: span left open before word {}", s.sent_id, k + 1);
                }
                close(&mut open, k.saturating_sub(1), &mut spans);
                open = Some((ty, k));
            }
            Biose::I(ty) => {
                if !matches!(open, Some((t, _)) if t == ty) {
                    debug!("{}: {label} at word {} has no open span; read as B-{ty}", s.sent_id, k + 1);
                    close(&mut open, k.saturating_sub(1), &mut spans);
                    open = Some((ty, k));
                }
            }
            Biose::E(ty) => match open {
                Some((t, start)) if t == ty => {
                    spans.push((surface(start, k), ty.to_string()));
                    open = None;
                }
                _ => {
                    debug!("{}: {label} at word {} has no open span; read as B-{ty}", s.sent_id, k + 1);
                    close(&mut open, k.saturating_sub(1), &mut spans);
                    open = Some((ty, k));
                }
            },
        }
    }
    if let Some((ty, start)) = open {
        spans.push((surface(start, words.len() - 1), ty.to_string()));
    }
    Ok(spans)
}

/// Entity-span F1; a span matches only with the same surface and type.
pub fn ner_span_f1(pred: &Corpus, gold: &Corpus) -> Result<EvalReport> {
    let mut t = Tally::default();
    for (ps, gs) in pair_tokens(pred, gold)? {
        t.add(entity_spans(ps)?, entity_spans(gs)?);
    }
    Ok(t.report(Task::Ner))
}

pub fn evaluate(task: Task, pred: &Corpus, gold: &Corpus) -> Result<EvalReport> {
    match task {
        Task::Seg => seg_prf(pred, gold),
        Task::Pos => labeled_seg_f1(pred, gold),
        Task::Dep => aligned_fhr_f1(pred, gold),
        Task::Ner => ner_span_f1(pred, gold),
    }
}
