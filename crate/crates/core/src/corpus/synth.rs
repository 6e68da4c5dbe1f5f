//! Synthetic corpus with context-dependent segmentation.
//!
//! Tokens are `[prefix] stem [suffix]` over a fixed lexicon. For the
//! ambiguous stems, the token `ba + stem` is segmented `["ba", stem]` when
//! the trigger word `gi` occurs earlier in the sentence and left whole
//! otherwise. Every other token has a single reading. Labels depend only on
//! the morpheme class.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Sentence, Split, TokenEntry};
use crate::error::{Error, Result};

pub const TRIGGER: &str = "gi";
const AMBIGUOUS_PREFIX: &str = "ba";
const OTHER_PREFIX: &str = "ko";
const SUFFIX: &str = "ta";

pub const AMBIGUOUS_STEMS: [&str; 10] = ["fod", "dib", "cuj", "heg", "jac", "bof", "gud", "dej", "hib", "cag"];
pub const PLAIN_STEMS: [&str; 20] = [
    "jeh", "bic", "dac", "fuj", "gob", "hed", "jif", "cob", "dug", "fab", "gij", "hoc", "jud", "bed", "cif", "dog",
    "fuh", "gac", "hij", "jub",
];

const P_AMBIGUOUS_SENTENCE: f64 = 0.5;
const P_SPLIT_READING: f64 = 0.5;
const P_LATE_TRIGGER: f64 = 0.25;
const P_FREE_TRIGGER: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_sentences: usize,
    pub seed: u64,
}

/// One manifest line: `sent_id  token_idx  ambiguous  gold_split`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub sent_id: String,
    pub token_idx: usize,
    pub ambiguous: bool,
    pub gold_split: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub manifest: Vec<ManifestRow>,
}

impl SynthCorpus {
    pub fn manifest_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.manifest {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.sent_id, r.token_idx, r.ambiguous as u8, r.gold_split as u8
            );
        }
        out
    }

    /// Inverse of [`SynthCorpus::manifest_tsv`]; `#` lines are skipped.
    pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
        let flag = |s: &str, line: usize| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::parse(line, format!("expected 0 or 1, got {other:?}"))),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|(i, l)| {
                let cols: Vec<&str> = l.split('\t').collect();
                if cols.len() != 4 {
                    return Err(Error::parse(i + 1, "manifest rows need 4 columns"));
                }
                Ok(ManifestRow {
                    sent_id: cols[0].to_string(),
                    token_idx: cols[1].parse().map_err(|_| Error::parse(i + 1, "bad token index"))?,
                    ambiguous: flag(cols[2], i + 1)?,
                    gold_split: flag(cols[3], i + 1)?,
                })
            })
            .collect()
    }

    /// Manifest rows of ambiguous tokens.
    pub fn ambiguous(&self) -> impl Iterator<Item = &ManifestRow> {
        self.manifest.iter().filter(|r| r.ambiguous)
    }
}

fn label_for(morpheme: &str) -> &'static str {
    match morpheme {
        TRIGGER => "PART",
        AMBIGUOUS_PREFIX => "ADP",
        OTHER_PREFIX => "CCONJ",
        SUFFIX => "PRON",
        _ => "NOUN",
    }
}

fn is_stem(s: &str) -> bool {
    AMBIGUOUS_STEMS.contains(&s) || PLAIN_STEMS.contains(&s)
}

/// Gold segmentation and labels of `surfaces[idx]` under the generator's
/// rules, and whether the token is one of the ambiguous ones. Returns
/// `None` for tokens outside the synthetic language.
pub fn synthetic_analysis(surfaces: &[&str], idx: usize) -> Option<(TokenEntry, bool)> {
    let surface = *surfaces.get(idx)?;
    let pieces: Vec<&str> = if surface == TRIGGER || is_stem(surface) {
        vec![surface]
    } else {
        let (prefix, rest) = [AMBIGUOUS_PREFIX, OTHER_PREFIX]
            .iter()
            .find_map(|p| surface.strip_prefix(p).map(|r| (Some(*p), r)))
            .filter(|(_, r)| is_stem(r) || r.strip_suffix(SUFFIX).is_some_and(is_stem))
            .unwrap_or((None, surface));
        let (stem, suffix) = match rest.strip_suffix(SUFFIX) {
            Some(s) if is_stem(s) => (s, Some(SUFFIX)),
            _ => (rest, None),
        };
        if !is_stem(stem) {
            return None;
        }
        prefix.into_iter().chain([stem]).chain(suffix).collect()
    };
    let ambiguous = pieces.len() == 2 && pieces[0] == AMBIGUOUS_PREFIX && AMBIGUOUS_STEMS.contains(&pieces[1]);
    let entry = if ambiguous && !surfaces[..idx].contains(&TRIGGER) {
        TokenEntry::unsegmented(surface).with_labels(vec!["PROPN".into()])
    } else {
        let segs: Vec<String> = pieces.iter().map(|s| s.to_string()).collect();
        let labels = pieces.iter().map(|p| label_for(p).to_string()).collect();
        TokenEntry::new(surface, segs).with_labels(labels)
    };
    Some((entry, ambiguous))
}

fn regular_token<R: Rng>(rng: &mut R) -> String {
    let all: Vec<&str> = AMBIGUOUS_STEMS.iter().chain(PLAIN_STEMS.iter()).copied().collect();
    let stem = *all.choose(rng).expect("non-empty lexicon");
    let ambiguous_stem = AMBIGUOUS_STEMS.contains(&stem);
    let r: f64 = rng.gen();
    let prefix = if r < 0.5 {
        ""
    } else if r < 0.75 && !ambiguous_stem {
        AMBIGUOUS_PREFIX
    } else {
        OTHER_PREFIX
    };
    let suffix = if rng.gen_bool(0.3) { SUFFIX } else { "" };
    format!("{prefix}{stem}{suffix}")
}

fn sentence_surfaces<R: Rng>(rng: &mut R) -> Vec<String> {
    let len = rng.gen_range(3..=6);
    let mut words: Vec<String> = (0..len).map(|_| regular_token(rng)).collect();
    if rng.gen_bool(P_AMBIGUOUS_SENTENCE) {
        let pos = rng.gen_range(1..len);
        let stem = AMBIGUOUS_STEMS.choose(rng).expect("non-empty");
        words[pos] = format!("{AMBIGUOUS_PREFIX}{stem}");
        if rng.gen_bool(P_SPLIT_READING) {
            let trig = rng.gen_range(0..pos);
            words[trig] = TRIGGER.to_string();
        }
        if pos + 1 < len && rng.gen_bool(P_LATE_TRIGGER) {
            let late = rng.gen_range(pos + 1..len);
            words[late] = TRIGGER.to_string();
        }
    } else {
        for w in &mut words {
            if rng.gen_bool(P_FREE_TRIGGER) {
                *w = TRIGGER.to_string();
            }
        }
    }
    words
}

/// Deterministic in `cfg.seed`. Sentence ids are `synth-<seed>-<n>`, so
/// corpora drawn with different seeds never share ids.
pub fn generate_synthetic(cfg: SynthConfig) -> Result<SynthCorpus> {
    if cfg.n_sentences == 0 {
        return Err(Error::invalid("n_sentences must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sentences = Vec::with_capacity(cfg.n_sentences);
    let mut manifest = Vec::new();
    for i in 0..cfg.n_sentences {
        let sent_id = format!("synth-{}-{}", cfg.seed, i + 1);
        let surfaces = sentence_surfaces(&mut rng);
        let refs: Vec<&str> = surfaces.iter().map(String::as_str).collect();
        let mut tokens = Vec::with_capacity(refs.len());
        for idx in 0..refs.len() {
            let (entry, ambiguous) = synthetic_analysis(&refs, idx).expect("generated token is in the language");
            manifest.push(ManifestRow {
                sent_id: sent_id.clone(),
                token_idx: idx,
                ambiguous,
                gold_split: entry.segments.len() > 1,
            });
            tokens.push(entry);
        }
        sentences.push(Sentence::new(sent_id, tokens));
    }
    Ok(SynthCorpus {
        corpus: Corpus::new(sentences, Split::Train),
        manifest,
    })
}
