//! Corpora of tokens with gold word segmentations.

mod conllu;
mod synth;
mod vocab;

use std::fmt;
use std::str::FromStr;

pub use conllu::{parse_conllu, read_conllu, write_conllu, write_conllu_annotated};
pub use synth::{
    generate_synthetic, synthetic_analysis, ManifestRow, SynthConfig, SynthCorpus, AMBIGUOUS_STEMS, PLAIN_STEMS,
    TRIGGER,
};
pub use vocab::{build_vocabs, CharVocab, LabelVocab, BOS, EOT, NUM_RESERVED, PAD, SPACE, UNK};

use crate::error::{Error, Result};

/// A raw token and the words it is made of.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenEntry {
    pub surface: String,
    pub segments: Vec<String>,
    pub labels: Option<Vec<String>>,
    /// Half-open range of word positions (0-based) this token covers
    /// within its sentence.
    pub span: (usize, usize),
}

impl TokenEntry {
    pub fn new(surface: impl Into<String>, segments: Vec<String>) -> Self {
        let n = segments.len();
        TokenEntry {
            surface: surface.into(),
            segments,
            labels: None,
            span: (0, n),
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }

    /// A token whose only word is its own surface.
    pub fn unsegmented(surface: impl Into<String>) -> Self {
        let s = surface.into();
        TokenEntry::new(s.clone(), vec![s])
    }

    pub fn validate(&self) -> Result<()> {
        if self.surface.is_empty() {
            return Err(Error::invalid("token with empty surface"));
        }
        if self.segments.is_empty() || self.segments.iter().any(String::is_empty) {
            return Err(Error::invalid(format!("token {:?} has an empty segmentation", self.surface)));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.segments.len() {
                return Err(Error::invalid(format!(
                    "token {:?}: {} labels for {} segments",
                    self.surface,
                    labels.len(),
                    self.segments.len()
                )));
            }
        }
        Ok(())
    }
}

/// Form, head position (0 = root, otherwise 1-based word index) and relation
/// of one word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepTriple {
    pub form: String,
    pub head: usize,
    pub rel: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub sent_id: String,
    pub tokens: Vec<TokenEntry>,
    pub dep: Option<Vec<DepTriple>>,
}

impl Sentence {
    pub fn new(sent_id: impl Into<String>, tokens: Vec<TokenEntry>) -> Self {
        let mut s = Sentence {
            sent_id: sent_id.into(),
            tokens,
            dep: None,
        };
        s.reindex();
        s
    }

    /// Recomputes token spans from segment counts.
    pub fn reindex(&mut self) {
        let mut pos = 0;
        for t in &mut self.tokens {
            t.span = (pos, pos + t.segments.len());
            pos += t.segments.len();
        }
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn num_words(&self) -> usize {
        self.tokens.iter().map(|t| t.segments.len()).sum()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().flat_map(|t| t.segments.iter().map(String::as_str))
    }

    /// Word labels in order, if every token carries them.
    pub fn word_labels(&self) -> Option<Vec<&str>> {
        let mut out = Vec::new();
        for t in &self.tokens {
            out.extend(t.labels.as_ref()?.iter().map(String::as_str));
        }
        Some(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub split: Split,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>, split: Split) -> Self {
        Corpus { sentences, split }
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &TokenEntry> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn has_labels(&self) -> bool {
        !self.is_empty() && self.tokens().all(|t| t.labels.is_some())
    }
}
