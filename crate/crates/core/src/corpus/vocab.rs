use std::collections::HashMap;

use super::{Corpus, TokenEntry};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SPACE: usize = 2;
pub const EOT: usize = 3;
pub const BOS: usize = 4;
pub const NUM_RESERVED: usize = 5;

/// Character alphabet with the five reserved symbols in front. Ids of
/// ordinary characters follow first-occurrence order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    ids: HashMap<char, usize>,
}

impl CharVocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = CharVocab::new();
        for c in chars {
            v.insert(c);
        }
        v
    }

    pub fn insert(&mut self, c: char) -> usize {
        if let Some(&id) = self.ids.get(&c) {
            return id;
        }
        let id = NUM_RESERVED + self.chars.len();
        self.chars.push(c);
        self.ids.insert(c, id);
        id
    }

    /// Total number of symbols, reserved ones included.
    pub fn len(&self) -> usize {
        NUM_RESERVED + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id_of(&self, c: char) -> usize {
        self.ids.get(&c).copied().unwrap_or(UNK)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(NUM_RESERVED).and_then(|i| self.chars.get(i).copied())
    }

    /// Ordinary characters in id order.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn encode(&self, s: &str) -> Vec<usize> {
        s.chars().map(|c| self.id_of(c)).collect()
    }

    /// Segments joined by SPACE and terminated by EOT.
    pub fn target_ids(&self, segments: &[String]) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, seg) in segments.iter().enumerate() {
            if i > 0 {
                out.push(SPACE);
            }
            out.extend(seg.chars().map(|c| self.id_of(c)));
        }
        out.push(EOT);
        out
    }

    pub fn target_string(&self, entry: &TokenEntry) -> Vec<usize> {
        self.target_ids(&entry.segments)
    }

    /// Splits an emitted id stream on SPACE, stopping at EOT. Empty pieces
    /// (from adjacent SPACEs) are dropped; UNK renders as U+FFFD and other
    /// reserved ids are skipped.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for &id in ids {
            match id {
                EOT => break,
                SPACE => {
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                }
                UNK => cur.push(char::REPLACEMENT_CHARACTER),
                _ => {
                    if let Some(c) = self.char_of(id) {
                        cur.push(c);
                    }
                }
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelVocab {
    labels: Vec<String>,
    ids: HashMap<String, usize>,
}

impl LabelVocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<S: AsRef<str>>(labels: impl IntoIterator<Item = S>) -> Self {
        let mut v = LabelVocab::new();
        for l in labels {
            v.insert(l.as_ref());
        }
        v
    }

    pub fn insert(&mut self, label: &str) -> usize {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        self.labels.push(label.to_string());
        self.ids.insert(label.to_string(), self.labels.len() - 1);
        self.labels.len() - 1
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.ids.get(label).copied()
    }

    pub fn label_of(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Character alphabet over every surface and gold segment, and the label
/// set of the corpus.
pub fn build_vocabs(corpus: &Corpus) -> Result<(CharVocab, LabelVocab)> {
    if corpus.num_tokens() == 0 {
        return Err(Error::invalid("cannot build vocabularies from an empty corpus"));
    }
    let mut chars = CharVocab::new();
    let mut labels = LabelVocab::new();
    for t in corpus.tokens() {
        for c in t.surface.chars().chain(t.segments.iter().flat_map(|s| s.chars())) {
            chars.insert(c);
        }
        for l in t.labels.iter().flatten() {
            labels.insert(l);
        }
    }
    Ok((chars, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, Split};

    fn corpus(tokens: Vec<TokenEntry>) -> Corpus {
        Corpus::new(vec![Sentence::new("s", tokens)], Split::Train)
    }

    fn segs(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn vocab_covers_surfaces_segments_and_labels() {
        let c = corpus(vec![TokenEntry::new("bslm", segs(&["b", "slm"]))
            .with_labels(segs(&["ADP", "NOUN"]))]);
        let (chars, labels) = build_vocabs(&c).unwrap();
        assert_eq!(chars.len(), 9);
        assert_eq!(labels.len(), 2);
        assert_eq!(chars.id_of('b'), NUM_RESERVED);
    }

    #[test]
    fn segment_only_characters_are_included() {
        let c = corpus(vec![TokenEntry::new("bslm", segs(&["b", "h", "slm"]))]);
        let (chars, _) = build_vocabs(&c).unwrap();
        assert_ne!(chars.id_of('h'), UNK);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_vocabs(&Corpus::default()).is_err());
    }

    #[test]
    fn target_strings() {
        let v = CharVocab::from_chars("bslmdog".chars());
        let ids = v.target_ids(&segs(&["b", "slm"]));
        assert_eq!(ids, [v.id_of('b'), SPACE, v.id_of('s'), v.id_of('l'), v.id_of('m'), EOT]);
        let ids = v.target_ids(&segs(&["dog"]));
        assert!(!ids.contains(&SPACE));
        assert_eq!(*ids.last().unwrap(), EOT);
        let ids = v.target_ids(&segs(&["b", "h", "slm"]));
        assert_eq!(ids.iter().filter(|&&i| i == SPACE).count(), 2);
        assert_eq!(ids.iter().filter(|&&i| i == EOT).count(), 1);
        assert!(ids.contains(&UNK));
    }

    #[test]
    fn decode_drops_empty_segments() {
        let v = CharVocab::from_chars("bslm".chars());
        let mut ids = v.encode("b");
        ids.push(SPACE);
        ids.extend(v.encode("slm"));
        ids.push(EOT);
        assert_eq!(v.decode(&ids), ["b", "slm"]);
        assert!(v.decode(&[SPACE, SPACE, EOT]).is_empty());
    }

    #[test]
    fn encoding_never_yields_reserved_output_symbols() {
        let v = CharVocab::from_chars("ab ".chars());
        for id in v.encode("a b\u{3}z") {
            assert!(id != SPACE && id != EOT && id != PAD && id != BOS);
        }
    }
}
