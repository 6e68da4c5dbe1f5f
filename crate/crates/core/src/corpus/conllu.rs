//! CoNLL-U reading and writing.
//!
//! Only ID, FORM, UPOS, HEAD and DEPREL are kept. Multiword range lines
//! `i-j` become one token whose segments are the FORMs of words `i..=j`;
//! any other word line is a single-segment token. Empty nodes (`i.k`) are
//! skipped.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use super::{Corpus, DepTriple, Sentence, Split, TokenEntry};
use crate::error::{Error, Result};

const COLUMNS: usize = 10;

struct Word {
    form: String,
    upos: Option<String>,
    head: Option<usize>,
    rel: Option<String>,
}

struct Range {
    start: usize,
    end: usize,
    form: String,
    line: usize,
}

#[derive(Default)]
struct Builder {
    sent_id: Option<String>,
    tokens: Vec<TokenEntry>,
    words: Vec<Word>,
    open: Option<Range>,
    pending: Vec<Word>,
    last_range_end: usize,
    first_line: usize,
}

impl Builder {
    fn is_empty(&self) -> bool {
        self.sent_id.is_none() && self.words.is_empty() && self.open.is_none()
    }

    fn push_token(&mut self, surface: String, words: Vec<Word>) {
        let labels: Option<Vec<String>> = words.iter().map(|w| w.upos.clone()).collect();
        let segments = words.iter().map(|w| w.form.clone()).collect();
        let mut entry = TokenEntry::new(surface, segments);
        entry.labels = labels;
        self.tokens.push(entry);
        self.words.extend(words);
    }

    fn add_word(&mut self, id: usize, word: Word, line: usize) -> Result<()> {
        let expected = self.words.len() + self.pending.len() + 1;
        if id != expected {
            return Err(Error::parse(line, format!("word id {id}, expected {expected}")));
        }
        match &self.open {
            Some(r) => {
                self.pending.push(word);
                if id == r.end {
                    let r = self.open.take().expect("open range");
                    let words = std::mem::take(&mut self.pending);
                    self.push_token(r.form, words);
                }
            }
            None => {
                let surface = word.form.clone();
                self.push_token(surface, vec![word]);
            }
        }
        Ok(())
    }

    fn finish(mut self, index: usize, line: usize) -> Result<Sentence> {
        if let Some(r) = &self.open {
            return Err(Error::parse(r.line, format!("range {}-{} is not completed", r.start, r.end)));
        }
        if self.tokens.is_empty() {
            return Err(Error::parse(line, "sentence without tokens"));
        }
        let sent_id = self.sent_id.take().unwrap_or_else(|| {
            let id = format!("auto-{}", index + 1);
            warn!("sentence at line {} has no sent_id; assigned {id}", self.first_line);
            id
        });
        let n = self.words.len();
        let dep = if self.words.iter().all(|w| w.head.is_some() && w.rel.is_some()) {
            let mut triples = Vec::with_capacity(n);
            for w in &self.words {
                let head = w.head.expect("checked");
                if head > n {
                    return Err(Error::parse(line, format!("head {head} outside sentence of {n} words")));
                }
                triples.push(DepTriple {
                    form: w.form.clone(),
                    head,
                    rel: w.rel.clone().expect("checked"),
                });
            }
            Some(triples)
        } else {
            None
        };
        let mut s = Sentence::new(sent_id, self.tokens);
        s.dep = dep;
        Ok(s)
    }
}

fn field(s: &str) -> Option<String> {
    (s != "_").then(|| s.to_string())
}

/// Parses CoNLL-U text. Sentences are terminated by blank lines or EOF.
pub fn parse_conllu(text: &str, split: Split) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut seen = HashSet::new();
    let mut b = Builder::default();
    let mut last_line = 0;

    let mut close = |b: Builder, sentences: &mut Vec<Sentence>, line: usize| -> Result<()> {
        let s = b.finish(sentences.len(), line)?;
        if !seen.insert(s.sent_id.clone()) {
            return Err(Error::parse(line, format!("duplicate sent_id {:?}", s.sent_id)));
        }
        sentences.push(s);
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            if !b.is_empty() {
                close(std::mem::take(&mut b), &mut sentences, line)?;
            }
            continue;
        }
        if b.is_empty() {
            b.first_line = line;
        }
        if let Some(comment) = raw.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    b.sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != COLUMNS {
            return Err(Error::parse(line, format!("expected {COLUMNS} columns, found {}", cols.len())));
        }
        let id = cols[0];
        if id.contains('.') {
            continue;
        }
        if let Some((a, z)) = id.split_once('-') {
            let start: usize = a.parse().map_err(|_| Error::parse(line, format!("bad range id {id:?}")))?;
            let end: usize = z.parse().map_err(|_| Error::parse(line, format!("bad range id {id:?}")))?;
            if start == 0 || end < start {
                return Err(Error::parse(line, format!("bad range {id:?}")));
            }
            if b.open.is_some() || start <= b.last_range_end {
                return Err(Error::parse(line, format!("range {id} overlaps a previous range")));
            }
            let next = b.words.len() + 1;
            if start != next {
                return Err(Error::parse(line, format!("range {id} does not start at word {next}")));
            }
            b.last_range_end = end;
            b.open = Some(Range {
                start,
                end,
                form: cols[1].to_string(),
                line,
            });
            continue;
        }
        let id: usize = id.parse().map_err(|_| Error::parse(line, format!("bad word id {id:?}")))?;
        let head = match cols[6] {
            "_" => None,
            h => Some(h.parse().map_err(|_| Error::parse(line, format!("bad head {h:?}")))?),
        };
        let word = Word {
            form: cols[1].to_string(),
            upos: field(cols[3]),
            head,
            rel: field(cols[7]),
        };
        b.add_word(id, word, line)?;
    }
    if !b.is_empty() {
        close(b, &mut sentences, last_line)?;
    }
    Ok(Corpus::new(sentences, split))
}

pub fn read_conllu(path: impl AsRef<Path>, split: Split) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    parse_conllu(&text, split)
}

/// Serializes a corpus. Tokens whose segmentation is not just their own
/// surface get a range line (including `i-i` for a single rewritten word).
/// A token with no segments at all (an empty prediction) is written as its
/// bare surface, since CoNLL-U cannot express zero words.
pub fn write_conllu(corpus: &Corpus) -> String {
    write_conllu_annotated(corpus, |_| Vec::new())
}

/// Like [`write_conllu`], adding `# key = value` comments after each
/// sentence id; `comments` receives the sentence index.
pub fn write_conllu_annotated(corpus: &Corpus, comments: impl Fn(usize) -> Vec<(String, String)>) -> String {
    let mut out = String::new();
    for (si, s) in corpus.sentences.iter().enumerate() {
        let _ = writeln!(out, "# sent_id = {}", s.sent_id);
        for (k, v) in comments(si) {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let mut id = 1;
        for t in &s.tokens {
            let bare = [t.surface.clone()];
            let segments = if t.segments.is_empty() { &bare[..] } else { &t.segments[..] };
            let n = segments.len();
            if n > 1 || segments[0] != t.surface {
                let _ = writeln!(out, "{}-{}\t{}\t_\t_\t_\t_\t_\t_\t_\t_", id, id + n - 1, t.surface);
            }
            for (k, seg) in segments.iter().enumerate() {
                let upos = t
                    .labels
                    .as_ref()
                    .and_then(|l| l.get(k))
                    .map(String::as_str)
                    .unwrap_or("_");
                let (head, rel) = match s.dep.as_ref().and_then(|d| d.get(id - 1)) {
                    Some(tr) => (tr.head.to_string(), tr.rel.as_str()),
                    None => ("_".to_string(), "_"),
                };
                let _ = writeln!(out, "{id}\t{seg}\t_\t{upos}\t_\t_\t{head}\t{rel}\t_\t_");
                id += 1;
            }
        }
        out.push('\n');
    }
    out
}
