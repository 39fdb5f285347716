//! Normalization, word-level tokenization, and token vocabulary.
//!
//! The rules are deliberately small and deterministic: lowercase
//! everything except the anonymization placeholders, split on
//! whitespace, peel surrounding punctuation into standalone tokens,
//! and emit emoji as single tokens. Stop words are never removed.

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

pub const UNK_TOKEN: &str = "<unk>";
pub const PLACEHOLDER_NAME: &str = "[NAME]";
pub const PLACEHOLDER_RELIGION: &str = "[RELIGION]";
/// Spelling variant that occurs in the wild; canonicalized on sight.
const PLACEHOLDER_RELIGION_ALT: &str = "[RELEGION]";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercase cased letters; placeholders keep their bracketed uppercase form.
pub fn normalize(text: &str) -> String {
    let text = text.replace(PLACEHOLDER_RELIGION_ALT, PLACEHOLDER_RELIGION);
    let mut out = String::with_capacity(text.len());
    let mut rest = text.as_str();
    while !rest.is_empty() {
        let next = [PLACEHOLDER_NAME, PLACEHOLDER_RELIGION]
            .iter()
            .filter_map(|p| rest.find(p).map(|i| (i, *p)))
            .min_by_key(|(i, _)| *i);
        match next {
            Some((i, p)) => {
                out.extend(rest[..i].chars().flat_map(|c| c.to_lowercase()));
                out.push_str(p);
                rest = &rest[i + p.len()..];
            }
            None => {
                out.extend(rest.chars().flat_map(|c| c.to_lowercase()));
                rest = "";
            }
        }
    }
    out
}

fn is_emoji_like(c: char) -> bool {
    !c.is_ascii() && !c.is_alphanumeric()
}

/// Whitespace split, then surrounding punctuation becomes standalone tokens
/// and emoji become single tokens. Internal apostrophes are kept, so
/// contractions survive intact.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    for raw in text.split_whitespace() {
        if raw == PLACEHOLDER_NAME || raw == PLACEHOLDER_RELIGION {
            tokens.push(raw.to_string());
            continue;
        }
        if raw == PLACEHOLDER_RELIGION_ALT {
            tokens.push(PLACEHOLDER_RELIGION.to_string());
            continue;
        }
        let chars: Vec<char> = raw.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        let mut leading = Vec::new();
        let mut trailing = Vec::new();
        while start < end && chars[start].is_ascii_punctuation() {
            leading.push(chars[start].to_string());
            start += 1;
        }
        while end > start && chars[end - 1].is_ascii_punctuation() {
            trailing.push(chars[end - 1].to_string());
            end -= 1;
        }
        trailing.reverse();
        tokens.extend(leading);
        // core: emoji split out as single tokens, everything else kept in runs
        let mut run = String::new();
        for &c in &chars[start..end] {
            if is_emoji_like(c) {
                if !run.is_empty() {
                    tokens.push(std::mem::take(&mut run));
                }
                tokens.push(c.to_string());
            } else {
                run.push(c);
            }
        }
        if !run.is_empty() {
            tokens.push(run);
        }
        tokens.extend(trailing);
    }
    TokenSequence { tokens }
}

#[derive(Clone, Debug)]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unk_index: usize,
}

impl TokenVocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TokenVocabulary {
            tokens,
            index,
            unk_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_index(&self) -> usize {
        self.unk_index
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    /// Unknown tokens map to the reserved unk index.
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk_index)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for t in &self.tokens {
            writeln!(f, "{t}").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut tokens = Vec::new();
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            tokens.push(line);
        }
        if tokens.is_empty() {
            return Err(Error::validation("empty token vocabulary file"));
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Build a vocabulary from training corpora: tokens with document frequency
/// >= `min_df`, most frequent first (ties lexicographic), truncated to
/// `max_size`. The unk token and placeholders are always present.
pub fn build_vocab(corpora: &[&Corpus], min_df: usize, max_size: usize) -> Result<TokenVocabulary> {
    if corpora.iter().all(|c| c.examples.is_empty()) {
        return Err(Error::validation("cannot build vocabulary from empty corpora"));
    }
    assert!(min_df >= 1);
    let mut df: HashMap<String, usize> = HashMap::new();
    for corpus in corpora {
        for ex in &corpus.examples {
            let seq = tokenize(&normalize(&ex.text));
            let uniq: BTreeSet<&String> = seq.tokens.iter().collect();
            for t in uniq {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
    }
    let reserved = [UNK_TOKEN, PLACEHOLDER_NAME, PLACEHOLDER_RELIGION];
    let mut ranked: Vec<(String, usize)> = df
        .into_iter()
        .filter(|(t, d)| *d >= min_df && !reserved.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens: Vec<String> = reserved.iter().map(|s| s.to_string()).collect();
    for (t, _) in ranked {
        if tokens.len() >= max_size.max(reserved.len()) {
            break;
        }
        tokens.push(t);
    }
    Ok(TokenVocabulary::from_tokens(tokens))
}
