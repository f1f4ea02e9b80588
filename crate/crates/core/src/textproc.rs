//! Text normalization, tokenization and the word-to-index vocabulary.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const SOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;

pub const SOS_TOKEN: &str = "<SOS>";
pub const EOS_TOKEN: &str = "<EOS>";
pub const UNK_TOKEN: &str = "<UNK>";

const SPECIALS: [&str; 3] = [SOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Characters split off as standalone tokens. Anything else stays attached
/// to its word.
pub const PUNCTUATION: [char; 4] = [',', '.', '!', '?'];

pub fn is_punctuation_token(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if PUNCTUATION.contains(&c))
}

/// Lowercases, splits `, . ! ?` into their own tokens and collapses
/// whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if PUNCTUATION.contains(&ch) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Bidirectional token/index map. Indices 0, 1 and 2 are always
/// `<SOS>`, `<EOS>` and `<UNK>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_index: HashMap<String, usize>,
    index_to_token: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary holding only the three reserved tokens.
    pub fn new() -> Self {
        let index_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let token_to_index = index_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_index,
            index_to_token,
        }
    }

    /// Rebuilds a vocabulary from its ordered token list (as persisted in a
    /// weight archive).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 3 || tokens[..3].iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(Error::Config(
                "vocabulary must start with <SOS>, <EOS>, <UNK>".into(),
            ));
        }
        let mut vocab = Vocabulary::new();
        for token in tokens.into_iter().skip(3) {
            if vocab.token_to_index.contains_key(&token) {
                return Err(Error::Config(format!("duplicate vocabulary token {token:?}")));
            }
            vocab.push(token);
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String) -> usize {
        let index = self.index_to_token.len();
        self.token_to_index.insert(token.clone(), index);
        self.index_to_token.push(token);
        index
    }

    /// Adds `token` if absent and returns its index.
    pub fn insert(&mut self, token: &str) -> usize {
        match self.token_to_index.get(token) {
            Some(&i) => i,
            None => self.push(token.to_string()),
        }
    }

    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    /// Never true: the reserved tokens are always present.
    pub fn is_empty(&self) -> bool {
        self.index_to_token.is_empty()
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.token_to_index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.index_to_token.get(index).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_index.contains_key(token)
    }

    /// Tokens in index order.
    pub fn tokens(&self) -> &[String] {
        &self.index_to_token
    }
}

/// Assigns indices (from 3 upwards) to every token seen at least
/// `min_count` times, in order of first occurrence.
pub fn build_vocab<T: AsRef<str>>(corpus: &[Vec<T>], min_count: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let min_count = min_count.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for token in corpus.iter().flatten().map(AsRef::as_ref) {
        let count = counts.entry(token).or_insert(0);
        if *count == 0 {
            order.push(token);
        }
        *count += 1;
    }
    let mut vocab = Vocabulary::new();
    for token in order {
        if counts[token] >= min_count {
            vocab.insert(token);
        }
    }
    Ok(vocab)
}

/// Maps tokens to indices, sending unknown tokens to `<UNK>`.
pub fn encode<T: AsRef<str>>(vocab: &Vocabulary, tokens: &[T], append_eos: bool) -> Vec<usize> {
    let mut out: Vec<usize> = tokens
        .iter()
        .map(|t| vocab.index(t.as_ref()).unwrap_or(UNK))
        .collect();
    if append_eos {
        out.push(EOS);
    }
    out
}

/// Joins tokens with single spaces, dropping `<SOS>` and `<EOS>`.
pub fn decode_tokens(vocab: &Vocabulary, indices: &[usize]) -> Result<String> {
    let mut words = Vec::with_capacity(indices.len());
    for &i in indices {
        let token = vocab.token(i).ok_or(Error::IndexOutOfRange {
            what: "vocabulary",
            index: i,
            size: vocab.len(),
        })?;
        if i != SOS && i != EOS {
            words.push(token);
        }
    }
    Ok(words.join(" "))
}
