//! Whitespace tokenization, vocabulary construction with reserved special
//! tokens, and sequence encoding for the cross-encoder input layout
//! `[CLS] s1 [SEP] s2 [SEP]`.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::corpus::Corpus;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_SPECIALS: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Returns true for the reserved ids 0..5 (PAD/UNK/CLS/SEP/MASK).
pub fn is_special_id(id: usize) -> bool {
    id < NUM_SPECIALS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizeOptions {
    pub lowercase: bool,
    pub strip_punct: bool,
}

impl Default for TokenizeOptions {
    fn default() -> Self {
        TokenizeOptions { lowercase: true, strip_punct: true }
    }
}

impl TokenizeOptions {
    /// Raw whitespace splitting, no normalization.
    pub fn raw() -> Self {
        TokenizeOptions { lowercase: false, strip_punct: false }
    }
}

/// Whitespace-delimited tokens after the configured normalizations.
pub fn tokenize(text: &str, opts: TokenizeOptions) -> Vec<String> {
    let mut normalized = if opts.lowercase { text.to_lowercase() } else { text.to_string() };
    if opts.strip_punct {
        normalized.retain(|c| !c.is_ascii_punctuation());
    }
    normalized.split_whitespace().map(|t| t.to_string()).collect()
}

/// Union of `tokenize` over every sentence of the corpus (both sides of
/// labeled pairs).
pub fn token_set(corpus: &Corpus, opts: TokenizeOptions) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for pair in corpus.pairs() {
        set.extend(tokenize(&pair.sentence1, opts));
        set.extend(tokenize(&pair.sentence2, opts));
    }
    for sentence in corpus.sentences() {
        set.extend(tokenize(sentence, opts));
    }
    set
}

#[derive(Debug, Error)]
pub enum TextError {
    #[error("max_size must be greater than {NUM_SPECIALS}, got {0}")]
    MaxSizeTooSmall(usize),
    #[error("max_len must be at least 4, got {0}")]
    MaxLenTooSmall(usize),
    #[error("vocabulary file line {line}: expected special token `{expected}`, found `{found}`")]
    BadSpecial { line: usize, expected: String, found: String },
    #[error("vocabulary file contains duplicate token `{0}`")]
    DuplicateToken(String),
}

/// Token-to-id map with the five reserved specials at ids 0..5.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from corpora: tokens with frequency >= `min_freq`, ranked by
    /// (frequency desc, token asc), truncated to `max_size - 5` after the
    /// specials. Corpus tokens that collide with special-token strings are
    /// skipped.
    pub fn build(
        corpora: &[&Corpus],
        opts: TokenizeOptions,
        min_freq: usize,
        max_size: usize,
    ) -> Result<Self, TextError> {
        if max_size <= NUM_SPECIALS {
            return Err(TextError::MaxSizeTooSmall(max_size));
        }
        let mut freq: HashMap<String, usize> = HashMap::new();
        let mut count = |text: &str| {
            for token in tokenize(text, opts) {
                if SPECIAL_TOKENS.contains(&token.as_str()) {
                    continue;
                }
                *freq.entry(token).or_insert(0) += 1;
            }
        };
        for corpus in corpora {
            for pair in corpus.pairs() {
                count(&pair.sentence1);
                count(&pair.sentence2);
            }
            for sentence in corpus.sentences() {
                count(sentence);
            }
        }
        let mut ranked: Vec<(String, usize)> =
            freq.into_iter().filter(|(_, n)| *n >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - NUM_SPECIALS);

        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().map(|(t, _)| t));
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// One token per line; the line number is the id, specials first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for token in &self.tokens {
            out.push_str(token);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
        for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
            let found = lines.get(i).copied().unwrap_or("");
            if found != *expected {
                return Err(TextError::BadSpecial {
                    line: i + 1,
                    expected: expected.to_string(),
                    found: found.to_string(),
                });
            }
        }
        let tokens: Vec<String> = lines.into_iter().map(|l| l.to_string()).collect();
        let mut seen = HashMap::new();
        for token in &tokens {
            if seen.insert(token.clone(), ()).is_some() {
                return Err(TextError::DuplicateToken(token.clone()));
            }
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Encoded token ids plus an attention mask that is 1 exactly on non-PAD
/// positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of attended (non-PAD) positions.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Encode a sentence pair as `[CLS] s1 [SEP] s2 [SEP]`, padded to `max_len`.
/// When the pair does not fit, tokens are dropped from the right of the
/// currently longer sentence (ties truncate s1) until it does.
pub fn encode_pair(
    s1: &str,
    s2: &str,
    vocab: &Vocabulary,
    max_len: usize,
    opts: TokenizeOptions,
) -> Result<TokenSequence, TextError> {
    if max_len < 4 {
        return Err(TextError::MaxLenTooSmall(max_len));
    }
    let mut t1 = tokenize(s1, opts);
    let mut t2 = tokenize(s2, opts);
    let budget = max_len - 3; // CLS + 2x SEP
    while t1.len() + t2.len() > budget {
        if t1.len() >= t2.len() {
            t1.pop();
        } else {
            t2.pop();
        }
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(t1.iter().map(|t| vocab.id_or_unk(t)));
    ids.push(SEP);
    ids.extend(t2.iter().map(|t| vocab.id_or_unk(t)));
    ids.push(SEP);
    finish_sequence(ids, max_len)
}

/// Encode a single sentence as `[CLS] s [SEP]`, padded to `max_len`.
pub fn encode_single(
    s: &str,
    vocab: &Vocabulary,
    max_len: usize,
    opts: TokenizeOptions,
) -> Result<TokenSequence, TextError> {
    if max_len < 4 {
        return Err(TextError::MaxLenTooSmall(max_len));
    }
    let mut tokens = tokenize(s, opts);
    tokens.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(tokens.iter().map(|t| vocab.id_or_unk(t)));
    ids.push(SEP);
    finish_sequence(ids, max_len)
}

fn finish_sequence(mut ids: Vec<usize>, max_len: usize) -> Result<TokenSequence, TextError> {
    let active = ids.len();
    ids.resize(max_len, PAD);
    let mut attention_mask = vec![0u8; max_len];
    for m in attention_mask.iter_mut().take(active) {
        *m = 1;
    }
    Ok(TokenSequence { ids, attention_mask })
}
