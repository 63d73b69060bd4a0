//! Machine-translation data augmentation behind a pluggable client.
//!
//! The mock client applies a seeded bijective token permutation over a
//! shared synthetic vocabulary, so pipelines stay offline and round-trip
//! exactly. The HTTP client speaks `POST /translate` with a JSON body
//! `{"source_lang", "target_lang", "texts"}` and retries transient failures
//! with exponential backoff.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Provenance, SentencePair, Split};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("language pair {src}->{tgt} not supported by the client")]
    UnsupportedPair { src: String, tgt: String },
    #[error("batch of {len} texts exceeds client maximum {max}")]
    BatchTooLarge { len: usize, max: usize },
    #[error("client returned {received} translations for {sent} texts")]
    LengthMismatch { sent: usize, received: usize },
    #[error("translation request failed after {attempts} attempts: {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("translation response malformed: {0}")]
    BadResponse(String),
    #[error("augmentation source must be English, got `{0}`")]
    SourceNotEnglish(String),
    #[error("corpus `{0}` is not labeled")]
    NotLabeled(String),
    #[error("while translating pairs {first}..{last} to {tgt}: {source}")]
    BatchContext { first: String, last: String, tgt: String, source: Box<AugmentError> },
    #[error("STS-B line {line}: raw score {value} outside [0,5]")]
    RawScoreOutOfRange { line: usize, value: f64 },
    #[error("STS-B line {line}: {detail}")]
    BadStsbRow { line: usize, detail: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// A machine-translation backend: reports its capabilities and translates
/// batches, preserving list length and order.
pub trait TranslationClient {
    fn supports(&self, src: &str, tgt: &str) -> bool;
    fn max_batch_size(&self) -> usize;
    fn translate(&self, texts: &[String], src: &str, tgt: &str)
        -> Result<Vec<String>, AugmentError>;
}

/// Checked entry point: validates the pair and batch size, then verifies the
/// client preserved length.
pub fn translate_batch(
    client: &dyn TranslationClient,
    texts: &[String],
    src: &str,
    tgt: &str,
) -> Result<Vec<String>, AugmentError> {
    if !client.supports(src, tgt) {
        return Err(AugmentError::UnsupportedPair { src: src.to_string(), tgt: tgt.to_string() });
    }
    if texts.len() > client.max_batch_size() {
        return Err(AugmentError::BatchTooLarge {
            len: texts.len(),
            max: client.max_batch_size(),
        });
    }
    let out = client.translate(texts, src, tgt)?;
    if out.len() != texts.len() {
        return Err(AugmentError::LengthMismatch { sent: texts.len(), received: out.len() });
    }
    Ok(out)
}

/// Deterministic mock translator: a per-(src,tgt) bijective token
/// permutation over a shared synthetic vocabulary. Tokens outside the
/// vocabulary map to themselves, and whitespace is preserved exactly, so
/// `translate(translate(x, A->B), B->A) = x`.
#[derive(Debug, Clone)]
pub struct MockTranslator {
    seed: u64,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    max_batch: usize,
}

impl MockTranslator {
    pub fn new(seed: u64, vocab: Vec<String>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        MockTranslator { seed, vocab, index, max_batch: 64 }
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch;
        self
    }

    /// Forward permutation for the canonically ordered pair (lo, hi).
    fn pair_permutation(&self, lo: &str, hi: &str) -> Vec<usize> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(lo.as_bytes());
        hasher.update(b"->");
        hasher.update(hi.as_bytes());
        let digest = hasher.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..self.vocab.len()).collect();
        perm.shuffle(&mut rng);
        perm
    }

    fn mapping(&self, src: &str, tgt: &str) -> Option<Vec<usize>> {
        if src == tgt {
            return None; // identity
        }
        let (lo, hi) = if src <= tgt { (src, tgt) } else { (tgt, src) };
        let forward = self.pair_permutation(lo, hi);
        if src == lo {
            Some(forward)
        } else {
            let mut inverse = vec![0; forward.len()];
            for (i, &j) in forward.iter().enumerate() {
                inverse[j] = i;
            }
            Some(inverse)
        }
    }

    /// Translate one text, preserving every whitespace run.
    pub fn translate_text(&self, text: &str, src: &str, tgt: &str) -> String {
        let Some(mapping) = self.mapping(src, tgt) else {
            return text.to_string();
        };
        let mut out = String::with_capacity(text.len());
        let mut token = String::new();
        let flush = |token: &mut String, out: &mut String| {
            if token.is_empty() {
                return;
            }
            match self.index.get(token.as_str()) {
                Some(&i) => out.push_str(&self.vocab[mapping[i]]),
                None => out.push_str(token),
            }
            token.clear();
        };
        for c in text.chars() {
            if c.is_whitespace() {
                flush(&mut token, &mut out);
                out.push(c);
            } else {
                token.push(c);
            }
        }
        flush(&mut token, &mut out);
        out
    }
}

impl TranslationClient for MockTranslator {
    fn supports(&self, _src: &str, _tgt: &str) -> bool {
        true
    }

    fn max_batch_size(&self) -> usize {
        self.max_batch
    }

    fn translate(
        &self,
        texts: &[String],
        src: &str,
        tgt: &str,
    ) -> Result<Vec<String>, AugmentError> {
        Ok(texts.iter().map(|t| self.translate_text(t, src, tgt)).collect())
    }
}

/// HTTP translation client for the `POST /translate` protocol.
pub struct HttpTranslator {
    endpoint: String,
    max_batch: usize,
    supported: Option<Vec<(String, String)>>,
    retries: u32,
    backoff: Duration,
}

impl HttpTranslator {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpTranslator {
            endpoint: endpoint.into(),
            max_batch: 32,
            supported: None,
            retries: 3,
            backoff: Duration::from_millis(50),
        }
    }

    /// Restrict the capability descriptor to the given pairs.
    pub fn with_supported_pairs(mut self, pairs: Vec<(String, String)>) -> Self {
        self.supported = Some(pairs);
        self
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn request(
        &self,
        texts: &[String],
        src: &str,
        tgt: &str,
    ) -> Result<Vec<String>, AugmentError> {
        let url = format!("{}/translate", self.endpoint.trim_end_matches('/'));
        let body = serde_json::json!({
            "source_lang": src,
            "target_lang": tgt,
            "texts": texts,
        });
        let mut attempts = 0;
        let mut delay = self.backoff;
        loop {
            attempts += 1;
            match ureq::post(&url).send_json(body.clone()) {
                Ok(response) => {
                    let value: serde_json::Value = response
                        .into_json()
                        .map_err(|e| AugmentError::BadResponse(e.to_string()))?;
                    let translations = value
                        .get("translations")
                        .and_then(|v| v.as_array())
                        .ok_or_else(|| {
                            AugmentError::BadResponse("missing `translations` array".into())
                        })?;
                    let mut out = Vec::with_capacity(translations.len());
                    for item in translations {
                        let s = item.as_str().ok_or_else(|| {
                            AugmentError::BadResponse("non-string translation".into())
                        })?;
                        out.push(s.to_string());
                    }
                    return Ok(out);
                }
                Err(err) => {
                    if attempts > self.retries {
                        return Err(AugmentError::Transport {
                            attempts,
                            detail: err.to_string(),
                        });
                    }
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
}

impl TranslationClient for HttpTranslator {
    fn supports(&self, src: &str, tgt: &str) -> bool {
        match &self.supported {
            None => true,
            Some(pairs) => pairs.iter().any(|(s, t)| s == src && t == tgt),
        }
    }

    fn max_batch_size(&self) -> usize {
        self.max_batch
    }

    fn translate(
        &self,
        texts: &[String],
        src: &str,
        tgt: &str,
    ) -> Result<Vec<String>, AugmentError> {
        self.request(texts, src, tgt)
    }
}

fn translate_all(
    client: &dyn TranslationClient,
    texts: &[String],
    ids: &[&str],
    src: &str,
    tgt: &str,
) -> Result<Vec<String>, AugmentError> {
    let mut out = Vec::with_capacity(texts.len());
    let chunk_size = client.max_batch_size().max(1);
    for (chunk, id_chunk) in texts.chunks(chunk_size).zip(ids.chunks(chunk_size)) {
        let translated =
            translate_batch(client, chunk, src, tgt).map_err(|e| AugmentError::BatchContext {
                first: id_chunk.first().map(|s| s.to_string()).unwrap_or_default(),
                last: id_chunk.last().map(|s| s.to_string()).unwrap_or_default(),
                tgt: tgt.to_string(),
                source: Box::new(e),
            })?;
        out.extend(translated);
    }
    Ok(out)
}

/// Translate an English labeled corpus into each target language. Scores
/// are copied unchanged; provenance is `semrel-mt`; ids gain a `semrel-mt/`
/// prefix.
pub fn augment_semrel(
    english: &Corpus,
    targets: &[String],
    client: &dyn TranslationClient,
) -> Result<BTreeMap<String, Corpus>, AugmentError> {
    if english.language != "eng" {
        return Err(AugmentError::SourceNotEnglish(english.language.clone()));
    }
    if !english.is_labeled() {
        return Err(AugmentError::NotLabeled(english.name.clone()));
    }
    let ids: Vec<&str> = english.pairs().iter().map(|p| p.id.as_str()).collect();
    let s1: Vec<String> = english.pairs().iter().map(|p| p.sentence1.clone()).collect();
    let s2: Vec<String> = english.pairs().iter().map(|p| p.sentence2.clone()).collect();

    let mut out = BTreeMap::new();
    for tgt in targets {
        let t1 = translate_all(client, &s1, &ids, "eng", tgt)?;
        let t2 = translate_all(client, &s2, &ids, "eng", tgt)?;
        let pairs: Vec<SentencePair> = english
            .pairs()
            .iter()
            .zip(t1.into_iter().zip(t2))
            .map(|(pair, (sentence1, sentence2))| SentencePair {
                id: format!("semrel-mt/{}", pair.id),
                sentence1,
                sentence2,
                score: pair.score,
                provenance: Provenance::SemrelMt,
            })
            .collect();
        let corpus =
            Corpus::labeled(format!("semrel-mt-{tgt}"), tgt.clone(), english.split, pairs)?;
        out.insert(tgt.clone(), corpus);
    }
    Ok(out)
}

/// Raw STS-B-style rows with scores on the original [0,5] scale.
#[derive(Debug, Clone)]
pub struct StsbFile {
    pub rows: Vec<StsbRow>,
}

#[derive(Debug, Clone)]
pub struct StsbRow {
    pub id: String,
    pub sentence1: String,
    pub sentence2: String,
    pub raw_score: f64,
}

/// Parse `id	sentence1	sentence2	score` with score in [0,5].
pub fn parse_stsb(bytes: &[u8]) -> Result<StsbFile, AugmentError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| AugmentError::Corpus(CorpusError::InvalidUtf8 { offset: e.valid_up_to() }))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| AugmentError::BadStsbRow { line: 1, detail: "empty file".into() })?;
    if header.trim_end_matches('\r') != "id\tsentence1\tsentence2\tscore" {
        return Err(AugmentError::BadStsbRow {
            line: 1,
            detail: format!("bad header `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let row = raw.trim_end_matches('\r');
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != 4 {
            return Err(AugmentError::BadStsbRow {
                line: line_no,
                detail: format!("expected 4 columns, found {}", fields.len()),
            });
        }
        let raw_score: f64 = fields[3].parse().map_err(|_| AugmentError::BadStsbRow {
            line: line_no,
            detail: format!("non-numeric score `{}`", fields[3]),
        })?;
        if !(0.0..=5.0).contains(&raw_score) {
            return Err(AugmentError::RawScoreOutOfRange { line: line_no, value: raw_score });
        }
        rows.push(StsbRow {
            id: fields[0].to_string(),
            sentence1: fields[1].to_string(),
            sentence2: fields[2].to_string(),
            raw_score,
        });
    }
    Ok(StsbFile { rows })
}

/// Translate STS-B rows into each target language, rescaling raw [0,5]
/// scores to [0,1] by division by 5; provenance is `stsb-mt`.
pub fn augment_stsb(
    stsb: &StsbFile,
    targets: &[String],
    client: &dyn TranslationClient,
) -> Result<BTreeMap<String, Corpus>, AugmentError> {
    let ids: Vec<&str> = stsb.rows.iter().map(|r| r.id.as_str()).collect();
    let s1: Vec<String> = stsb.rows.iter().map(|r| r.sentence1.clone()).collect();
    let s2: Vec<String> = stsb.rows.iter().map(|r| r.sentence2.clone()).collect();

    let mut out = BTreeMap::new();
    for tgt in targets {
        let t1 = translate_all(client, &s1, &ids, "eng", tgt)?;
        let t2 = translate_all(client, &s2, &ids, "eng", tgt)?;
        let pairs: Vec<SentencePair> = stsb
            .rows
            .iter()
            .zip(t1.into_iter().zip(t2))
            .map(|(row, (sentence1, sentence2))| SentencePair {
                id: format!("stsb-mt/{}", row.id),
                sentence1,
                sentence2,
                score: row.raw_score / 5.0,
                provenance: Provenance::StsbMt,
            })
            .collect();
        let corpus = Corpus::labeled(format!("stsb-mt-{tgt}"), tgt.clone(), Split::Train, pairs)?;
        out.insert(tgt.clone(), corpus);
    }
    Ok(out)
}
