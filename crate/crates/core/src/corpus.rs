//! Labeled pair data and unlabeled sentence data: parsing, validation,
//! splitting, and merging with provenance tracking.
//!
//! Labeled files are TSV with header `id	sentence1	sentence2	score`
//! and an optional `provenance` column; unlabeled files are one sentence per
//! line. Scores live in [0,1] and are rejected at parse time otherwise.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Where a training pair came from: the original dataset, or machine
/// translation of SemRel/STS-B English sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    Original,
    SemrelMt,
    StsbMt,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::SemrelMt => "semrel-mt",
            Provenance::StsbMt => "stsb-mt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(Provenance::Original),
            "semrel-mt" => Some(Provenance::SemrelMt),
            "stsb-mt" => Some(Provenance::StsbMt),
            _ => None,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A sentence pair with a gold relatedness score in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub id: String,
    pub sentence1: String,
    pub sentence2: String,
    pub score: f64,
    pub provenance: Provenance,
}

impl SentencePair {
    pub fn new(
        id: impl Into<String>,
        sentence1: impl Into<String>,
        sentence2: impl Into<String>,
        score: f64,
        provenance: Provenance,
    ) -> Result<Self, CorpusError> {
        let pair = SentencePair {
            id: id.into(),
            sentence1: sentence1.into(),
            sentence2: sentence2.into(),
            score,
            provenance,
        };
        if !(0.0..=1.0).contains(&score) {
            return Err(CorpusError::ScoreOutOfRange { line: 0, value: score });
        }
        if pair.sentence1.trim().is_empty() || pair.sentence2.trim().is_empty() {
            return Err(CorpusError::EmptySentence {
                line: 0,
                which: if pair.sentence1.trim().is_empty() { 1 } else { 2 },
            });
        }
        Ok(pair)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
    Unlabeled,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            "unlabeled" => Some(Split::Unlabeled),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named, language-tagged collection of sentence pairs (labeled) or bare
/// sentences (unlabeled). At most one of the two payloads is non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub language: String,
    pub split: Split,
    pairs: Vec<SentencePair>,
    sentences: Vec<String>,
}

impl Corpus {
    pub fn labeled(
        name: impl Into<String>,
        language: impl Into<String>,
        split: Split,
        pairs: Vec<SentencePair>,
    ) -> Result<Self, CorpusError> {
        let corpus = Corpus {
            name: name.into(),
            language: language.into(),
            split,
            pairs,
            sentences: Vec::new(),
        };
        if corpus.split == Split::Unlabeled {
            return Err(CorpusError::NotLabeled { name: corpus.name });
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, pair) in corpus.pairs.iter().enumerate() {
            if let Some(first) = seen.insert(pair.id.as_str(), i + 1) {
                return Err(CorpusError::DuplicateId {
                    id: pair.id.clone(),
                    first,
                    second: i + 1,
                });
            }
        }
        Ok(corpus)
    }

    pub fn unlabeled(
        name: impl Into<String>,
        language: impl Into<String>,
        sentences: Vec<String>,
    ) -> Self {
        Corpus {
            name: name.into(),
            language: language.into(),
            split: Split::Unlabeled,
            pairs: Vec::new(),
            sentences,
        }
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn is_labeled(&self) -> bool {
        self.split != Split::Unlabeled
    }

    pub fn len(&self) -> usize {
        if self.is_labeled() {
            self.pairs.len()
        } else {
            self.sentences.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_split(mut self, split: Split) -> Result<Self, CorpusError> {
        if split == Split::Unlabeled && !self.pairs.is_empty() {
            return Err(CorpusError::NotLabeled { name: self.name });
        }
        self.split = split;
        Ok(self)
    }

    /// Multiset of provenance tags over all pairs, used for lineage audits.
    pub fn provenance_counts(&self) -> std::collections::BTreeMap<Provenance, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for pair in &self.pairs {
            *counts.entry(pair.provenance).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("missing or malformed header: expected `id\tsentence1\tsentence2\tscore[\tprovenance]`, got `{got}`")]
    BadHeader { got: String },
    #[error("malformed row, line {line}: expected {expected} tab-separated columns, found {found}")]
    ColumnCount { line: usize, expected: usize, found: usize },
    #[error("non-numeric score `{value}`, line {line}")]
    BadScore { line: usize, value: String },
    #[error("score out of range, line {line}: {value} not in [0,1]")]
    ScoreOutOfRange { line: usize, value: f64 },
    #[error("unknown provenance `{value}`, line {line}")]
    BadProvenance { line: usize, value: String },
    #[error("duplicate id `{id}` at lines {first} and {second}")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("empty sentence{which}, line {line}")]
    EmptySentence { line: usize, which: u8 },
    #[error("corpus `{name}` is not labeled")]
    NotLabeled { name: String },
    #[error("split fractions must sum to 1, got {sum}")]
    BadFractions { sum: f64 },
    #[error("cannot merge corpora with mixed languages: `{a}` vs `{b}`")]
    MixedLanguages { a: String, b: String },
    #[error("cannot merge corpora with mixed splits: `{a}` vs `{b}`")]
    MixedSplits { a: Split, b: Split },
    #[error("merge requires at least one corpus")]
    EmptyMerge,
    #[error("duplicate id `{id}` after merge prefixing")]
    DuplicateMergedId { id: String },
}

const HEADER_BASE: [&str; 4] = ["id", "sentence1", "sentence2", "score"];

/// Parse a labeled TSV corpus. The provenance column is optional and
/// defaults to `original`. Errors carry 1-based line numbers.
pub fn parse_labeled(bytes: &[u8], language: &str) -> Result<Corpus, CorpusError> {
    let textual = std::str::from_utf8(bytes)
        .map_err(|e| CorpusError::InvalidUtf8 { offset: e.valid_up_to() })?;
    let mut lines = textual.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CorpusError::BadHeader { got: String::new() })?;
    let header = header.trim_end_matches('\r');
    let cols: Vec<&str> = header.split('\t').collect();
    let has_provenance = match cols.as_slice() {
        ["id", "sentence1", "sentence2", "score"] => false,
        ["id", "sentence1", "sentence2", "score", "provenance"] => true,
        _ => return Err(CorpusError::BadHeader { got: header.to_string() }),
    };
    let expected = HEADER_BASE.len() + usize::from(has_provenance);

    let mut pairs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let row = raw.trim_end_matches('\r');
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != expected {
            return Err(CorpusError::ColumnCount {
                line: line_no,
                expected,
                found: fields.len(),
            });
        }
        let score: f64 = fields[3]
            .parse()
            .map_err(|_| CorpusError::BadScore { line: line_no, value: fields[3].to_string() })?;
        if !(0.0..=1.0).contains(&score) {
            return Err(CorpusError::ScoreOutOfRange { line: line_no, value: score });
        }
        let provenance = if has_provenance {
            Provenance::parse(fields[4]).ok_or_else(|| CorpusError::BadProvenance {
                line: line_no,
                value: fields[4].to_string(),
            })?
        } else {
            Provenance::Original
        };
        if fields[1].trim().is_empty() {
            return Err(CorpusError::EmptySentence { line: line_no, which: 1 });
        }
        if fields[2].trim().is_empty() {
            return Err(CorpusError::EmptySentence { line: line_no, which: 2 });
        }
        if let Some(first) = seen.insert(fields[0].to_string(), line_no) {
            return Err(CorpusError::DuplicateId {
                id: fields[0].to_string(),
                first,
                second: line_no,
            });
        }
        pairs.push(SentencePair {
            id: fields[0].to_string(),
            sentence1: fields[1].to_string(),
            sentence2: fields[2].to_string(),
            score,
            provenance,
        });
    }
    Corpus::labeled("corpus", language, Split::Train, pairs)
}

/// Parse an unlabeled corpus: one sentence per line, blank lines dropped.
pub fn parse_unlabeled(bytes: &[u8], language: &str) -> Result<Corpus, CorpusError> {
    let textual = std::str::from_utf8(bytes)
        .map_err(|e| CorpusError::InvalidUtf8 { offset: e.valid_up_to() })?;
    let sentences: Vec<String> = textual
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.to_string())
        .collect();
    Ok(Corpus::unlabeled("corpus", language, sentences))
}

/// Serialize a labeled corpus back to the TSV format `parse_labeled` accepts,
/// always including the provenance column.
pub fn serialize_labeled(corpus: &Corpus) -> String {
    let mut out = String::from("id\tsentence1\tsentence2\tscore\tprovenance\n");
    for pair in corpus.pairs() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            pair.id, pair.sentence1, pair.sentence2, pair.score, pair.provenance
        ));
    }
    out
}

/// Deterministically partition a labeled corpus into train/dev/test.
///
/// Pairs are ordered by id before the seeded shuffle, so the partition is
/// independent of input file ordering. Dev and test sizes are floored from
/// their fractions; every remainder pair goes to train.
pub fn split(
    corpus: &Corpus,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    if !corpus.is_labeled() {
        return Err(CorpusError::NotLabeled { name: corpus.name.clone() });
    }
    let (f_train, f_dev, f_test) = fractions;
    let sum = f_train + f_dev + f_test;
    if (sum - 1.0).abs() > 1e-9 || f_train < 0.0 || f_dev < 0.0 || f_test < 0.0 {
        return Err(CorpusError::BadFractions { sum });
    }
    let mut pairs: Vec<SentencePair> = corpus.pairs().to_vec();
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);

    let n = pairs.len();
    let n_dev = (n as f64 * f_dev).floor() as usize;
    let n_test = (n as f64 * f_test).floor() as usize;
    let n_train = n - n_dev - n_test;

    let test_part = pairs.split_off(n_train + n_dev);
    let dev_part = pairs.split_off(n_train);
    let train_part = pairs;

    Ok((
        Corpus::labeled(corpus.name.clone(), corpus.language.clone(), Split::Train, train_part)?,
        Corpus::labeled(corpus.name.clone(), corpus.language.clone(), Split::Dev, dev_part)?,
        Corpus::labeled(corpus.name.clone(), corpus.language.clone(), Split::Test, test_part)?,
    ))
}

/// Concatenate same-language, same-split corpora. Ids are re-prefixed with
/// the source corpus name (`name/id`) to preserve uniqueness.
pub fn merge(corpora: &[Corpus]) -> Result<Corpus, CorpusError> {
    let first = corpora.first().ok_or(CorpusError::EmptyMerge)?;
    let mut pairs = Vec::new();
    let mut names = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    for corpus in corpora {
        if corpus.language != first.language {
            return Err(CorpusError::MixedLanguages {
                a: first.language.clone(),
                b: corpus.language.clone(),
            });
        }
        if corpus.split != first.split {
            return Err(CorpusError::MixedSplits { a: first.split, b: corpus.split });
        }
        if !corpus.is_labeled() {
            return Err(CorpusError::NotLabeled { name: corpus.name.clone() });
        }
        names.push(corpus.name.clone());
        for pair in corpus.pairs() {
            let id = format!("{}/{}", corpus.name, pair.id);
            if seen.insert(id.clone(), ()).is_some() {
                return Err(CorpusError::DuplicateMergedId { id });
            }
            pairs.push(SentencePair { id, ..pair.clone() });
        }
    }
    Corpus::labeled(names.join("+"), first.language.clone(), first.split, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(id: &str, s1: &str, s2: &str, score: f64) -> SentencePair {
        SentencePair::new(id, s1, s2, score, Provenance::Original).unwrap()
    }

    #[test]
    fn parse_single_row() {
        let corpus = parse_labeled(b"id\tsentence1\tsentence2\tscore\np1\ta b\ta b\t1.0\n", "eng")
            .unwrap();
        assert_eq!(corpus.pairs().len(), 1);
        assert_eq!(corpus.pairs()[0].score, 1.0);
        assert_eq!(corpus.pairs()[0].provenance, Provenance::Original);
    }

    #[test]
    fn parse_rejects_out_of_range_score() {
        let err = parse_labeled(b"id\tsentence1\tsentence2\tscore\np1\ta\tb\t1.5\n", "eng")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("score out of range, line 2"), "{msg}");
    }

    #[test]
    fn parse_reports_duplicate_id_with_both_lines() {
        let input = b"id\tsentence1\tsentence2\tscore\np1\ta\tb\t0.1\np2\tc\td\t0.2\np1\te\tf\t0.3\n";
        match parse_labeled(input, "eng").unwrap_err() {
            CorpusError::DuplicateId { id, first, second } => {
                assert_eq!(id, "p1");
                assert_eq!((first, second), (2, 4));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn parse_provenance_column() {
        let input = b"id\tsentence1\tsentence2\tscore\tprovenance\np1\ta\tb\t0.5\tsemrel-mt\n";
        let corpus = parse_labeled(input, "hau").unwrap();
        assert_eq!(corpus.pairs()[0].provenance, Provenance::SemrelMt);
    }

    #[test]
    fn parse_rejects_bad_column_count() {
        let err =
            parse_labeled(b"id\tsentence1\tsentence2\tscore\np1\ta\t0.5\n", "eng").unwrap_err();
        assert!(matches!(err, CorpusError::ColumnCount { line: 2, expected: 4, found: 3 }));
    }

    #[test]
    fn parse_rejects_non_numeric_score() {
        let err =
            parse_labeled(b"id\tsentence1\tsentence2\tscore\np1\ta\tb\thigh\n", "eng").unwrap_err();
        assert!(matches!(err, CorpusError::BadScore { line: 2, .. }));
    }

    #[test]
    fn unlabeled_drops_blank_lines() {
        let corpus = parse_unlabeled(b"a\n\nb\n", "eng").unwrap();
        assert_eq!(corpus.sentences(), ["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn unlabeled_empty_file_is_valid() {
        let corpus = parse_unlabeled(b"", "eng").unwrap();
        assert!(corpus.sentences().is_empty());
    }

    #[test]
    fn unlabeled_preserves_order_against_line_split_oracle() {
        let mut input = String::new();
        for i in 0..1000 {
            input.push_str(&format!("sentence number {i}\n"));
        }
        // independent oracle: plain line splitting
        let expected: Vec<String> =
            input.lines().map(|l| l.to_string()).collect();
        let corpus = parse_unlabeled(input.as_bytes(), "eng").unwrap();
        assert_eq!(corpus.sentences(), expected.as_slice());
        assert_eq!(corpus.sentences().len(), 1000);
    }

    #[test]
    fn unlabeled_invalid_utf8_reports_offset() {
        let err = parse_unlabeled(b"ab\xff", "eng").unwrap_err();
        assert!(matches!(err, CorpusError::InvalidUtf8 { offset: 2 }));
    }

    fn ten_pairs() -> Corpus {
        let pairs = (0..10).map(|i| pair(&format!("p{i}"), "a", "b", 0.1 * i as f64)).collect();
        Corpus::labeled("ten", "eng", Split::Train, pairs).unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let (train, dev, test) = split(&ten_pairs(), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((train.len(), dev.len(), test.len()), (8, 1, 1));
        let mut ids: Vec<&str> = train
            .pairs()
            .iter()
            .chain(dev.pairs())
            .chain(test.pairs())
            .map(|p| p.id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn split_is_deterministic() {
        let corpus = ten_pairs();
        let a = split(&corpus, (0.8, 0.1, 0.1), 7).unwrap();
        let b = split(&corpus, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_remainder_goes_to_train() {
        // floor(7*0.25) = 1 for dev and test; the 2 remainder pairs stay in train
        let pairs = (0..7).map(|i| pair(&format!("p{i}"), "a", "b", 0.1)).collect();
        let corpus = Corpus::labeled("seven", "eng", Split::Train, pairs).unwrap();
        let (train, dev, test) = split(&corpus, (0.5, 0.25, 0.25), 3).unwrap();
        assert_eq!((train.len(), dev.len(), test.len()), (5, 1, 1));
        let total = train.len() + dev.len() + test.len();
        assert_eq!(total, 7);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let err = split(&ten_pairs(), (0.5, 0.2, 0.2), 1).unwrap_err();
        assert!(matches!(err, CorpusError::BadFractions { .. }));
    }

    #[test]
    fn split_rejects_unlabeled() {
        let corpus = Corpus::unlabeled("u", "eng", vec!["a".into()]);
        assert!(matches!(
            split(&corpus, (0.8, 0.1, 0.1), 1),
            Err(CorpusError::NotLabeled { .. })
        ));
    }

    #[test]
    fn merge_prefixes_ids() {
        let a = Corpus::labeled(
            "A",
            "eng",
            Split::Train,
            vec![pair("1", "x", "y", 0.1), pair("2", "x", "y", 0.2)],
        )
        .unwrap();
        let b = Corpus::labeled(
            "B",
            "eng",
            Split::Train,
            vec![pair("1", "x", "y", 0.3), pair("2", "x", "y", 0.4), pair("3", "x", "y", 0.5)],
        )
        .unwrap();
        let merged = merge(&[a, b]).unwrap();
        assert_eq!(merged.len(), 5);
        let ids: Vec<&str> = merged.pairs().iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["A/1", "A/2", "B/1", "B/2", "B/3"]);
    }

    #[test]
    fn merge_singleton_prefixes() {
        let a = Corpus::labeled("A", "eng", Split::Train, vec![pair("1", "x", "y", 0.1)]).unwrap();
        let merged = merge(std::slice::from_ref(&a)).unwrap();
        assert_eq!(merged.pairs()[0].id, "A/1");
    }

    #[test]
    fn merge_preserves_provenance_tags() {
        let orig = Corpus::labeled("orig", "hau", Split::Train, vec![pair("1", "x", "y", 0.1)])
            .unwrap();
        let aug = Corpus::labeled(
            "aug",
            "hau",
            Split::Train,
            vec![
                SentencePair::new("1", "x", "y", 0.2, Provenance::SemrelMt).unwrap(),
                SentencePair::new("2", "x", "y", 0.3, Provenance::SemrelMt).unwrap(),
            ],
        )
        .unwrap();
        let merged = merge(&[orig, aug]).unwrap();
        let counts = merged.provenance_counts();
        assert_eq!(counts.get(&Provenance::Original), Some(&1));
        assert_eq!(counts.get(&Provenance::SemrelMt), Some(&2));
    }

    #[test]
    fn merge_rejects_mixed_languages() {
        let a = Corpus::labeled("A", "eng", Split::Train, vec![pair("1", "x", "y", 0.1)]).unwrap();
        let b = Corpus::labeled("B", "hau", Split::Train, vec![pair("1", "x", "y", 0.1)]).unwrap();
        assert!(matches!(merge(&[a, b]), Err(CorpusError::MixedLanguages { .. })));
    }

    #[test]
    fn round_trip_labeled() {
        let input = "id\tsentence1\tsentence2\tscore\tprovenance\np1\ta b\tc d\t0.25\tstsb-mt\np2\te\tf\t1\toriginal\n";
        let corpus = parse_labeled(input.as_bytes(), "eng").unwrap();
        let reparsed = parse_labeled(serialize_labeled(&corpus).as_bytes(), "eng").unwrap();
        assert_eq!(corpus, reparsed);
    }

    proptest! {
        #[test]
        fn split_is_partition(seed in 0u64..1000, n in 1usize..40) {
            let pairs = (0..n).map(|i| pair(&format!("p{i}"), "a", "b", 0.5)).collect();
            let corpus = Corpus::labeled("c", "eng", Split::Train, pairs).unwrap();
            let (train, dev, test) = split(&corpus, (0.6, 0.2, 0.2), seed).unwrap();
            let mut ids: Vec<String> = train.pairs().iter()
                .chain(dev.pairs())
                .chain(test.pairs())
                .map(|p| p.id.clone())
                .collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }

        #[test]
        fn serialize_parse_round_trip(scores in proptest::collection::vec(0.0f64..=1.0, 1..20)) {
            let pairs: Vec<SentencePair> = scores.iter().enumerate()
                .map(|(i, s)| pair(&format!("p{i}"), "alpha beta", "gamma", *s))
                .collect();
            let corpus = Corpus::labeled("c", "eng", Split::Train, pairs).unwrap();
            let reparsed = parse_labeled(serialize_labeled(&corpus).as_bytes(), "eng").unwrap();
            prop_assert_eq!(corpus.pairs(), reparsed.pairs());
        }

        #[test]
        fn merge_preserves_pair_multiset(n_a in 1usize..10, n_b in 1usize..10) {
            let a = Corpus::labeled("A", "eng", Split::Train,
                (0..n_a).map(|i| pair(&format!("p{i}"), "s one", "s two", 0.25)).collect()).unwrap();
            let b = Corpus::labeled("B", "eng", Split::Train,
                (0..n_b).map(|i| pair(&format!("p{i}"), "t one", "t two", 0.75)).collect()).unwrap();
            let merged = merge(&[a.clone(), b.clone()]).unwrap();
            let mut before: Vec<(String, String, String, Provenance)> = a.pairs().iter().chain(b.pairs())
                .map(|p| (p.sentence1.clone(), p.sentence2.clone(), p.score.to_string(), p.provenance))
                .collect();
            let mut after: Vec<(String, String, String, Provenance)> = merged.pairs().iter()
                .map(|p| (p.sentence1.clone(), p.sentence2.clone(), p.score.to_string(), p.provenance))
                .collect();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);
        }
    }
}
