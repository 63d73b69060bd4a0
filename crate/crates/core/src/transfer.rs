//! Zero-shot cross-lingual transfer: swap the source language adapter for
//! the target's while retaining the source task adapter, rank candidate
//! source languages by linguistic distance / token overlap / dev-set
//! performance, and guard against English data leakage.

use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::{Corpus, Provenance};
use crate::evaluation::{self, EvalError};
use crate::model::{AdapterBundle, LineageEntry, ModelError, ModelGraph, StageKind};
use crate::text::{self, TokenizeOptions, Vocabulary};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("no distance entry for language pair ({a}, {b})")]
    PairMissing { a: String, b: String },
    #[error("all six distances missing for language pair ({a}, {b})")]
    AllDistancesMissing { a: String, b: String },
    #[error("distance table line {line}: {detail}")]
    BadTable { line: usize, detail: String },
    #[error("distance {value} out of [0,1] at line {line}")]
    DistanceOutOfRange { line: usize, value: f64 },
    #[error("corpus `{0}` has an empty token set")]
    EmptyTokenSet(String),
    #[error("corpus `{0}` is empty")]
    EmptyCorpus(String),
    #[error("no candidate source succeeded: {0:?}")]
    NoViableCandidate(Vec<String>),
    #[error("model still carries the source language adapter `{language}` trained for task language `{task}`; swap in the target adapter or enable the source-adapter baseline explicitly")]
    UnswappedModel { language: String, task: String },
    #[error("data leakage: phase `{phase}` {detail}")]
    LeakageViolation { phase: String, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub const DISTANCE_FIELDS: [&str; 6] =
    ["syntactic", "phonological", "inventory", "geographic", "genetic", "featural"];

/// Six typological/geographic distances per unordered language pair, each in
/// [0,1]; entries may be missing (`NA`).
#[derive(Debug, Clone, Default)]
pub struct DistanceTable {
    entries: HashMap<(String, String), [Option<f64>; 6]>,
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl DistanceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: &str, b: &str, distances: [Option<f64>; 6]) {
        self.entries.insert(pair_key(a, b), distances);
    }

    /// Symmetric lookup.
    pub fn lookup(&self, a: &str, b: &str) -> Option<&[Option<f64>; 6]> {
        self.entries.get(&pair_key(a, b))
    }

    /// Parse TSV `lang_a	lang_b	syntactic	phonological	inventory
    /// geographic	genetic	featural` with `NA` for missing values.
    pub fn parse(text: &str) -> Result<Self, TransferError> {
        let mut table = DistanceTable::new();
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| TransferError::BadTable { line: 1, detail: "empty file".into() })?;
        let expected_header = format!("lang_a\tlang_b\t{}", DISTANCE_FIELDS.join("\t"));
        if header.trim_end_matches('\r') != expected_header {
            return Err(TransferError::BadTable {
                line: 1,
                detail: format!("bad header `{header}`"),
            });
        }
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let row = raw.trim_end_matches('\r');
            if row.is_empty() {
                continue;
            }
            let fields: Vec<&str> = row.split('\t').collect();
            if fields.len() != 8 {
                return Err(TransferError::BadTable {
                    line: line_no,
                    detail: format!("expected 8 columns, found {}", fields.len()),
                });
            }
            let mut distances = [None; 6];
            for (slot, field) in distances.iter_mut().zip(&fields[2..]) {
                if *field == "NA" {
                    continue;
                }
                let value: f64 = field.parse().map_err(|_| TransferError::BadTable {
                    line: line_no,
                    detail: format!("non-numeric distance `{field}`"),
                })?;
                if !(0.0..=1.0).contains(&value) {
                    return Err(TransferError::DistanceOutOfRange { line: line_no, value });
                }
                *slot = Some(value);
            }
            table.insert(fields[0], fields[1], distances);
        }
        Ok(table)
    }
}

/// Mean linguistic distance over the distances present for the pair, with
/// the number of missing values reported alongside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceSummary {
    pub value: f64,
    pub missing: usize,
}

pub fn linguistic_distance(
    src: &str,
    tgt: &str,
    table: &DistanceTable,
) -> Result<DistanceSummary, TransferError> {
    let entry = table.lookup(src, tgt).ok_or_else(|| TransferError::PairMissing {
        a: src.to_string(),
        b: tgt.to_string(),
    })?;
    let present: Vec<f64> = entry.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(TransferError::AllDistancesMissing {
            a: src.to_string(),
            b: tgt.to_string(),
        });
    }
    Ok(DistanceSummary {
        value: present.iter().sum::<f64>() / present.len() as f64,
        missing: entry.len() - present.len(),
    })
}

/// Fraction of the target test vocabulary covered by the source training
/// vocabulary: `|src n tgt| / |tgt|` over default-tokenized token sets.
pub fn token_overlap(src_train: &Corpus, tgt_test: &Corpus) -> Result<f64, TransferError> {
    if src_train.is_empty() {
        return Err(TransferError::EmptyCorpus(src_train.name.clone()));
    }
    if tgt_test.is_empty() {
        return Err(TransferError::EmptyCorpus(tgt_test.name.clone()));
    }
    let opts = TokenizeOptions::default();
    let src_set = text::token_set(src_train, opts);
    let tgt_set = text::token_set(tgt_test, opts);
    if tgt_set.is_empty() {
        return Err(TransferError::EmptyTokenSet(tgt_test.name.clone()));
    }
    let shared = src_set.intersection(&tgt_set).count();
    Ok(shared as f64 / tgt_set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStrategy {
    /// Ascending mean URIEL-style distance.
    LinguisticDistance,
    /// Descending target-vocabulary coverage.
    TokenOverlap,
    /// Descending zero-shot dev Spearman.
    DevPerformance,
}

impl SelectionStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionStrategy::LinguisticDistance => "linguistic_distance",
            SelectionStrategy::TokenOverlap => "token_overlap",
            SelectionStrategy::DevPerformance => "dev_performance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linguistic_distance" => Some(SelectionStrategy::LinguisticDistance),
            "token_overlap" => Some(SelectionStrategy::TokenOverlap),
            "dev_performance" => Some(SelectionStrategy::DevPerformance),
            _ => None,
        }
    }
}

/// Ranked source languages under one strategy; `chosen` is the first entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRanking {
    pub strategy: SelectionStrategy,
    pub ranked: Vec<(String, f64)>,
    pub chosen: String,
}

impl SourceRanking {
    fn from_scored(
        strategy: SelectionStrategy,
        mut scored: Vec<(String, f64)>,
    ) -> Result<Self, TransferError> {
        if scored.is_empty() {
            return Err(TransferError::NoViableCandidate(Vec::new()));
        }
        match strategy {
            SelectionStrategy::LinguisticDistance => scored.sort_by(|a, b| {
                a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
            }),
            _ => scored.sort_by(|a, b| {
                b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
            }),
        }
        let chosen = scored[0].0.clone();
        Ok(SourceRanking { strategy, ranked: scored, chosen })
    }
}

/// Rank candidate sources by ascending linguistic distance to the target.
pub fn rank_by_distance(
    sources: &[String],
    target: &str,
    table: &DistanceTable,
) -> Result<SourceRanking, TransferError> {
    let mut scored = Vec::with_capacity(sources.len());
    for source in sources {
        let summary = linguistic_distance(source, target, table)?;
        scored.push((source.clone(), summary.value));
    }
    SourceRanking::from_scored(SelectionStrategy::LinguisticDistance, scored)
}

/// Rank candidate sources by descending token overlap with the target test
/// set.
pub fn rank_by_overlap(
    sources: &[(String, &Corpus)],
    tgt_test: &Corpus,
) -> Result<SourceRanking, TransferError> {
    let mut scored = Vec::with_capacity(sources.len());
    for (language, corpus) in sources {
        scored.push((language.clone(), token_overlap(corpus, tgt_test)?));
    }
    SourceRanking::from_scored(SelectionStrategy::TokenOverlap, scored)
}

/// Plain cross-encoder inference after an adapter swap; no parameters are
/// updated. Refuses to run when the model still carries the source language
/// adapter for its own task language unless `allow_source_adapter` is set
/// (the source-adapter baseline).
pub fn zero_shot_predict(
    model: &ModelGraph,
    vocab: &Vocabulary,
    pairs: &[crate::corpus::SentencePair],
    target_lang: &str,
    allow_source_adapter: bool,
) -> Result<Vec<f64>, TransferError> {
    let meta = model.adapters();
    if let (Some(language), Some(task)) = (&meta.language_id, &meta.task_trained_on) {
        if language == task && language != target_lang && !allow_source_adapter {
            return Err(TransferError::UnswappedModel {
                language: language.clone(),
                task: task.clone(),
            });
        }
    }
    Ok(model.predict_pairs(vocab, pairs, TokenizeOptions::default())?)
}

/// A candidate source for dev-performance ranking: where the task adapter
/// was trained, plus the bundle itself.
pub struct TaskCandidate {
    pub source_language: String,
    pub bundle: AdapterBundle,
}

/// Compose each candidate task adapter with the target language adapter,
/// score the target dev set, and rank by descending Spearman. Candidates
/// that fail to compose are skipped with a warning; at least one must
/// succeed.
pub fn dev_performance_ranking(
    base_model: &ModelGraph,
    candidates: &[TaskCandidate],
    target_language_adapter: &AdapterBundle,
    target_dev: &Corpus,
    vocab: &Vocabulary,
) -> Result<(SourceRanking, Vec<String>), TransferError> {
    if target_dev.is_empty() {
        return Err(TransferError::EmptyCorpus(target_dev.name.clone()));
    }
    let mut scored = Vec::new();
    let mut warnings = Vec::new();
    for candidate in candidates {
        match score_candidate(base_model, candidate, target_language_adapter, target_dev, vocab) {
            Ok(Some(rho)) => scored.push((candidate.source_language.clone(), rho)),
            Ok(None) => warnings.push(format!(
                "candidate `{}` skipped: dev Spearman undefined",
                candidate.source_language
            )),
            Err(e) => warnings.push(format!(
                "candidate `{}` skipped: {e}",
                candidate.source_language
            )),
        }
    }
    if scored.is_empty() {
        return Err(TransferError::NoViableCandidate(warnings));
    }
    let ranking = SourceRanking::from_scored(SelectionStrategy::DevPerformance, scored)?;
    Ok((ranking, warnings))
}

fn score_candidate(
    base_model: &ModelGraph,
    candidate: &TaskCandidate,
    target_language_adapter: &AdapterBundle,
    target_dev: &Corpus,
    vocab: &Vocabulary,
) -> Result<Option<f64>, TransferError> {
    let mut model = base_model.clone();
    model.install_task_bundle(&candidate.bundle)?;
    model.swap_language_adapter(target_language_adapter)?;
    let preds =
        zero_shot_predict(&model, vocab, target_dev.pairs(), &target_dev.language, false)?;
    let golds: Vec<f64> = target_dev.pairs().iter().map(|p| p.score).collect();
    if golds.len() < 2 {
        return Ok(None);
    }
    Ok(evaluation::spearman(&preds, &golds)?)
}

/// The footnote rule: when transferring to English, the task adapter must
/// not have been trained on data translated from English sources. Missing
/// provenance on a supervised phase fails closed.
pub fn leakage_guard(lineage: &[LineageEntry], target_lang: &str) -> Result<(), TransferError> {
    if target_lang != "eng" {
        return Ok(());
    }
    for entry in lineage {
        if entry.kind != StageKind::Supervised {
            continue;
        }
        match &entry.provenance {
            None => {
                return Err(TransferError::LeakageViolation {
                    phase: entry.stage.clone(),
                    detail: "has no provenance metadata (failing closed)".into(),
                });
            }
            Some(counts) => {
                for tag in [Provenance::SemrelMt, Provenance::StsbMt] {
                    if counts.get(&tag).copied().unwrap_or(0) > 0 {
                        return Err(TransferError::LeakageViolation {
                            phase: entry.stage.clone(),
                            detail: format!(
                                "trained on {} pairs with provenance `{}`, which are translations of English resources",
                                counts[&tag], tag
                            ),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SentencePair, Split};
    use crate::model::{EncoderConfig, TuningMode};
    use crate::text::Vocabulary;
    use crate::training::{train_regression, TrainConfig};
    use std::collections::BTreeMap;

    #[test]
    fn distance_all_zero_is_zero() {
        let mut table = DistanceTable::new();
        table.insert("aa", "aa", [Some(0.0); 6]);
        let summary = linguistic_distance("aa", "aa", &table).unwrap();
        assert_eq!(summary.value, 0.0);
        assert_eq!(summary.missing, 0);
    }

    #[test]
    fn distance_mean_of_six() {
        let mut table = DistanceTable::new();
        table.insert(
            "aa",
            "bb",
            [Some(0.2), Some(0.4), Some(0.6), Some(0.0), Some(1.0), Some(0.4)],
        );
        let summary = linguistic_distance("aa", "bb", &table).unwrap();
        assert!((summary.value - 2.6 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn distance_partial_mean_reports_missing() {
        let mut table = DistanceTable::new();
        table.insert("aa", "bb", [Some(0.3), None, Some(0.3), None, Some(0.6), None]);
        let summary = linguistic_distance("aa", "bb", &table).unwrap();
        assert!((summary.value - 0.4).abs() < 1e-12);
        assert_eq!(summary.missing, 3);
    }

    #[test]
    fn distance_lookup_is_symmetric() {
        let mut table = DistanceTable::new();
        table.insert("aa", "bb", [Some(0.5); 6]);
        let forward = linguistic_distance("aa", "bb", &table).unwrap();
        let backward = linguistic_distance("bb", "aa", &table).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn distance_missing_pair_is_an_error() {
        let table = DistanceTable::new();
        assert!(matches!(
            linguistic_distance("aa", "bb", &table),
            Err(TransferError::PairMissing { .. })
        ));
        let mut table = DistanceTable::new();
        table.insert("aa", "bb", [None; 6]);
        assert!(matches!(
            linguistic_distance("aa", "bb", &table),
            Err(TransferError::AllDistancesMissing { .. })
        ));
    }

    #[test]
    fn distance_table_parses_na() {
        let text = "lang_a\tlang_b\tsyntactic\tphonological\tinventory\tgeographic\tgenetic\tfeatural\naa\tbb\t0.2\tNA\t0.6\t0.0\t1.0\tNA\n";
        let table = DistanceTable::parse(text).unwrap();
        let entry = table.lookup("bb", "aa").unwrap();
        assert_eq!(entry[1], None);
        assert_eq!(entry[0], Some(0.2));
    }

    fn corpus_from(language: &str, sentences: &[(&str, &str)]) -> Corpus {
        let pairs = sentences
            .iter()
            .enumerate()
            .map(|(i, (s1, s2))| {
                SentencePair::new(
                    format!("p{i}"),
                    *s1,
                    *s2,
                    (i % 2) as f64 * 0.5 + 0.25,
                    Provenance::Original,
                )
                .unwrap()
            })
            .collect();
        Corpus::labeled("c", language, Split::Train, pairs).unwrap()
    }

    #[test]
    fn overlap_identical_corpora_is_one() {
        let a = corpus_from("aa", &[("a b", "c")]);
        assert_eq!(token_overlap(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn overlap_disjoint_corpora_is_zero() {
        let a = corpus_from("aa", &[("a b", "c")]);
        let b = corpus_from("bb", &[("d e", "f")]);
        assert_eq!(token_overlap(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn overlap_set_arithmetic() {
        // src {a,b,c}, tgt {b,c,d,e} -> 2/4
        let src = corpus_from("aa", &[("a b", "c")]);
        let tgt = corpus_from("bb", &[("b c", "d e")]);
        assert!((token_overlap(&src, &tgt).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn overlap_ignores_sentence_duplication() {
        let src = corpus_from("aa", &[("a b", "c")]);
        let tgt_once = corpus_from("bb", &[("b c", "d e")]);
        let tgt_dup = corpus_from("bb", &[("b c", "d e"), ("b c", "d e"), ("b c", "b c")]);
        assert_eq!(
            token_overlap(&src, &tgt_once).unwrap(),
            token_overlap(&src, &tgt_dup).unwrap()
        );
    }

    #[test]
    fn rankings_order_by_strategy_direction() {
        let mut table = DistanceTable::new();
        table.insert("aa", "tt", [Some(0.8); 6]);
        table.insert("bb", "tt", [Some(0.2); 6]);
        let ranking =
            rank_by_distance(&["aa".to_string(), "bb".to_string()], "tt", &table).unwrap();
        assert_eq!(ranking.chosen, "bb");
        assert!(ranking.ranked[0].1 <= ranking.ranked[1].1);

        let src_a = corpus_from("aa", &[("x y", "z")]);
        let src_b = corpus_from("bb", &[("p q", "r")]);
        let tgt = corpus_from("tt", &[("x y", "q")]);
        let ranking = rank_by_overlap(
            &[("aa".to_string(), &src_a), ("bb".to_string(), &src_b)],
            &tgt,
        )
        .unwrap();
        assert_eq!(ranking.chosen, "aa");
        assert!(ranking.ranked[0].1 >= ranking.ranked[1].1);
    }

    fn tiny_config(seed: u64) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 24,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_len: 12,
            adapter_bottleneck: 4,
            dropout: 0.0,
            seed,
        }
    }

    fn vocab_from(sentences: &[&str]) -> Vocabulary {
        let corpus =
            Corpus::unlabeled("v", "aa", sentences.iter().map(|s| s.to_string()).collect());
        Vocabulary::build(&[&corpus], crate::text::TokenizeOptions::raw(), 1, 24).unwrap()
    }

    #[test]
    fn zero_shot_predict_is_pure_and_guarded() {
        let vocab = vocab_from(&["red blue green yellow"]);
        let mut model = ModelGraph::build_encoder(tiny_config(1)).unwrap();
        model.attach_adapters("aa", "str").unwrap();
        model.adapters_mut().task_trained_on = Some("aa".to_string());
        let dev = corpus_from("bb", &[("red blue", "green"), ("blue", "yellow")]);

        // unswapped model refused unless overridden
        assert!(matches!(
            zero_shot_predict(&model, &vocab, dev.pairs(), "bb", false),
            Err(TransferError::UnswappedModel { .. })
        ));
        let snapshot: BTreeMap<String, crate::autodiff::Tensor> =
            model.params().iter().map(|(n, p)| (n.clone(), p.tensor.clone())).collect();
        let baseline = zero_shot_predict(&model, &vocab, dev.pairs(), "bb", true).unwrap();
        assert_eq!(baseline.len(), 2);
        for (name, param) in model.params() {
            assert!(param.tensor.bitwise_eq(&snapshot[name]), "`{name}` mutated");
        }

        // swapping in the target adapter lifts the refusal
        let mut donor = ModelGraph::build_encoder(tiny_config(2)).unwrap();
        donor.attach_language_adapters("bb").unwrap();
        model.swap_language_adapter(&donor.language_bundle().unwrap()).unwrap();
        let swapped = zero_shot_predict(&model, &vocab, dev.pairs(), "bb", false).unwrap();
        assert_eq!(swapped.len(), 2);
    }

    #[test]
    fn swapping_then_predicting_equals_direct_composition() {
        let vocab = vocab_from(&["red blue green yellow"]);
        let dev = corpus_from("bb", &[("red blue", "green"), ("blue", "yellow")]);

        let mut source = ModelGraph::build_encoder(tiny_config(4)).unwrap();
        source.attach_adapters("aa", "str").unwrap();
        let mut target_base = ModelGraph::build_encoder(tiny_config(9)).unwrap();
        target_base.attach_language_adapters("bb").unwrap();
        let target_bundle = target_base.language_bundle().unwrap();

        let mut swapped = source.clone();
        swapped.swap_language_adapter(&target_bundle).unwrap();
        let via_swap = zero_shot_predict(&swapped, &vocab, dev.pairs(), "bb", false).unwrap();

        // compose directly: fresh clone, same installs
        let mut composed = source.clone();
        composed.swap_language_adapter(&target_bundle).unwrap();
        let direct = zero_shot_predict(&composed, &vocab, dev.pairs(), "bb", false).unwrap();
        assert_eq!(via_swap, direct);
    }

    #[test]
    fn dev_ranking_single_candidate_and_separation() {
        let vocab = vocab_from(&["red blue green yellow"]);
        let train_rows: Vec<(String, String, f64)> = (0..8)
            .map(|i| {
                let s1 = if i % 2 == 0 { "red blue" } else { "green yellow" };
                let s2 = if i % 2 == 0 { "red blue" } else { "red blue" };
                (s1.to_string(), s2.to_string(), if i % 2 == 0 { 0.9 } else { 0.1 })
            })
            .collect();
        let train_pairs: Vec<SentencePair> = train_rows
            .iter()
            .enumerate()
            .map(|(i, (s1, s2, score))| {
                SentencePair::new(format!("t{i}"), s1.clone(), s2.clone(), *score, Provenance::Original)
                    .unwrap()
            })
            .collect();
        let train = Corpus::labeled("train", "tt", Split::Train, train_pairs).unwrap();
        let dev = train.clone().with_name("dev");

        let mut base = ModelGraph::build_encoder(tiny_config(7)).unwrap();
        base.attach_adapters("tt", "str").unwrap();

        // candidate A: actually trained on the target's own function
        let mut trained = base.clone();
        let config = TrainConfig {
            tokenize: crate::text::TokenizeOptions::raw(),
            ..TrainConfig::new(0.05, 20, TuningMode::TaskAdapterOnly, 3)
        };
        train_regression(&mut trained, &vocab, &train, None, &config).unwrap();
        let good = TaskCandidate {
            source_language: "good".to_string(),
            bundle: trained.task_bundle().unwrap(),
        };
        // candidate B: untrained adapter
        let bad = TaskCandidate {
            source_language: "bad".to_string(),
            bundle: base.task_bundle().unwrap(),
        };

        let target_adapter = base.language_bundle().unwrap();
        let (ranking, warnings) =
            dev_performance_ranking(&base, &[bad, good], &target_adapter, &dev, &vocab).unwrap();
        assert_eq!(ranking.chosen, "good", "warnings: {warnings:?}");
        assert_eq!(ranking.ranked.len(), 2);

        // single candidate trivially chosen
        let only = TaskCandidate {
            source_language: "good".to_string(),
            bundle: trained.task_bundle().unwrap(),
        };
        let (solo, _) =
            dev_performance_ranking(&base, &[only], &target_adapter, &dev, &vocab).unwrap();
        assert_eq!(solo.chosen, "good");
        assert_eq!(solo.ranked.len(), 1);
    }

    fn supervised_entry(stage: &str, prov: Option<Vec<(Provenance, usize)>>) -> LineageEntry {
        LineageEntry {
            stage: stage.to_string(),
            kind: StageKind::Supervised,
            hash: "h".to_string(),
            provenance: prov.map(|pairs| pairs.into_iter().collect()),
        }
    }

    #[test]
    fn leakage_guard_rule_table() {
        // clean history, target eng: ok
        let clean = [supervised_entry("final", Some(vec![(Provenance::Original, 5)]))];
        assert!(leakage_guard(&clean, "eng").is_ok());

        // warmup on semrel-mt, target eng: violation naming the phase
        let tainted = [
            supervised_entry("warmup", Some(vec![(Provenance::SemrelMt, 3)])),
            supervised_entry("final", Some(vec![(Provenance::Original, 5)])),
        ];
        match leakage_guard(&tainted, "eng").unwrap_err() {
            TransferError::LeakageViolation { phase, .. } => assert_eq!(phase, "warmup"),
            other => panic!("unexpected: {other}"),
        }

        // same history, non-English target: ok (the rule applies to eng only)
        assert!(leakage_guard(&tainted, "ind").is_ok());

        // missing provenance fails closed
        let unknown = [supervised_entry("final", None)];
        assert!(matches!(
            leakage_guard(&unknown, "eng"),
            Err(TransferError::LeakageViolation { .. })
        ));
    }
}
