//! Metrics and baselines: Spearman rank correlation (average fractional
//! ranks, then Pearson), training-free baselines, relatedness-band analysis,
//! k-fold cross-validation, and report rendering in the `x100` convention.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, SentencePair};
use crate::model::{ModelError, ModelGraph};
use crate::text::{self, TextError, TokenizeOptions, Vocabulary};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least 2 observations, got {n}")]
    TooFew { n: usize },
    #[error("non-finite value in metric input")]
    NonFinite,
    #[error("bad bands: {0}")]
    BadBands(String),
    #[error("word-vector file line {line}: {detail}")]
    BadVectorFile { line: usize, detail: String },
    #[error("dimension mismatch in vector file at line {line}: expected {expected}, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("k must satisfy 2 <= k <= corpus size, got k={k} for {n} pairs")]
    BadK { k: usize, n: usize },
    #[error("fold trainer failed: {0}")]
    Trainer(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Average fractional ranks (1-based); ties share the mean of their rank
/// positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average of ranks i+1..=j+1
        let shared = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return None;
    }
    Some(cov / (var_a * var_b).sqrt())
}

/// Spearman rank correlation. Constant input is undefined and reported as
/// `None` (never coerced to 0).
pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<Option<f64>, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch { a: pred.len(), b: gold.len() });
    }
    if pred.len() < 2 {
        return Err(EvalError::TooFew { n: pred.len() });
    }
    if !pred.iter().chain(gold).all(|v| v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    Ok(pearson(&average_ranks(pred), &average_ranks(gold)))
}

/// Cosine similarity of two equal-length vectors; `None` on zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na * nb))
}

const BASELINE_TOKENIZE: TokenizeOptions = TokenizeOptions { lowercase: true, strip_punct: false };

/// Dice coefficient `2|T1 n T2| / (|T1| + |T2|)` over lowercase whitespace
/// token sets; both-empty pairs score 0.
pub fn word_overlap_baseline(pairs: &[SentencePair]) -> Vec<f64> {
    pairs
        .iter()
        .map(|pair| {
            let t1: BTreeSet<String> =
                text::tokenize(&pair.sentence1, BASELINE_TOKENIZE).into_iter().collect();
            let t2: BTreeSet<String> =
                text::tokenize(&pair.sentence2, BASELINE_TOKENIZE).into_iter().collect();
            let total = t1.len() + t2.len();
            if total == 0 {
                0.0
            } else {
                2.0 * t1.intersection(&t2).count() as f64 / total as f64
            }
        })
        .collect()
}

/// Static word vectors: first line `count dim`, then `token v1 .. vdim`.
#[derive(Debug, Clone)]
pub struct WordVectors {
    dim: usize,
    map: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| EvalError::BadVectorFile { line: 1, detail: "empty file".into() })?;
        let mut parts = header.split_whitespace();
        let _count: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| EvalError::BadVectorFile { line: 1, detail: "bad count".into() })?;
        let dim: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| EvalError::BadVectorFile { line: 1, detail: "bad dim".into() })?;
        let mut map = HashMap::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields
                .next()
                .ok_or_else(|| EvalError::BadVectorFile {
                    line: idx + 1,
                    detail: "missing token".into(),
                })?
                .to_string();
            let values: Vec<f64> = fields
                .map(|v| v.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| EvalError::BadVectorFile {
                    line: idx + 1,
                    detail: "non-numeric vector entry".into(),
                })?;
            if values.len() != dim {
                return Err(EvalError::DimensionMismatch {
                    line: idx + 1,
                    expected: dim,
                    found: values.len(),
                });
            }
            map.insert(token, values);
        }
        Ok(WordVectors { dim, map })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.map.get(token).map(|v| v.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct StaticBaselineResult {
    /// Cosine of mean in-vocabulary token vectors; `None` when a sentence
    /// has no in-vocabulary tokens.
    pub scores: Vec<Option<f64>>,
    /// Number of pairs excluded from correlation for lack of coverage.
    pub excluded: usize,
}

fn mean_vector(tokens: &[String], vectors: &WordVectors) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; vectors.dim()];
    let mut count = 0usize;
    for token in tokens {
        if let Some(v) = vectors.get(token) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    for s in &mut sum {
        *s /= count as f64;
    }
    Some(sum)
}

/// Mean-pooled static-embedding cosine baseline.
pub fn static_embedding_baseline(
    pairs: &[SentencePair],
    vectors: &WordVectors,
) -> StaticBaselineResult {
    let mut scores = Vec::with_capacity(pairs.len());
    let mut excluded = 0;
    for pair in pairs {
        let t1 = text::tokenize(&pair.sentence1, BASELINE_TOKENIZE);
        let t2 = text::tokenize(&pair.sentence2, BASELINE_TOKENIZE);
        let score = match (mean_vector(&t1, vectors), mean_vector(&t2, vectors)) {
            (Some(a), Some(b)) => cosine(&a, &b),
            _ => None,
        };
        if score.is_none() {
            excluded += 1;
        }
        scores.push(score);
    }
    StaticBaselineResult { scores, excluded }
}

/// Bi-encoder cosine over the untrained (or given) model; no parameter
/// updates occur.
pub fn contextual_zero_shot_baseline(
    model: &ModelGraph,
    vocab: &Vocabulary,
    pairs: &[SentencePair],
    opts: TokenizeOptions,
) -> Result<Vec<f64>, EvalError> {
    let max_len = model.config().max_len;
    let mut scores = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let s1 = text::encode_single(&pair.sentence1, vocab, max_len, opts)?;
        let s2 = text::encode_single(&pair.sentence2, vocab, max_len, opts)?;
        let e1 = model.forward_bi(&s1)?;
        let e2 = model.forward_bi(&s2)?;
        let score = cosine(&e1, &e2).ok_or(EvalError::NonFinite)?;
        scores.push(score);
    }
    Ok(scores)
}

/// A gold-score interval. All bands are left-closed right-open except the
/// last, which also includes its upper endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

pub fn default_bands() -> Vec<Band> {
    vec![
        Band { lo: 0.0, hi: 0.25 },
        Band { lo: 0.25, hi: 0.5 },
        Band { lo: 0.5, hi: 0.75 },
        Band { lo: 0.75, hi: 1.0 },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandStat {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub spearman: Option<f64>,
}

/// Per-band Spearman with pairs assigned by gold score; bands must be
/// sorted, contiguous, and cover [0,1].
pub fn band_analysis(
    pred: &[f64],
    gold: &[f64],
    bands: &[Band],
) -> Result<Vec<BandStat>, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch { a: pred.len(), b: gold.len() });
    }
    if bands.is_empty() {
        return Err(EvalError::BadBands("no bands".into()));
    }
    if (bands[0].lo - 0.0).abs() > 1e-12 || (bands[bands.len() - 1].hi - 1.0).abs() > 1e-12 {
        return Err(EvalError::BadBands("bands must cover [0,1]".into()));
    }
    for window in bands.windows(2) {
        if (window[0].hi - window[1].lo).abs() > 1e-12 {
            return Err(EvalError::BadBands(format!(
                "gap between band ending {} and band starting {}",
                window[0].hi, window[1].lo
            )));
        }
    }
    for band in bands {
        if band.lo >= band.hi {
            return Err(EvalError::BadBands(format!("empty band [{}, {})", band.lo, band.hi)));
        }
    }

    let mut assigned: Vec<Vec<(f64, f64)>> = vec![Vec::new(); bands.len()];
    for (&p, &g) in pred.iter().zip(gold) {
        let last = bands.len() - 1;
        let idx = match bands.iter().position(|b| g >= b.lo && g < b.hi) {
            Some(idx) => idx,
            None if g >= bands[last].lo && g <= bands[last].hi => last,
            None => return Err(EvalError::BadBands(format!("gold score {g} outside [0,1]"))),
        };
        assigned[idx].push((p, g));
    }

    let mut stats = Vec::with_capacity(bands.len());
    for (band, members) in bands.iter().zip(assigned) {
        let rho = if members.len() < 2 {
            None
        } else {
            let preds: Vec<f64> = members.iter().map(|(p, _)| *p).collect();
            let golds: Vec<f64> = members.iter().map(|(_, g)| *g).collect();
            spearman(&preds, &golds)?
        };
        stats.push(BandStat { lo: band.lo, hi: band.hi, n: members.len(), spearman: rho });
    }
    Ok(stats)
}

/// Deterministic fold assignment: id-sorted pairs, seeded shuffle, then
/// contiguous chunks whose sizes differ by at most one.
pub fn fold_assignments(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    let n = corpus.pairs().len();
    if k < 2 || k > n {
        return Err(EvalError::BadK { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| corpus.pairs()[a].id.cmp(&corpus.pairs()[b].id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = n / k;
    let remainder = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut cursor = 0;
    for i in 0..k {
        let size = base + usize::from(i < remainder);
        folds.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(folds)
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub mean: Option<f64>,
    pub std_dev: Option<f64>,
    pub per_fold: Vec<Option<f64>>,
    /// Folds where Spearman was undefined (too small or constant).
    pub undefined_folds: usize,
}

/// k-fold cross-validation. The trainer receives (train, held-out) corpora
/// and returns predictions for the held-out pairs in order. Mean and
/// population standard deviation are taken over folds with defined Spearman.
pub fn kfold_cv<F, E>(
    corpus: &Corpus,
    k: usize,
    seed: u64,
    mut trainer: F,
) -> Result<CvReport, EvalError>
where
    F: FnMut(&Corpus, &Corpus) -> Result<Vec<f64>, E>,
    E: std::fmt::Display,
{
    let folds = fold_assignments(corpus, k, seed)?;
    let mut per_fold = Vec::with_capacity(k);
    for (i, fold) in folds.iter().enumerate() {
        let held: Vec<SentencePair> =
            fold.iter().map(|&idx| corpus.pairs()[idx].clone()).collect();
        let train: Vec<SentencePair> = folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().map(|&idx| corpus.pairs()[idx].clone()))
            .collect();
        let train_corpus = Corpus::labeled(
            format!("{}-fold{}-train", corpus.name, i),
            corpus.language.clone(),
            corpus.split,
            train,
        )?;
        let held_corpus = Corpus::labeled(
            format!("{}-fold{}-eval", corpus.name, i),
            corpus.language.clone(),
            corpus.split,
            held,
        )?;
        let preds = trainer(&train_corpus, &held_corpus)
            .map_err(|e| EvalError::Trainer(e.to_string()))?;
        if preds.len() != held_corpus.pairs().len() {
            return Err(EvalError::LengthMismatch {
                a: preds.len(),
                b: held_corpus.pairs().len(),
            });
        }
        let golds: Vec<f64> = held_corpus.pairs().iter().map(|p| p.score).collect();
        let rho = if golds.len() < 2 { None } else { spearman(&preds, &golds)? };
        per_fold.push(rho);
    }

    let defined: Vec<f64> = per_fold.iter().filter_map(|r| *r).collect();
    let undefined_folds = per_fold.len() - defined.len();
    let (mean, std_dev) = if defined.is_empty() {
        (None, None)
    } else {
        let m = defined.iter().sum::<f64>() / defined.len() as f64;
        let var =
            defined.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / defined.len() as f64;
        (Some(m), Some(var.sqrt()))
    };
    Ok(CvReport { mean, std_dev, per_fold, undefined_folds })
}

/// Per-language evaluation record with band breakdown and lineage.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub language: String,
    pub system_id: String,
    pub spearman: Option<f64>,
    pub n_pairs: usize,
    pub bands: Vec<BandStat>,
    pub checkpoint_hash: Option<String>,
    pub config_hash: Option<String>,
}

impl EvalReport {
    /// Compute the full report from prediction/gold vectors.
    pub fn from_scores(
        language: impl Into<String>,
        system_id: impl Into<String>,
        pred: &[f64],
        gold: &[f64],
        bands: &[Band],
    ) -> Result<Self, EvalError> {
        let rho = if pred.len() < 2 { None } else { spearman(pred, gold)? };
        let band_stats = band_analysis(pred, gold, bands)?;
        debug_assert_eq!(band_stats.iter().map(|b| b.n).sum::<usize>(), pred.len());
        Ok(EvalReport {
            language: language.into(),
            system_id: system_id.into(),
            spearman: rho,
            n_pairs: pred.len(),
            bands: band_stats,
            checkpoint_hash: None,
            config_hash: None,
        })
    }

    pub fn with_lineage(
        mut self,
        checkpoint_hash: impl Into<String>,
        config_hash: impl Into<String>,
    ) -> Self {
        self.checkpoint_hash = Some(checkpoint_hash.into());
        self.config_hash = Some(config_hash.into());
        self
    }
}

/// Render a correlation in the reporting convention: x100, two decimals,
/// `-` for undefined.
pub fn format_x100(value: Option<f64>) -> String {
    match value {
        Some(rho) => format!("{:.2}", rho * 100.0),
        None => "-".to_string(),
    }
}

/// Machine-readable twin of the text table: `total` rows followed by `band`
/// rows per report.
pub fn report_tsv(reports: &[EvalReport]) -> String {
    let mut out = String::from("record\tlanguage\tsystem\tband\tn\tspearman_x100\tcheckpoint_hash\tconfig_hash\n");
    for report in reports {
        out.push_str(&format!(
            "total\t{}\t{}\t-\t{}\t{}\t{}\t{}\n",
            report.language,
            report.system_id,
            report.n_pairs,
            format_x100(report.spearman),
            report.checkpoint_hash.as_deref().unwrap_or("-"),
            report.config_hash.as_deref().unwrap_or("-"),
        ));
        for band in &report.bands {
            out.push_str(&format!(
                "band\t{}\t{}\t[{:.2},{:.2})\t{}\t{}\t-\t-\n",
                report.language,
                report.system_id,
                band.lo,
                band.hi,
                band.n,
                format_x100(band.spearman),
            ));
        }
    }
    out
}

/// Aligned plain-text table of the summary rows.
pub fn emit_report(reports: &[EvalReport]) -> String {
    let headers = ["language", "system", "n", "spearman_x100"];
    let mut rows: Vec<[String; 4]> = Vec::with_capacity(reports.len());
    for report in reports {
        rows.push([
            report.language.clone(),
            report.system_id.clone(),
            report.n_pairs.to_string(),
            format_x100(report.spearman),
        ]);
    }
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: &[String], widths: &[usize]| -> String {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let header_cells: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    out.push_str(&fmt_row(&header_cells, &widths));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(&row, &widths));
        out.push('\n');
    }
    out
}
