//! Seeded synthetic corpora for offline experiments: sentence pairs whose
//! gold relatedness is a smooth function of token overlap plus Gaussian
//! noise, and Zipf-distributed unlabeled text for MLM.

use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::corpus::{Corpus, Provenance, SentencePair, Split};

/// Shared synthetic vocabulary: `w000`, `w001`, ...
pub fn synthetic_vocab(size: usize) -> Vec<String> {
    (0..size).map(|i| format!("w{i:03}")).collect()
}

/// Generator settings for labeled pair corpora. The gold score is the
/// affine map `score_offset + score_span * dice(s1, s2)` plus noise, clamped
/// to [0,1].
#[derive(Debug, Clone)]
pub struct PairSpec {
    pub n_pairs: usize,
    pub noise_sigma: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub score_offset: f64,
    pub score_span: f64,
    pub seed: u64,
}

impl PairSpec {
    pub fn new(n_pairs: usize, noise_sigma: f64, seed: u64) -> Self {
        PairSpec {
            n_pairs,
            noise_sigma,
            min_len: 3,
            max_len: 7,
            score_offset: 0.0,
            score_span: 1.0,
            seed,
        }
    }

    /// Keep clean scores inside [0.1, 0.9] so the sigmoid head never has to
    /// saturate.
    pub fn compressed(mut self) -> Self {
        self.score_offset = 0.1;
        self.score_span = 0.8;
        self
    }
}

fn dice(a: &[String], b: &[String]) -> f64 {
    let sa: std::collections::BTreeSet<&String> = a.iter().collect();
    let sb: std::collections::BTreeSet<&String> = b.iter().collect();
    let total = sa.len() + sb.len();
    if total == 0 {
        return 0.0;
    }
    2.0 * sa.intersection(&sb).count() as f64 / total as f64
}

/// Cumulative Zipf weights (rank weight 1/(r+1)) over the vocab order.
fn zipf_cumulative(n: usize) -> Vec<f64> {
    let weights: Vec<f64> = (0..n).map(|r| 1.0 / (r + 1) as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }
    cumulative
}

fn zipf_index(cumulative: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    cumulative.partition_point(|&c| c < u).min(cumulative.len() - 1)
}

fn sample_distinct(vocab: &[String], n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut indices: Vec<usize> = (0..vocab.len()).collect();
    indices.shuffle(rng);
    indices.truncate(n);
    indices.into_iter().map(|i| vocab[i].clone()).collect()
}

/// Labeled pairs whose gold score is the Dice token overlap of the two
/// sentences plus clipped Gaussian noise. Overlap levels are spread over
/// [0,1] so the score distribution covers the full range.
pub fn related_pairs(language: &str, split: Split, vocab: &[String], spec: &PairSpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // separate noise stream so sentences are identical across sigma settings
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6e6f_6973_65);
    let noise = Normal::new(0.0, spec.noise_sigma.max(1e-12)).expect("valid sigma");
    let mut pairs = Vec::with_capacity(spec.n_pairs);
    for i in 0..spec.n_pairs {
        let len1 = rng.gen_range(spec.min_len..=spec.max_len);
        let len2 = rng.gen_range(spec.min_len..=spec.max_len);
        let target_overlap: f64 = rng.gen();
        let s1 = sample_distinct(vocab, len1, &mut rng);
        let mut s2 = Vec::with_capacity(len2);
        for j in 0..len2 {
            if rng.gen::<f64>() < target_overlap {
                s2.push(s1[j % s1.len()].clone());
            } else {
                s2.push(vocab[rng.gen_range(0..vocab.len())].clone());
            }
        }
        let clean = spec.score_offset + spec.score_span * dice(&s1, &s2);
        let score = if spec.noise_sigma > 0.0 {
            (clean + noise.sample(&mut noise_rng)).clamp(0.0, 1.0)
        } else {
            clean.clamp(0.0, 1.0)
        };
        pairs.push(
            SentencePair::new(
                format!("s{i:05}"),
                s1.join(" "),
                s2.join(" "),
                score,
                Provenance::Original,
            )
            .expect("generated pairs are valid"),
        );
    }
    Corpus::labeled(format!("synth-{language}-{split}"), language, split, pairs)
        .expect("generated ids are unique")
}

/// Unlabeled sentences with Zipf-distributed tokens (rank weight 1/(r+1))
/// and internal copy structure: the second half of each sentence mostly
/// repeats earlier tokens, so masked positions are recoverable by matching.
/// This is the input for MLM-style pre-training.
pub fn unlabeled_sentences(
    language: &str,
    vocab: &[String],
    n_sentences: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cumulative = zipf_cumulative(vocab.len());
    let mut sentences = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let len = rng.gen_range(min_len..=max_len);
        let fresh = len.div_ceil(2);
        let mut tokens: Vec<String> = Vec::with_capacity(len);
        for _ in 0..fresh {
            tokens.push(vocab[zipf_index(&cumulative, &mut rng)].clone());
        }
        for _ in fresh..len {
            if rng.gen::<f64>() < 0.8 {
                let source = rng.gen_range(0..tokens.len());
                tokens.push(tokens[source].clone());
            } else {
                tokens.push(vocab[zipf_index(&cumulative, &mut rng)].clone());
            }
        }
        sentences.push(tokens.join(" "));
    }
    Corpus::unlabeled(format!("synth-{language}-unlabeled"), language, sentences)
}
