//! Training loops: cross-encoder (and bi-encoder) regression, masked
//! language modeling for task-adaptive pre-training, the two-phase
//! warmup-then-original scheme, and dev-set grid search.
//!
//! Defaults mirror the reference setup: batch size 16 throughout; MLM at
//! learning rate 5e-5 for 10 epochs; fine-tuning grid {2e-5, 5e-5} for 6
//! epochs; adapter grid {1e-4, 2e-4, 5e-5} for 15 epochs.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{adamw_step, AdamHyper, AdamState, AutodiffError, Tape, Tensor};
use crate::corpus::{Corpus, Provenance};
use crate::evaluation::{self, EvalError};
use crate::model::{LineageEntry, ModelError, ModelGraph, StageKind, TuningMode};
use crate::text::{self, TextError, TokenSequence, TokenizeOptions, Vocabulary, MASK, NUM_SPECIALS};

pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const MLM_LEARNING_RATE: f64 = 5e-5;
pub const MLM_EPOCHS: usize = 10;
pub const FINE_TUNE_EPOCHS: usize = 6;
pub const FINE_TUNE_GRID_LRS: [f64; 2] = [2e-5, 5e-5];
pub const ADAPTER_EPOCHS: usize = 15;
pub const ADAPTER_GRID_LRS: [f64; 3] = [1e-4, 2e-4, 5e-5];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("corpus `{0}` is empty")]
    EmptyCorpus(String),
    #[error("corpus `{0}` is not labeled")]
    NotLabeled(String),
    #[error("corpus `{0}` is not unlabeled")]
    NotUnlabeled(String),
    #[error("non-finite loss at step {step}")]
    NanLoss { step: usize },
    #[error("two-phase corpora disagree on language: `{a}` vs `{b}`")]
    MixedLanguagePhases { a: String, b: String },
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error("invalid mask policy: {0}")]
    BadPolicy(String),
    #[error("grid search needs a non-empty grid")]
    EmptyGrid,
    #[error("grid search needs a non-empty dev set")]
    EmptyDev,
    #[error("every grid configuration diverged: {0:?}")]
    AllRunsDiverged(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub mode: TuningMode,
    pub seed: u64,
    pub shuffle: bool,
    pub weight_decay: f64,
    /// Second-moment horizon; 0.999 suits long runs, lower values adapt
    /// faster on short ones.
    pub beta2: f64,
    /// Also present each pair in the (s2, s1) orientation. The relatedness
    /// target is symmetric, so this doubles supervision without new labels.
    pub mirror_pairs: bool,
    pub tokenize: TokenizeOptions,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, epochs: usize, mode: TuningMode, seed: u64) -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate,
            epochs,
            mode,
            seed,
            shuffle: true,
            weight_decay: 0.0,
            beta2: 0.999,
            mirror_pairs: false,
            tokenize: TokenizeOptions::default(),
        }
    }

    /// MLM defaults: lr 5e-5, 10 epochs.
    pub fn tapt_defaults(mode: TuningMode, seed: u64) -> Self {
        TrainConfig::new(MLM_LEARNING_RATE, MLM_EPOCHS, mode, seed)
    }

    /// Full fine-tuning defaults: 6 epochs (lr comes from the grid).
    pub fn fine_tune_defaults(learning_rate: f64, seed: u64) -> Self {
        TrainConfig::new(learning_rate, FINE_TUNE_EPOCHS, TuningMode::Full, seed)
    }

    /// Adapter-tuning defaults: 15 epochs (lr comes from the grid).
    pub fn adapter_defaults(learning_rate: f64, seed: u64) -> Self {
        TrainConfig::new(learning_rate, ADAPTER_EPOCHS, TuningMode::TaskAdapterOnly, seed)
    }

    /// The fine-tuning learning-rate grid {2e-5, 5e-5} at 6 epochs.
    pub fn fine_tune_grid(seed: u64) -> Vec<TrainConfig> {
        FINE_TUNE_GRID_LRS.iter().map(|&lr| Self::fine_tune_defaults(lr, seed)).collect()
    }

    /// The adapter learning-rate grid {1e-4, 2e-4, 5e-5} at 15 epochs.
    pub fn adapter_grid(seed: u64) -> Vec<TrainConfig> {
        ADAPTER_GRID_LRS.iter().map(|&lr| Self::adapter_defaults(lr, seed)).collect()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// BERT-style masking convention: 15% of non-special tokens selected, split
/// 80% MASK / 10% random token / 10% kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskPolicy {
    pub mask_prob: f64,
    pub replace_mask: f64,
    pub replace_random: f64,
    pub keep: f64,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy { mask_prob: 0.15, replace_mask: 0.8, replace_random: 0.1, keep: 0.1 }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(TrainError::BadPolicy(format!(
                "mask_prob {} not in [0,1]",
                self.mask_prob
            )));
        }
        let sum = self.replace_mask + self.replace_random + self.keep;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(TrainError::BadPolicy(format!(
                "replace fractions sum to {sum}, expected 1"
            )));
        }
        if self.replace_mask < 0.0 || self.replace_random < 0.0 || self.keep < 0.0 {
            return Err(TrainError::BadPolicy("replace fractions must be non-negative".into()));
        }
        Ok(())
    }
}

/// Masked-input labels: `Some(original id)` exactly at selected positions.
pub type MlmLabels = Vec<Option<usize>>;

/// Apply the masking policy to one sequence. Special tokens (PAD/UNK/CLS/
/// SEP/MASK) are never selected. Random replacements draw a non-special id.
pub fn mask_tokens(
    seq: &TokenSequence,
    policy: &MaskPolicy,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(TokenSequence, MlmLabels), TrainError> {
    policy.validate()?;
    let mut masked = seq.clone();
    let mut labels: MlmLabels = vec![None; seq.len()];
    for pos in 0..seq.len() {
        if seq.attention_mask[pos] != 1 || text::is_special_id(seq.ids[pos]) {
            continue;
        }
        if rng.gen::<f64>() >= policy.mask_prob {
            continue;
        }
        labels[pos] = Some(seq.ids[pos]);
        let roll: f64 = rng.gen();
        if roll < policy.replace_mask {
            masked.ids[pos] = MASK;
        } else if roll < policy.replace_mask + policy.replace_random {
            if vocab_size > NUM_SPECIALS {
                masked.ids[pos] = rng.gen_range(NUM_SPECIALS..vocab_size);
            }
        }
        // else: keep the original token
    }
    Ok((masked, labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLog {
    pub name: String,
    pub parent_hash: String,
    pub final_hash: String,
    pub epochs: Vec<EpochLog>,
    /// Provenance tags observed in each processed batch, in order.
    pub batch_provenances: Vec<BTreeSet<Provenance>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub phases: Vec<PhaseLog>,
    pub warnings: Vec<String>,
}

impl TrainLog {
    pub fn final_checkpoint_hash(&self) -> Option<&str> {
        self.phases.last().map(|p| p.final_hash.as_str())
    }

    /// Line-oriented record: `phase	epoch	loss	dev_spearman?`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("phase\tepoch\tloss\tdev_spearman\n");
        for phase in &self.phases {
            for epoch in &phase.epochs {
                let dev = match epoch.dev_spearman {
                    Some(rho) => format!("{rho}"),
                    None => "-".to_string(),
                };
                out.push_str(&format!("{}\t{}\t{}\t{}\n", phase.name, epoch.epoch, epoch.loss, dev));
            }
        }
        out
    }
}

/// Which regression architecture a supervised run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Joint pair encoding with a sigmoid regression head on the first token.
    CrossEncoder,
    /// Independent sentence encodings compared by cosine similarity.
    BiEncoder,
}

enum EncodedExample {
    Cross { seq: TokenSequence, score: f64, provenance: Provenance },
    Bi { s1: TokenSequence, s2: TokenSequence, score: f64, provenance: Provenance },
}

impl EncodedExample {
    fn provenance(&self) -> Provenance {
        match self {
            EncodedExample::Cross { provenance, .. } => *provenance,
            EncodedExample::Bi { provenance, .. } => *provenance,
        }
    }
}

/// Predictions for labeled pairs under either architecture.
pub fn predict_arch(
    model: &ModelGraph,
    vocab: &Vocabulary,
    pairs: &[crate::corpus::SentencePair],
    arch: Architecture,
    opts: TokenizeOptions,
) -> Result<Vec<f64>, TrainError> {
    match arch {
        Architecture::CrossEncoder => Ok(model.predict_pairs(vocab, pairs, opts)?),
        Architecture::BiEncoder => {
            let max_len = model.config().max_len;
            let mut scores = Vec::with_capacity(pairs.len());
            for pair in pairs {
                let s1 = text::encode_single(&pair.sentence1, vocab, max_len, opts)?;
                let s2 = text::encode_single(&pair.sentence2, vocab, max_len, opts)?;
                let e1 = model.forward_bi(&s1)?;
                let e2 = model.forward_bi(&s2)?;
                let cos = evaluation::cosine(&e1, &e2).ok_or(EvalError::NonFinite)?;
                scores.push(cos);
            }
            Ok(scores)
        }
    }
}

fn dev_spearman(
    model: &ModelGraph,
    vocab: &Vocabulary,
    dev: &Corpus,
    arch: Architecture,
    opts: TokenizeOptions,
) -> Result<Option<f64>, TrainError> {
    if dev.pairs().len() < 2 {
        return Ok(None);
    }
    let preds = predict_arch(model, vocab, dev.pairs(), arch, opts)?;
    let golds: Vec<f64> = dev.pairs().iter().map(|p| p.score).collect();
    Ok(evaluation::spearman(&preds, &golds)?)
}

fn run_regression_phase(
    model: &mut ModelGraph,
    vocab: &Vocabulary,
    train: &Corpus,
    dev: Option<&Corpus>,
    config: &TrainConfig,
    phase_name: &str,
    arch: Architecture,
) -> Result<PhaseLog, TrainError> {
    config.validate()?;
    if !train.is_labeled() {
        return Err(TrainError::NotLabeled(train.name.clone()));
    }
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus(train.name.clone()));
    }
    model.set_trainable(config.mode)?;
    if model.has_task_adapters() {
        model.adapters_mut().task_trained_on = Some(train.language.clone());
    }
    let parent_hash = model.content_hash();
    let max_len = model.config().max_len;

    // canonical id order, so the loss sequence is independent of file order
    let mut pairs: Vec<&crate::corpus::SentencePair> = train.pairs().iter().collect();
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut examples = Vec::with_capacity(pairs.len());
    let mut orientations: Vec<(&str, &str)> = Vec::with_capacity(2);
    for pair in pairs {
        orientations.clear();
        orientations.push((pair.sentence1.as_str(), pair.sentence2.as_str()));
        if config.mirror_pairs {
            orientations.push((pair.sentence2.as_str(), pair.sentence1.as_str()));
        }
        for &(first, second) in &orientations {
            let example = match arch {
                Architecture::CrossEncoder => EncodedExample::Cross {
                    seq: text::encode_pair(first, second, vocab, max_len, config.tokenize)?,
                    score: pair.score,
                    provenance: pair.provenance,
                },
                Architecture::BiEncoder => EncodedExample::Bi {
                    s1: text::encode_single(first, vocab, max_len, config.tokenize)?,
                    s2: text::encode_single(second, vocab, max_len, config.tokenize)?,
                    score: pair.score,
                    provenance: pair.provenance,
                },
            };
            examples.push(example);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new();
    let hyper = AdamHyper {
        lr: config.learning_rate,
        weight_decay: config.weight_decay,
        beta2: config.beta2,
        ..AdamHyper::with_lr(config.learning_rate)
    };
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut batch_provenances = Vec::new();
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let leaves = model.add_params_to_tape(&mut tape);
            let mut example_losses = Vec::with_capacity(batch.len());
            let mut provenances = BTreeSet::new();
            for &idx in batch {
                provenances.insert(examples[idx].provenance());
                let loss = match &examples[idx] {
                    EncodedExample::Cross { seq, score, .. } => {
                        let pred = model.cross_score_on_tape(&mut tape, &leaves, seq, None)?;
                        let target =
                            tape.constant(Tensor::new(vec![1, 1], vec![*score]).unwrap());
                        tape.mse_loss(pred, target)?
                    }
                    EncodedExample::Bi { s1, s2, score, .. } => {
                        let e1 = model.pooled_on_tape(&mut tape, &leaves, s1, None)?;
                        let e2 = model.pooled_on_tape(&mut tape, &leaves, s2, None)?;
                        let cos = tape.cosine_similarity(e1, e2)?;
                        let target = tape.constant(Tensor::scalar(*score).unwrap());
                        tape.mse_loss(cos, target)?
                    }
                };
                example_losses.push(loss);
            }
            let mut total = example_losses[0];
            for &l in &example_losses[1..] {
                total = tape.add(total, l)?;
            }
            let mean = tape.scalar_mul(total, 1.0 / batch.len() as f64)?;
            let loss_value = tape.value(mean).item()?;
            if !loss_value.is_finite() {
                return Err(TrainError::NanLoss { step });
            }
            let grads = tape.backward(mean)?;
            adamw_step(model.params_mut(), &grads, &mut state, &hyper)?;
            step += 1;
            loss_sum += loss_value * batch.len() as f64;
            batch_provenances.push(provenances);
        }
        let epoch_loss = loss_sum / examples.len() as f64;
        let dev_rho = match dev {
            Some(dev_corpus) => dev_spearman(model, vocab, dev_corpus, arch, config.tokenize)?,
            None => None,
        };
        epochs.push(EpochLog { epoch, loss: epoch_loss, dev_spearman: dev_rho });
    }

    let final_hash = model.content_hash();
    model.push_lineage(LineageEntry {
        stage: phase_name.to_string(),
        kind: StageKind::Supervised,
        hash: final_hash.clone(),
        provenance: Some(train.provenance_counts()),
    });
    Ok(PhaseLog {
        name: phase_name.to_string(),
        parent_hash,
        final_hash,
        epochs,
        batch_provenances,
    })
}

/// MSE regression of the cross-encoder score onto gold labels.
pub fn train_regression(
    model: &mut ModelGraph,
    vocab: &Vocabulary,
    train: &Corpus,
    dev: Option<&Corpus>,
    config: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    let phase = run_regression_phase(
        model,
        vocab,
        train,
        dev,
        config,
        "train",
        Architecture::CrossEncoder,
    )?;
    Ok(TrainLog { phases: vec![phase], warnings: Vec::new() })
}

/// Bi-encoder variant: regress cosine(emb1, emb2) onto the gold score.
pub fn train_regression_biencoder(
    model: &mut ModelGraph,
    vocab: &Vocabulary,
    train: &Corpus,
    dev: Option<&Corpus>,
    config: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    let phase =
        run_regression_phase(model, vocab, train, dev, config, "train", Architecture::BiEncoder)?;
    Ok(TrainLog { phases: vec![phase], warnings: Vec::new() })
}

/// Task-adaptive pre-training: masked-LM on unlabeled task data. In
/// `language_adapter_only` mode only the language adapters and the MLM head
/// change.
pub fn tapt(
    model: &mut ModelGraph,
    vocab: &Vocabulary,
    unlabeled: &Corpus,
    config: &TrainConfig,
    policy: &MaskPolicy,
) -> Result<TrainLog, TrainError> {
    config.validate()?;
    policy.validate()?;
    if unlabeled.is_labeled() {
        return Err(TrainError::NotUnlabeled(unlabeled.name.clone()));
    }
    if unlabeled.is_empty() {
        return Err(TrainError::EmptyCorpus(unlabeled.name.clone()));
    }
    model.set_trainable(config.mode)?;
    let parent_hash = model.content_hash();
    let max_len = model.config().max_len;
    let vocab_size = model.config().vocab_size;

    let mut encoded = Vec::with_capacity(unlabeled.sentences().len());
    for sentence in unlabeled.sentences() {
        encoded.push(text::encode_single(sentence, vocab, max_len, config.tokenize)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new();
    let hyper = AdamHyper {
        lr: config.learning_rate,
        weight_decay: config.weight_decay,
        beta2: config.beta2,
        ..AdamHyper::with_lr(config.learning_rate)
    };

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut batch_provenances = Vec::new();
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let leaves = model.add_params_to_tape(&mut tape);
            let mut example_losses = Vec::with_capacity(batch.len());
            for &idx in batch {
                let (masked, labels) = mask_tokens(&encoded[idx], policy, vocab_size, &mut rng)?;
                let logits = model.mlm_logits_on_tape(&mut tape, &leaves, &masked, None)?;
                example_losses.push(tape.masked_cross_entropy(logits, &labels)?);
            }
            let mut total = example_losses[0];
            for &l in &example_losses[1..] {
                total = tape.add(total, l)?;
            }
            let mean = tape.scalar_mul(total, 1.0 / batch.len() as f64)?;
            let loss_value = tape.value(mean).item()?;
            if !loss_value.is_finite() {
                return Err(TrainError::NanLoss { step });
            }
            let grads = tape.backward(mean)?;
            adamw_step(model.params_mut(), &grads, &mut state, &hyper)?;
            step += 1;
            loss_sum += loss_value * batch.len() as f64;
            batch_provenances.push(BTreeSet::new());
        }
        let epoch_loss = loss_sum / encoded.len() as f64;
        epochs.push(EpochLog { epoch, loss: epoch_loss, dev_spearman: None });
    }

    let final_hash = model.content_hash();
    model.push_lineage(LineageEntry {
        stage: "tapt".to_string(),
        kind: StageKind::Tapt,
        hash: final_hash.clone(),
        provenance: None,
    });
    Ok(TrainLog {
        phases: vec![PhaseLog {
            name: "tapt".to_string(),
            parent_hash,
            final_hash,
            epochs,
            batch_provenances,
        }],
        warnings: Vec::new(),
    })
}

/// Warmup on augmented (translated) data, then training on the original
/// data; phase 2 starts from the exact phase-1 checkpoint. An empty phase
/// corpus is skipped with a logged warning.
pub fn two_phase_train(
    model: &mut ModelGraph,
    vocab: &Vocabulary,
    augmented: &Corpus,
    original: &Corpus,
    warmup_config: &TrainConfig,
    final_config: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    if augmented.language != original.language {
        return Err(TrainError::MixedLanguagePhases {
            a: augmented.language.clone(),
            b: original.language.clone(),
        });
    }
    let mut log = TrainLog::default();
    if augmented.is_empty() {
        log.warnings.push(format!("warmup phase skipped: corpus `{}` is empty", augmented.name));
    } else {
        let phase = run_regression_phase(
            model,
            vocab,
            augmented,
            None,
            warmup_config,
            "warmup",
            Architecture::CrossEncoder,
        )?;
        log.phases.push(phase);
    }
    if original.is_empty() {
        log.warnings.push(format!("final phase skipped: corpus `{}` is empty", original.name));
    } else {
        let phase = run_regression_phase(
            model,
            vocab,
            original,
            None,
            final_config,
            "final",
            Architecture::CrossEncoder,
        )?;
        log.phases.push(phase);
    }
    Ok(log)
}

#[derive(Debug, Clone)]
pub struct GridEntry {
    pub config: TrainConfig,
    pub dev_spearman: Option<f64>,
    pub diverged: Option<String>,
}

const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Train one model per config from identical initialization (the factory
/// must return the same initialization each call) and return the dev-set
/// argmax. Ties break toward the lower learning rate, then grid order.
/// Each run derives its RNG stream from (seed, grid index).
pub fn grid_search<F>(
    model_factory: F,
    vocab: &Vocabulary,
    grid: &[TrainConfig],
    train: &Corpus,
    dev: &Corpus,
) -> Result<(ModelGraph, Vec<GridEntry>), TrainError>
where
    F: Fn() -> Result<ModelGraph, ModelError>,
{
    if grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    if dev.is_empty() {
        return Err(TrainError::EmptyDev);
    }
    let mut entries = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, ModelGraph)> = None;

    for (index, config) in grid.iter().enumerate() {
        let mut run_config = config.clone();
        run_config.seed = config.seed.wrapping_add((index as u64).wrapping_mul(SEED_STRIDE));
        let mut model = model_factory()?;
        let outcome = run_regression_phase(
            &mut model,
            vocab,
            train,
            None,
            &run_config,
            "grid",
            Architecture::CrossEncoder,
        );
        match outcome {
            Ok(_) => {
                let rho = dev_spearman(&model, vocab, dev, Architecture::CrossEncoder, config.tokenize)?;
                entries.push(GridEntry { config: config.clone(), dev_spearman: rho, diverged: None });
                let better = match &best {
                    None => true,
                    Some((best_index, _)) => {
                        let a = &entries[index];
                        let b = &entries[*best_index];
                        compare_entries(a, b) == std::cmp::Ordering::Greater
                    }
                };
                if better {
                    best = Some((index, model));
                }
            }
            Err(TrainError::NanLoss { step }) => {
                entries.push(GridEntry {
                    config: config.clone(),
                    dev_spearman: None,
                    diverged: Some(format!("NaN loss at step {step}")),
                });
            }
            Err(other) => return Err(other),
        }
    }

    match best {
        Some((_, model)) => Ok((model, entries)),
        None => Err(TrainError::AllRunsDiverged(
            entries
                .iter()
                .map(|e| format!("lr={}: {}", e.config.learning_rate, e.diverged.as_deref().unwrap_or("?")))
                .collect(),
        )),
    }
}

/// Greater = preferable: higher dev Spearman, then lower lr. Grid order is
/// preserved by the caller keeping the first of equal entries.
fn compare_entries(a: &GridEntry, b: &GridEntry) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    match (a.dev_spearman, b.dev_spearman) {
        (Some(x), Some(y)) => x
            .partial_cmp(&y)
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                // lower learning rate preferred
                b.config
                    .learning_rate
                    .partial_cmp(&a.config.learning_rate)
                    .unwrap_or(Ordering::Equal)
            }),
        (Some(_), None) => Ordering::Greater,
        (None, Some(_)) => Ordering::Less,
        (None, None) => Ordering::Equal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SentencePair, Split};
    use crate::model::EncoderConfig;
    use std::collections::BTreeMap;

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
        Vocabulary::build(&[&corpus], TokenizeOptions::raw(), 1, 24).unwrap()
    }

    fn labeled(name: &str, rows: &[(&str, &str, f64)]) -> Corpus {
        let pairs = rows
            .iter()
            .enumerate()
            .map(|(i, (s1, s2, score))| {
                SentencePair::new(format!("p{i}"), *s1, *s2, *score, Provenance::Original).unwrap()
            })
            .collect();
        Corpus::labeled(name, "aa", Split::Train, pairs).unwrap()
    }

    fn seq_of_len(n: usize, total: usize) -> TokenSequence {
        let mut ids = vec![2];
        ids.extend(std::iter::repeat(7).take(n));
        ids.push(3);
        let active = ids.len();
        ids.resize(total, 0);
        let mut mask = vec![0; total];
        for m in mask.iter_mut().take(active) {
            *m = 1;
        }
        TokenSequence { ids, attention_mask: mask }
    }

    #[test]
    fn mask_everything_policy() {
        let policy = MaskPolicy { mask_prob: 1.0, replace_mask: 1.0, replace_random: 0.0, keep: 0.0 };
        let seq = seq_of_len(5, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (masked, labels) = mask_tokens(&seq, &policy, 24, &mut rng).unwrap();
        for pos in 0..seq.len() {
            if seq.attention_mask[pos] == 1 && !text::is_special_id(seq.ids[pos]) {
                assert_eq!(masked.ids[pos], MASK);
                assert_eq!(labels[pos], Some(seq.ids[pos]));
            } else {
                assert_eq!(masked.ids[pos], seq.ids[pos]);
                assert_eq!(labels[pos], None);
            }
        }
    }

    #[test]
    fn mask_nothing_policy() {
        let policy = MaskPolicy { mask_prob: 0.0, ..MaskPolicy::default() };
        let seq = seq_of_len(5, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (masked, labels) = mask_tokens(&seq, &policy, 24, &mut rng).unwrap();
        assert_eq!(masked, seq);
        assert!(labels.iter().all(|l| l.is_none()));
    }

    #[test]
    fn mask_statistics_match_policy() {
        // seeded statistical oracle over 10,000 maskable tokens
        let policy = MaskPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let per_seq = 50usize;
        let n_seqs = 200usize;
        let mut selected = 0usize;
        let mut masked_count = 0usize;
        let mut random_count = 0usize;
        let mut kept_count = 0usize;
        for _ in 0..n_seqs {
            let seq = seq_of_len(per_seq, per_seq + 2);
            let (masked, labels) = mask_tokens(&seq, &policy, 1000, &mut rng).unwrap();
            for pos in 0..seq.len() {
                if let Some(original) = labels[pos] {
                    selected += 1;
                    if masked.ids[pos] == MASK {
                        masked_count += 1;
                    } else if masked.ids[pos] == original {
                        kept_count += 1;
                    } else {
                        random_count += 1;
                    }
                }
            }
        }
        let total = (per_seq * n_seqs) as f64;
        assert!((selected as f64 / total - 0.15).abs() < 0.01);
        let sel = selected as f64;
        assert!((masked_count as f64 / sel - 0.8).abs() < 0.02);
        assert!((random_count as f64 / sel - 0.1).abs() < 0.02);
        assert!((kept_count as f64 / sel - 0.1).abs() < 0.02);
    }

    #[test]
    fn mask_never_selects_specials() {
        let policy = MaskPolicy { mask_prob: 1.0, replace_mask: 1.0, replace_random: 0.0, keep: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for len in 1..20 {
            let seq = seq_of_len(len, len + 4);
            let (masked, labels) = mask_tokens(&seq, &policy, 24, &mut rng).unwrap();
            for pos in 0..seq.len() {
                if text::is_special_id(seq.ids[pos]) {
                    assert_eq!(masked.ids[pos], seq.ids[pos]);
                    assert!(labels[pos].is_none());
                }
            }
        }
    }

    #[test]
    fn memorizes_single_pair() {
        let vocab = vocab_from(&["red blue", "green yellow"]);
        let train = labeled("one", &[("red blue", "green yellow", 0.9)]);
        let mut model = ModelGraph::build_encoder(tiny_config(5)).unwrap();
        let mut config = TrainConfig::new(0.02, 200, TuningMode::Full, 1);
        config.batch_size = 1;
        config.tokenize = TokenizeOptions::raw();
        let log = train_regression(&mut model, &vocab, &train, None, &config).unwrap();
        let last = log.phases[0].epochs.last().unwrap();
        assert!(last.loss < 1e-3, "final loss {}", last.loss);
    }

    #[test]
    fn training_is_deterministic() {
        let vocab = vocab_from(&["red blue", "green yellow"]);
        let train = labeled(
            "c",
            &[("red blue", "green yellow", 0.2), ("red red", "red red", 0.9),
              ("blue green", "blue blue", 0.5)],
        );
        let mut config = TrainConfig::new(0.01, 3, TuningMode::Full, 7);
        config.tokenize = TokenizeOptions::raw();
        let mut run = || {
            let mut model = ModelGraph::build_encoder(tiny_config(3)).unwrap();
            let log = train_regression(&mut model, &vocab, &train, None, &config).unwrap();
            (model.content_hash(), log)
        };
        let (hash_a, log_a) = run();
        let (hash_b, log_b) = run();
        assert_eq!(hash_a, hash_b);
        assert_eq!(log_a, log_b);
    }

    #[test]
    fn frozen_names_unchanged_in_adapter_mode() {
        let vocab = vocab_from(&["red blue", "green yellow"]);
        let train = labeled("c", &[("red blue", "green", 0.3), ("blue", "yellow", 0.8)]);
        let mut model = ModelGraph::build_encoder(tiny_config(11)).unwrap();
        model.attach_adapters("aa", "str").unwrap();
        let config = TrainConfig {
            tokenize: TokenizeOptions::raw(),
            ..TrainConfig::new(0.05, 4, TuningMode::TaskAdapterOnly, 2)
        };
        let snapshot: BTreeMap<String, Tensor> =
            model.params().iter().map(|(n, p)| (n.clone(), p.tensor.clone())).collect();
        train_regression(&mut model, &vocab, &train, None, &config).unwrap();
        let trainable = model.trainable_names();
        for (name, param) in model.params() {
            if !trainable.contains(name) {
                assert!(param.tensor.bitwise_eq(&snapshot[name]), "frozen `{name}` changed");
            }
        }
        // and something did change
        assert!(model
            .params()
            .iter()
            .any(|(n, p)| trainable.contains(n) && !p.tensor.bitwise_eq(&snapshot[n])));
    }

    #[test]
    fn batch_order_invariance_without_shuffle() {
        let vocab = vocab_from(&["red blue", "green yellow"]);
        let rows =
            [("red blue", "green", 0.3), ("blue", "yellow", 0.8), ("green red", "blue", 0.1)];
        let forward = labeled("c", &rows);
        let mut reversed_rows = rows;
        reversed_rows.reverse();
        // reversing file order changes ids too, so rebuild with matching ids
        let reversed = {
            let pairs = reversed_rows
                .iter()
                .enumerate()
                .map(|(i, (s1, s2, score))| {
                    let original_index = rows.len() - 1 - i;
                    SentencePair::new(
                        format!("p{original_index}"),
                        *s1,
                        *s2,
                        *score,
                        Provenance::Original,
                    )
                    .unwrap()
                })
                .collect();
            Corpus::labeled("c", "aa", Split::Train, pairs).unwrap()
        };
        let config = TrainConfig {
            shuffle: false,
            tokenize: TokenizeOptions::raw(),
            ..TrainConfig::new(0.01, 2, TuningMode::Full, 3)
        };
        let mut model_a = ModelGraph::build_encoder(tiny_config(1)).unwrap();
        let log_a = train_regression(&mut model_a, &vocab, &forward, None, &config).unwrap();
        let mut model_b = ModelGraph::build_encoder(tiny_config(1)).unwrap();
        let log_b = train_regression(&mut model_b, &vocab, &reversed, None, &config).unwrap();
        let losses_a: Vec<f64> = log_a.phases[0].epochs.iter().map(|e| e.loss).collect();
        let losses_b: Vec<f64> = log_b.phases[0].epochs.iter().map(|e| e.loss).collect();
        assert_eq!(losses_a, losses_b);
    }

    #[test]
    fn tapt_defaults_mirror_reference_setup() {
        let config = TrainConfig::tapt_defaults(TuningMode::LanguageAdapterOnly, 0);
        assert_eq!(config.learning_rate, 5e-5);
        assert_eq!(config.epochs, 10);
        assert_eq!(config.batch_size, 16);
    }

    #[test]
    fn grids_match_reference_setup() {
        let ft = TrainConfig::fine_tune_grid(0);
        assert_eq!(ft.len(), 2);
        assert_eq!(ft[0].learning_rate, 2e-5);
        assert_eq!(ft[1].learning_rate, 5e-5);
        assert!(ft.iter().all(|c| c.epochs == 6 && c.mode == TuningMode::Full));
        let ad = TrainConfig::adapter_grid(0);
        assert_eq!(ad.len(), 3);
        assert_eq!(ad[0].learning_rate, 1e-4);
        assert_eq!(ad[1].learning_rate, 2e-4);
        assert_eq!(ad[2].learning_rate, 5e-5);
        assert!(ad.iter().all(|c| c.epochs == 15 && c.mode == TuningMode::TaskAdapterOnly));
    }

    #[test]
    fn tapt_loss_decreases() {
        let sentences: Vec<String> = (0..100)
            .map(|i| match i % 4 {
                0 => "red blue red".to_string(),
                1 => "green yellow green".to_string(),
                2 => "red red red".to_string(),
                _ => "yellow blue yellow".to_string(),
            })
            .collect();
        let refs: Vec<&str> = sentences.iter().map(|s| s.as_str()).collect();
        let vocab = vocab_from(&refs);
        let corpus = Corpus::unlabeled("u", "aa", sentences.clone());
        let mut model = ModelGraph::build_encoder(tiny_config(4)).unwrap();
        let config = TrainConfig {
            learning_rate: 5e-3,
            tokenize: TokenizeOptions::raw(),
            ..TrainConfig::tapt_defaults(TuningMode::Full, 5)
        };
        let log = tapt(&mut model, &vocab, &corpus, &config, &MaskPolicy::default()).unwrap();
        let epochs = &log.phases[0].epochs;
        assert!(epochs.last().unwrap().loss < epochs.first().unwrap().loss);
    }

    #[test]
    fn tapt_adapter_mode_keeps_backbone_bitwise_intact() {
        let vocab = vocab_from(&["red blue", "green yellow"]);
        let corpus = Corpus::unlabeled(
            "u",
            "aa",
            vec!["red blue red".into(), "green yellow".into(), "blue blue".into()],
        );
        let mut model = ModelGraph::build_encoder(tiny_config(6)).unwrap();
        model.attach_adapters("aa", "str").unwrap();
        let snapshot: BTreeMap<String, Tensor> =
            model.params().iter().map(|(n, p)| (n.clone(), p.tensor.clone())).collect();
        let config = TrainConfig {
            learning_rate: 1e-3,
            epochs: 2,
            tokenize: TokenizeOptions::raw(),
            ..TrainConfig::tapt_defaults(TuningMode::LanguageAdapterOnly, 5)
        };
        tapt(&mut model, &vocab, &corpus, &config, &MaskPolicy::default()).unwrap();
        for (name, param) in model.params() {
            let frozen = !name.starts_with(crate::model::LANG_ADAPTER_PREFIX)
                && !name.starts_with(crate::model::MLM_HEAD_PREFIX);
            if frozen {
                assert!(param.tensor.bitwise_eq(&snapshot[name]), "`{name}` changed");
            }
        }
    }

    #[test]
    fn two_phase_orders_and_links_phases() {
        let vocab = vocab_from(&["red blue", "green yellow"]);
        let augmented = {
            let pairs = vec![
                SentencePair::new("a0", "red", "blue", 0.4, Provenance::SemrelMt).unwrap(),
                SentencePair::new("a1", "green", "yellow", 0.6, Provenance::SemrelMt).unwrap(),
            ];
            Corpus::labeled("aug", "aa", Split::Train, pairs).unwrap()
        };
        let original = labeled("orig", &[("red blue", "green", 0.3), ("blue", "yellow", 0.8)]);
        let mut model = ModelGraph::build_encoder(tiny_config(2)).unwrap();
        let config = TrainConfig {
            epochs: 2,
            tokenize: TokenizeOptions::raw(),
            ..TrainConfig::new(0.01, 2, TuningMode::Full, 1)
        };
        let log =
            two_phase_train(&mut model, &vocab, &augmented, &original, &config, &config).unwrap();
        assert_eq!(log.phases.len(), 2);
        assert_eq!(log.phases[0].name, "warmup");
        assert_eq!(log.phases[1].name, "final");
        assert_eq!(log.phases[1].parent_hash, log.phases[0].final_hash);
        // provenance audit: warmup batches carry only augmented tags
        for batch in &log.phases[0].batch_provenances {
            assert_eq!(batch.iter().collect::<Vec<_>>(), [&Provenance::SemrelMt]);
        }
        for batch in &log.phases[1].batch_provenances {
            assert_eq!(batch.iter().collect::<Vec<_>>(), [&Provenance::Original]);
        }
        // lineage carries both supervised stages in order
        let stages: Vec<&str> = model.lineage().iter().map(|e| e.stage.as_str()).collect();
        let warmup_pos = stages.iter().position(|s| *s == "warmup").unwrap();
        let final_pos = stages.iter().position(|s| *s == "final").unwrap();
        assert!(warmup_pos < final_pos);
    }

    #[test]
    fn two_phase_skips_empty_phase_with_warning() {
        let vocab = vocab_from(&["red blue"]);
        let empty = Corpus::labeled("aug", "aa", Split::Train, Vec::new()).unwrap();
        let original = labeled("orig", &[("red", "blue", 0.5), ("blue", "red", 0.4)]);
        let mut model = ModelGraph::build_encoder(tiny_config(2)).unwrap();
        let config = TrainConfig {
            tokenize: TokenizeOptions::raw(),
            ..TrainConfig::new(0.01, 1, TuningMode::Full, 1)
        };
        let log =
            two_phase_train(&mut model, &vocab, &empty, &original, &config, &config).unwrap();
        assert_eq!(log.phases.len(), 1);
        assert_eq!(log.phases[0].name, "final");
        assert_eq!(log.warnings.len(), 1);
        assert!(log.warnings[0].contains("warmup"));
    }

    #[test]
    fn grid_search_singleton_returns_that_run() {
        let vocab = vocab_from(&["red blue", "green yellow"]);
        let train = labeled("t", &[("red", "blue", 0.2), ("green", "yellow", 0.8)]);
        let dev = labeled("d", &[("red", "blue", 0.3), ("green", "yellow", 0.7)]);
        let grid = vec![TrainConfig {
            tokenize: TokenizeOptions::raw(),
            ..TrainConfig::new(0.01, 1, TuningMode::Full, 1)
        }];
        let factory = || ModelGraph::build_encoder(tiny_config(3));
        let (_best, table) = grid_search(factory, &vocab, &grid, &train, &dev).unwrap();
        assert_eq!(table.len(), 1);
        assert!(table[0].diverged.is_none());
    }

    #[test]
    fn grid_search_selects_the_learning_config() {
        let vocab = vocab_from(&["red blue", "green yellow"]);
        let train = labeled(
            "t",
            &[("red", "red", 0.9), ("blue", "blue", 0.65), ("red", "yellow", 0.35),
              ("green", "blue", 0.1)],
        );
        let dev = train.clone().with_name("d");
        // one config that can actually learn, others frozen at lr ~ 0
        let mut grid = vec![
            TrainConfig {
                tokenize: TokenizeOptions::raw(),
                ..TrainConfig::new(1e-12, 2, TuningMode::Full, 1)
            },
            TrainConfig {
                tokenize: TokenizeOptions::raw(),
                ..TrainConfig::new(0.01, 60, TuningMode::Full, 1)
            },
            TrainConfig {
                tokenize: TokenizeOptions::raw(),
                ..TrainConfig::new(1e-12, 2, TuningMode::Full, 1)
            },
        ];
        grid[0].batch_size = 2;
        grid[1].batch_size = 2;
        grid[2].batch_size = 2;
        let factory = || ModelGraph::build_encoder(tiny_config(3));
        let (best, table) = grid_search(factory, &vocab, &grid, &train, &dev).unwrap();
        let best_entry = table
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| compare_entries(a, b))
            .map(|(i, _)| i)
            .unwrap();
        assert_eq!(best_entry, 1);
        // the returned model is the one that memorized
        let preds = best.predict_pairs(&vocab, dev.pairs(), TokenizeOptions::raw()).unwrap();
        let golds: Vec<f64> = dev.pairs().iter().map(|p| p.score).collect();
        let rho = evaluation::spearman(&preds, &golds).unwrap().unwrap();
        assert!(rho > 0.7, "dev spearman {rho}");
    }

    #[test]
    fn train_log_tsv_format() {
        let log = TrainLog {
            phases: vec![PhaseLog {
                name: "warmup".into(),
                parent_hash: "h0".into(),
                final_hash: "h1".into(),
                epochs: vec![
                    EpochLog { epoch: 1, loss: 0.5, dev_spearman: None },
                    EpochLog { epoch: 2, loss: 0.25, dev_spearman: Some(0.75) },
                ],
                batch_provenances: Vec::new(),
            }],
            warnings: Vec::new(),
        };
        let tsv = log.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "phase\tepoch\tloss\tdev_spearman");
        assert_eq!(lines[1], "warmup\t1\t0.5\t-");
        assert_eq!(lines[2], "warmup\t2\t0.25\t0.75");
    }
}
