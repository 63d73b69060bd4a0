// scratch probe for the zero-shot adapter-swap experiment (removed before finalizing)
use aadam_core::augmentation::{augment_semrel, MockTranslator, TranslationClient};
use aadam_core::corpus::{Corpus, Split};
use aadam_core::evaluation;
use aadam_core::model::{EncoderConfig, ModelGraph, TuningMode};
use aadam_core::synth;
use aadam_core::text::{TokenizeOptions, Vocabulary};
use aadam_core::training::{self, MaskPolicy, TrainConfig};
use aadam_core::transfer;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(1);
    let mlm_epochs: usize = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(8);
    let mlm_lr: f64 = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(1e-3);
    let task_epochs: usize = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(10);
    let task_lr: f64 = args.get(5).and_then(|v| v.parse().ok()).unwrap_or(3e-3);
    let n_unlabeled: usize = args.get(6).and_then(|v| v.parse().ok()).unwrap_or(300);
    let n_train: usize = args.get(7).and_then(|v| v.parse().ok()).unwrap_or(800);
    let start = Instant::now();

    let tokens = synth::synthetic_vocab(200);
    let mock = MockTranslator::new(777, tokens.clone());

    // monolingual text: language A uses the vocab's own Zipf order; language
    // B is the mock translation of independent A-distributed text
    let unlabeled_a = synth::unlabeled_sentences("aa", &tokens, n_unlabeled, 8, 19, seed ^ 0x11);
    let raw_b = synth::unlabeled_sentences("aa", &tokens, n_unlabeled, 8, 19, seed ^ 0x22);
    let translated: Vec<String> = raw_b
        .sentences()
        .iter()
        .map(|s| mock.translate(&[s.clone()], "aa", "bb").unwrap().pop().unwrap())
        .collect();
    let unlabeled_b = Corpus::unlabeled("synth-bb-unlabeled", "bb", translated);

    // labeled task data in A; dev pairs in A translated to B via the mock
    let mut train_spec = synth::PairSpec::new(n_train, 0.05, seed ^ 0x33).compressed();
    train_spec.min_len = 4;
    train_spec.max_len = 8;
    let train_a = synth::related_pairs("aa", Split::Train, &tokens, &train_spec);
    let mut dev_spec = synth::PairSpec::new(300, 0.0, seed ^ 0x44).compressed();
    dev_spec.min_len = 4;
    dev_spec.max_len = 8;
    let dev_a = synth::related_pairs("eng", Split::Dev, &tokens, &dev_spec);
    let dev_b = augment_semrel(&dev_a.clone().with_name("dev"), &["bb".to_string()], &mock)
        .unwrap()
        .remove("bb")
        .unwrap();

    // language-neutral pre-training text: independent A-like text plus its
    // translation, mixed
    let neutral_a = synth::unlabeled_sentences("aa", &tokens, n_unlabeled, 8, 19, seed ^ 0x55);
    let neutral_b_raw = synth::unlabeled_sentences("aa", &tokens, n_unlabeled, 8, 19, seed ^ 0x66);
    let mut neutral_sentences: Vec<String> = neutral_a.sentences().to_vec();
    neutral_sentences.extend(
        neutral_b_raw
            .sentences()
            .iter()
            .map(|s| mock.translate(&[s.clone()], "aa", "bb").unwrap().pop().unwrap()),
    );
    let neutral = Corpus::unlabeled("synth-mixed-unlabeled", "mul", neutral_sentences);

    let all = [&unlabeled_a, &unlabeled_b, &train_a, &dev_b, &neutral];
    let vocab = Vocabulary::build(&all, TokenizeOptions::default(), 1, 400).unwrap();

    let config = EncoderConfig {
        vocab_size: vocab.len(),
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        d_ff: 128,
        max_len: 22,
        adapter_bottleneck: 16,
        dropout: 0.0,
        seed,
    };
    let mut base = ModelGraph::build_encoder(config).unwrap();
    let backbone_cfg = TrainConfig {
        beta2: 0.98,
        ..TrainConfig::new(1e-3, 20, TuningMode::Full, seed ^ 0x77)
    };
    let log_bb = training::tapt(&mut base, &vocab, &neutral, &backbone_cfg, &MaskPolicy::default()).unwrap();
    println!(
        "backbone MLM loss: {:.3} -> {:.3}",
        log_bb.phases[0].epochs.first().unwrap().loss,
        log_bb.phases[0].epochs.last().unwrap().loss
    );

    // language adapters, trained independently from the same backbone
    let mlm_config = |s| TrainConfig {
        beta2: 0.98,
        ..TrainConfig::new(mlm_lr, mlm_epochs, TuningMode::LanguageAdapterOnly, s)
    };
    let mut model_a = base.clone();
    model_a.attach_language_adapters("aa").unwrap();
    let log_a = training::tapt(&mut model_a, &vocab, &unlabeled_a, &mlm_config(seed), &MaskPolicy::default()).unwrap();
    let bundle_a = model_a.language_bundle().unwrap();

    let mut model_b = base.clone();
    model_b.attach_language_adapters("bb").unwrap();
    let log_b = training::tapt(&mut model_b, &vocab, &unlabeled_b, &mlm_config(seed), &MaskPolicy::default()).unwrap();
    let bundle_b = model_b.language_bundle().unwrap();
    println!(
        "MLM loss a: {:.3} -> {:.3}; b: {:.3} -> {:.3}",
        log_a.phases[0].epochs.first().unwrap().loss,
        log_a.phases[0].epochs.last().unwrap().loss,
        log_b.phases[0].epochs.first().unwrap().loss,
        log_b.phases[0].epochs.last().unwrap().loss
    );

    // task adapter trained on A only, with A's language adapter fixed
    let mut task_model = base.clone();
    task_model.attach_language_adapters("aa").unwrap();
    task_model.swap_language_adapter(&bundle_a).unwrap();
    task_model.attach_task_adapters("str").unwrap();
    let task_config = TrainConfig {
        weight_decay: 0.01,
        beta2: 0.98,
        mirror_pairs: true,
        ..TrainConfig::new(task_lr, task_epochs, TuningMode::TaskAdapterOnly, seed)
    };
    let log_t = training::train_regression(&mut task_model, &vocab, &train_a, None, &task_config).unwrap();
    println!(
        "task loss: {:.4} -> {:.4}",
        log_t.phases[0].epochs.first().unwrap().loss,
        log_t.phases[0].epochs.last().unwrap().loss
    );

    // sanity: dev performance on A itself
    let preds_a = task_model.predict_pairs(&vocab, dev_a.pairs(), TokenizeOptions::default()).unwrap();
    let golds_a: Vec<f64> = dev_a.pairs().iter().map(|p| p.score).collect();
    println!("dev-A rho {:?}", evaluation::spearman(&preds_a, &golds_a).unwrap());

    let golds: Vec<f64> = dev_b.pairs().iter().map(|p| p.score).collect();
    let retained = transfer::zero_shot_predict(&task_model, &vocab, dev_b.pairs(), "bb", true).unwrap();
    let rho_retained = evaluation::spearman(&retained, &golds).unwrap();

    let mut swapped_model = task_model.clone();
    swapped_model.swap_language_adapter(&bundle_b).unwrap();
    let swapped = transfer::zero_shot_predict(&swapped_model, &vocab, dev_b.pairs(), "bb", false).unwrap();
    let rho_swapped = evaluation::spearman(&swapped, &golds).unwrap();

    println!(
        "seed {seed}: swapped {rho_swapped:?} vs retained {rho_retained:?} ({}) in {:.0}s",
        if rho_swapped > rho_retained { "WIN" } else { "LOSS" },
        start.elapsed().as_secs_f64()
    );
}
