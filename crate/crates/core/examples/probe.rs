// scratch probe for training hyperparameters (removed before finalizing)
use aadam_core::corpus::{self, Split};
use aadam_core::evaluation;
use aadam_core::model::{EncoderConfig, ModelGraph, TuningMode};
use aadam_core::synth;
use aadam_core::text::{TokenizeOptions, Vocabulary};
use aadam_core::training::{self, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_pairs: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(2000);
    let lr: f64 = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(1e-3);
    let epochs: usize = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(6);
    let d_model: usize = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(32);
    let n_layers: usize = args.get(5).and_then(|v| v.parse().ok()).unwrap_or(2);
    let n_heads: usize = args.get(6).and_then(|v| v.parse().ok()).unwrap_or(4);
    let min_len: usize = args.get(7).and_then(|v| v.parse().ok()).unwrap_or(3);
    let max_len_s: usize = args.get(8).and_then(|v| v.parse().ok()).unwrap_or(7);
    let seed: u64 = args.get(9).and_then(|v| v.parse().ok()).unwrap_or(17);

    let tokens = synth::synthetic_vocab(200);
    let mut spec = synth::PairSpec::new(n_pairs, 0.05, seed).compressed();
    spec.min_len = min_len;
    spec.max_len = max_len_s;
    let full = synth::related_pairs("aa", Split::Train, &tokens, &spec);
    let (train, dev, test) = corpus::split(&full, (0.9, 0.0, 0.1), seed).unwrap();
    let vocab = Vocabulary::build(&[&full], TokenizeOptions::default(), 1, 400).unwrap();
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        d_model,
        n_layers,
        n_heads,
        d_ff: d_model * 4,
        max_len: 2 * max_len_s + 4,
        adapter_bottleneck: 8,
        dropout: 0.0,
        seed,
    };
    let mut model = ModelGraph::build_encoder(config).unwrap();
    let wd: f64 = args.get(10).and_then(|v| v.parse().ok()).unwrap_or(0.0);
    let mut tc = TrainConfig::new(lr, epochs, TuningMode::Full, seed);
    tc.weight_decay = wd;
    tc.mirror_pairs = true;
    tc.beta2 = args.get(11).and_then(|v| v.parse().ok()).unwrap_or(0.999);
    let start = Instant::now();
    let log = training::train_regression(&mut model, &vocab, &train, Some(&dev), &tc).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    for e in &log.phases[0].epochs {
        println!("epoch {} loss {:.5} dev {:?}", e.epoch, e.loss, e.dev_spearman.map(|r| (r * 100.0).round() / 100.0));
    }
    let preds = model.predict_pairs(&vocab, test.pairs(), TokenizeOptions::default()).unwrap();
    let golds: Vec<f64> = test.pairs().iter().map(|p| p.score).collect();
    let rho = evaluation::spearman(&preds, &golds).unwrap();
    println!("n={n_pairs} lr={lr} ep={epochs} d={d_model} L={n_layers} H={n_heads} len={min_len}-{max_len_s} seed={seed} -> test rho {rho:?} in {elapsed:.1}s");
}
