//! Gradient, accumulation and batching checks against independent references.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tweet_tone::inference::predict;
use tweet_tone::neuralnet::{batch_loss, init_model, loss_and_grads, ModelConfig};
use tweet_tone::textprep::{build_vocab, TokenSequence, CLS_ID, PAD_ID};
use tweet_tone::training::accumulated_gradient;
use tweet_tone::{ModelParams, ToneVector, TweetRecord};

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 16,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ffn: 16,
        max_len: 4,
        seed,
        ..ModelConfig::default()
    }
}

fn random_batch(
    rng: &mut ChaCha8Rng,
    n: usize,
    cfg: &ModelConfig,
) -> (Vec<TokenSequence>, Vec<ToneVector>) {
    let mut seqs = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..n {
        let real = rng.random_range(1..=cfg.max_len);
        let mut ids = vec![CLS_ID];
        ids.extend((1..real).map(|_| rng.random_range(1..cfg.vocab_size as u32)));
        ids.resize(cfg.max_len, PAD_ID);
        let mask = (0..cfg.max_len).map(|i| u8::from(i < real)).collect();
        seqs.push(TokenSequence { ids, mask });
        targets.push(ToneVector(std::array::from_fn(|_| rng.random_bool(0.4))));
    }
    (seqs, targets)
}

fn flat(params: &ModelParams) -> Vec<f64> {
    params
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>())
        .collect()
}

fn nudge(params: &mut ModelParams, index: usize, delta: f64) {
    let mut seen = 0;
    for (_, mut t) in params.tensors_mut() {
        if index < seen + t.len() {
            *t.iter_mut().nth(index - seen).unwrap() += delta;
            return;
        }
        seen += t.len();
    }
    panic!("index {index} out of range");
}

#[test]
fn analytic_gradients_match_central_differences() {
    let h = 1e-5;
    for seed in 0..5u64 {
        let cfg = tiny_config(seed);
        let params = init_model(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (seqs, targets) = random_batch(&mut rng, 3, &cfg);
        let (_, grads) = loss_and_grads(&params, &seqs, &targets).unwrap();
        let analytic = flat(&grads);
        let mut worst = 0.0f64;
        for (k, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            nudge(&mut plus, k, h);
            let mut minus = params.clone();
            nudge(&mut minus, k, -h);
            let numeric = (batch_loss(&plus, &seqs, &targets).unwrap()
                - batch_loss(&minus, &seqs, &targets).unwrap())
                / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "seed {seed}: max relative error {worst:e}");
    }
}

#[test]
fn accumulated_window_equals_full_batch() {
    let cfg = ModelConfig {
        vocab_size: 40,
        d_model: 16,
        n_heads: 4,
        n_layers: 2,
        d_ffn: 32,
        max_len: 12,
        seed: 9,
        ..ModelConfig::default()
    };
    let params = init_model(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (seqs, targets) = random_batch(&mut rng, 32, &cfg);
    let (full_loss, full) = loss_and_grads(&params, &seqs, &targets).unwrap();
    let windows: Vec<(&[TokenSequence], &[ToneVector])> =
        seqs.chunks(2).zip(targets.chunks(2)).collect();
    assert_eq!(windows.len(), 16);
    let (acc_loss, acc) = accumulated_gradient(&params, &windows).unwrap();
    assert!((full_loss - acc_loss).abs() < 1e-10);
    let max_diff = flat(&full)
        .iter()
        .zip(flat(&acc))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max_diff < 1e-10, "max gradient difference {max_diff:e}");
}

#[test]
fn batch_size_does_not_change_predictions() {
    let words = [
        "stay", "home", "happy", "sad", "#covid19", "@who", "maybe", "data", "virus", "win",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let tweets: Vec<TweetRecord> = (0..100)
        .map(|i| {
            let n = rng.random_range(1..12);
            let text: Vec<&str> = (0..n)
                .map(|_| words[rng.random_range(0..words.len())])
                .collect();
            TweetRecord {
                tweet_id: format!("t{i}"),
                user_id: "u".into(),
                text: text.join(" "),
                retweet_count: 3,
                followers: 0,
                location_text: None,
                posted_at: chrono::NaiveDate::from_ymd_opt(2020, 3, 27).unwrap(),
            }
        })
        .collect();
    let vocab = build_vocab(tweets.iter().map(|t| t.text.as_str()), 64, 1).unwrap();
    let model = init_model(&ModelConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        d_ffn: 32,
        max_len: 16,
        seed: 4,
        ..ModelConfig::default()
    })
    .unwrap();
    let one = predict(&model, &vocab, &tweets, 1, 0.5).unwrap();
    let many = predict(&model, &vocab, &tweets, 32, 0.5).unwrap();
    assert_eq!(one.len(), 100);
    for (a, b) in one.iter().zip(&many) {
        assert_eq!(a.tweet_id, b.tweet_id);
        for (x, y) in a.probs.0.iter().zip(b.probs.0) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a.tones, b.tones);
    }
}
