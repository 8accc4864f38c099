//! Supervised training: seeded split, Adam, sub-batches with gradient
//! accumulation, and an evaluation history.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{LabeledExample, ToneVector};
use crate::error::{Error, Result};
use crate::metrics::{eval_loss, lrap, EvalBatch};
use crate::neuralnet::{forward, loss_and_grads, ModelParams};
use crate::settings::parse_value;
use crate::textprep::{encode, TokenSequence, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub sub_batch: usize,
    pub grad_accum_steps: usize,
    pub epochs: usize,
    pub split_ratio: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults. The recipe values are kept except the learning
    /// rate, which is 1e-3 for training from scratch instead of the 3e-5 used
    /// when fine-tuning a pretrained encoder.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            sub_batch: 2,
            grad_accum_steps: 16,
            epochs: 3,
            split_ratio: 0.8,
            seed: 0,
            eval_every: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.sub_batch >= 1
            && self.grad_accum_steps >= 1
            && self.split_ratio > 0.0
            && self.split_ratio < 1.0
            && self.eval_every >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid training config {self:?}"
            )))
        }
    }

    /// Applies one `key=value` setting (keys without the `train.` prefix).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" | "lr" => self.learning_rate = parse_value(key, value)?,
            "sub_batch" => self.sub_batch = parse_value(key, value)?,
            "grad_accum_steps" => self.grad_accum_steps = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "split_ratio" => self.split_ratio = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "eps" => self.eps = parse_value(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key train.{key}"))),
        }
        Ok(())
    }
}

/// Seeded shuffle, then the first `floor(ratio * n)` examples train.
pub fn split<T: Clone>(examples: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratio {ratio} outside (0, 1)"
        )));
    }
    let n = examples.len();
    // the small offset keeps e.g. 0.29 * 100 from flooring to 28
    let n_train = ((ratio * n as f64) + 1e-9).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidConfig(format!(
            "split of {n} examples at ratio {ratio} leaves an empty partition"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n_train]
        .iter()
        .map(|&i| examples[i].clone())
        .collect();
    let test = order[n_train..]
        .iter()
        .map(|&i| examples[i].clone())
        .collect();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &ModelParams, hyper: AdamHyper) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            hyper,
        }
    }
}

/// Bias-corrected Adam on flat slices; `t` is the step number after increment.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    hyper: AdamHyper,
) {
    let AdamHyper { beta1, beta2, eps } = hyper;
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam step over every tensor. Non-finite gradients are rejected before
/// anything is modified.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    let param_count = params.tensors().len();
    if grad_tensors.len() != param_count {
        return Err(Error::ShapeMismatch(
            "gradient and parameter tensor counts differ".into(),
        ));
    }
    for (name, g) in &grad_tensors {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.t += 1;
    let t = state.t;
    let hyper = state.hyper;
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((name, mut p), (_, g)), (_, mut m)), (_, mut v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(ms)
        .zip(vs)
    {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!("tensor {name}")));
        }
        let g = g.as_slice().expect("standard layout");
        adam_update(
            p.as_slice_mut().expect("standard layout"),
            g,
            m.as_slice_mut().expect("standard layout"),
            v.as_slice_mut().expect("standard layout"),
            t,
            lr,
            hyper,
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub eval_loss: f64,
    pub lrap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub eval: Option<EvalPoint>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
}

impl TrainHistory {
    /// `step,train_loss,eval_loss,lrap` with empty fields where no evaluation ran.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,train_loss,eval_loss,lrap")?;
        for s in &self.steps {
            match s.eval {
                Some(e) => writeln!(
                    out,
                    "{},{},{},{}",
                    s.step, s.train_loss, e.eval_loss, e.lrap
                )?,
                None => writeln!(out, "{},{},,", s.step, s.train_loss)?,
            }
        }
        Ok(())
    }

    pub fn last_eval(&self) -> Option<EvalPoint> {
        self.steps.iter().rev().find_map(|s| s.eval)
    }
}

pub struct Encoded {
    pub seqs: Vec<TokenSequence>,
    pub targets: Vec<ToneVector>,
}

pub fn encode_examples(
    examples: &[LabeledExample],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Encoded> {
    let seqs = examples
        .iter()
        .map(|e| encode(&e.tweet.text, vocab, max_len))
        .collect::<Result<_>>()?;
    Ok(Encoded {
        seqs,
        targets: examples.iter().map(|e| e.labels).collect(),
    })
}

/// LRAP and mean BCE of the model's probabilities on a labeled set.
pub fn evaluate(params: &ModelParams, data: &Encoded) -> Result<EvalPoint> {
    let probs = forward(params, &data.seqs)?;
    let batch = EvalBatch::from_tones(&data.targets, &probs)?;
    Ok(EvalPoint {
        eval_loss: eval_loss(&batch)?,
        lrap: lrap(&batch)?,
    })
}

/// Averages gradients over consecutive sub-batches, as one accumulation window.
pub fn accumulated_gradient(
    params: &ModelParams,
    sub_batches: &[(&[TokenSequence], &[ToneVector])],
) -> Result<(f64, ModelParams)> {
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (seqs, targets) in sub_batches {
        let (l, g) = loss_and_grads(params, seqs, targets)?;
        total.add_scaled(&g, 1.0);
        loss += l;
    }
    let k = sub_batches.len() as f64;
    total.scale(1.0 / k);
    Ok((loss / k, total))
}

/// Trains `model` on `train`, evaluating on `test` every `eval_every` steps
/// and at the end of each epoch.
///
/// Each epoch shuffles the training set, cuts it into sub-batches of
/// `sub_batch` examples and applies one Adam step per `grad_accum_steps`
/// sub-batches, using their averaged gradient. A shorter trailing window
/// still produces a step.
pub fn train(
    model: &ModelParams,
    train: &[LabeledExample],
    test: &[LabeledExample],
    tcfg: &TrainConfig,
    vocab: &Vocabulary,
) -> Result<(ModelParams, TrainHistory)> {
    tcfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if vocab.len() != model.config.vocab_size {
        return Err(Error::InvalidConfig(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let max_len = model.config.max_len;
    let train_data = encode_examples(train, vocab, max_len)?;
    let test_data = encode_examples(test, vocab, max_len)?;

    let mut params = model.clone();
    let mut history = TrainHistory::default();
    let mut state = AdamState::new(
        &params,
        AdamHyper {
            beta1: tcfg.beta1,
            beta2: tcfg.beta2,
            eps: tcfg.eps,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let window = tcfg.sub_batch * tcfg.grad_accum_steps;

    for epoch in 0..tcfg.epochs {
        order.shuffle(&mut rng);
        let n_windows = order.len().div_ceil(window);
        for (w, chunk) in order.chunks(window).enumerate() {
            let gathered: Vec<(Vec<TokenSequence>, Vec<ToneVector>)> = chunk
                .chunks(tcfg.sub_batch)
                .map(|idx| {
                    (
                        idx.iter().map(|&i| train_data.seqs[i].clone()).collect(),
                        idx.iter().map(|&i| train_data.targets[i]).collect(),
                    )
                })
                .collect();
            let views: Vec<(&[TokenSequence], &[ToneVector])> = gathered
                .iter()
                .map(|(s, t)| (s.as_slice(), t.as_slice()))
                .collect();
            let (loss, grads) = accumulated_gradient(&params, &views)?;
            adam_step(&mut params, &grads, &mut state, tcfg.learning_rate)?;

            let step = history.steps.len() + 1;
            let epoch_end = w + 1 == n_windows;
            let eval = if !test_data.seqs.is_empty() && (step % tcfg.eval_every == 0 || epoch_end) {
                Some(evaluate(&params, &test_data)?)
            } else {
                None
            };
            history.steps.push(StepRecord {
                step,
                epoch: epoch + 1,
                train_loss: loss,
                eval,
            });
        }
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ToneLabel, TweetRecord};
    use crate::neuralnet::{init_model, ModelConfig};
    use crate::textprep::build_vocab;
    use chrono::NaiveDate;

    /// Independent scalar Adam, written out longhand.
    fn scalar_adam(p: f64, grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, p);
        let mut out = Vec::new();
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            out.push(p);
        }
        out
    }

    #[test]
    fn single_scalar_step() {
        let (mut p, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, AdamHyper::default());
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn two_identical_gradients_match_scalar_oracle() {
        let (mut p, mut m, mut v) = ([0.3], [0.0], [0.0]);
        let oracle = scalar_adam(0.3, &[0.7, 0.7], 0.01);
        adam_update(
            &mut p,
            &[0.7],
            &mut m,
            &mut v,
            1,
            0.01,
            AdamHyper::default(),
        );
        assert!((p[0] - oracle[0]).abs() < 1e-12);
        adam_update(
            &mut p,
            &[0.7],
            &mut m,
            &mut v,
            2,
            0.01,
            AdamHyper::default(),
        );
        assert!((p[0] - oracle[1]).abs() < 1e-12);
    }

    fn small_model() -> ModelParams {
        init_model(&ModelConfig {
            vocab_size: 12,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ffn: 8,
            max_len: 6,
            seed: 1,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = small_model();
        let before = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params, AdamHyper::default());
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_step_matches_flat_update_per_tensor() {
        let mut params = small_model();
        let mut grads = params.zeros_like();
        grads.head.bias.fill(1.0);
        let before = params.head.bias[2];
        let mut state = AdamState::new(&params, AdamHyper::default());
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert!((params.head.bias[2] - (before - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut params = small_model();
        let before = params.clone();
        let mut grads = params.zeros_like();
        grads.layers[0].key.weight[[1, 1]] = f64::NAN;
        let mut state = AdamState::new(&params, AdamHyper::default());
        match adam_step(&mut params, &grads, &mut state, 0.1) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "layers.0.key.weight"),
            other => panic!("{other:?}"),
        }
        assert_eq!(params, before);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<u32> = (0..10).collect();
        let (tr, te) = split(&items, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split(&items, 0.8, 3).unwrap(), (tr.clone(), te.clone()));
        let mut all: Vec<_> = tr.iter().chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, items);
        let (tr, te) = split(&items, 0.99, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (9, 1));
        let hundred: Vec<u32> = (0..100).collect();
        assert_eq!(split(&hundred, 0.29, 0).unwrap().0.len(), 29);
        assert!(split(&items, 0.05, 3).is_err());
        assert!(split(&items, 1.0, 3).is_err());
        assert!(split::<u32>(&[], 0.5, 3).is_err());
    }

    fn examples(n: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| LabeledExample {
                tweet: TweetRecord {
                    tweet_id: format!("t{i}"),
                    user_id: "u".into(),
                    text: if i % 2 == 0 {
                        "happy day".into()
                    } else {
                        "sad day".into()
                    },
                    retweet_count: 2,
                    followers: 0,
                    location_text: None,
                    posted_at: NaiveDate::from_ymd_opt(2020, 3, 25).unwrap(),
                },
                labels: ToneVector::from_tones(if i % 2 == 0 {
                    vec![ToneLabel::Joy]
                } else {
                    vec![ToneLabel::Sadness]
                }),
            })
            .collect()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let data = examples(6);
        let vocab = build_vocab(data.iter().map(|e| e.tweet.text.as_str()), 12, 1).unwrap();
        let model = init_model(&ModelConfig {
            vocab_size: vocab.len(),
            ..small_model().config
        })
        .unwrap();
        let tcfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (trained, history) = train(&model, &data, &[], &tcfg, &vocab).unwrap();
        assert_eq!(trained, model);
        assert!(history.steps.is_empty());
    }

    #[test]
    fn one_update_per_window_and_trailing_window() {
        let data = examples(70);
        let vocab = build_vocab(data.iter().map(|e| e.tweet.text.as_str()), 12, 1).unwrap();
        let model = init_model(&ModelConfig {
            vocab_size: vocab.len(),
            ..small_model().config
        })
        .unwrap();
        let tcfg = TrainConfig {
            epochs: 2,
            eval_every: 2,
            ..TrainConfig::default()
        };
        let (_, history) = train(&model, &data, &data[..4], &tcfg, &vocab).unwrap();
        // 70 examples / (2 * 16) = 2 full windows + 1 trailing, per epoch
        assert_eq!(history.steps.len(), 6);
        let steps: Vec<_> = history.steps.iter().map(|s| s.step).collect();
        assert_eq!(steps, [1, 2, 3, 4, 5, 6]);
        let evaluated: Vec<_> = history
            .steps
            .iter()
            .filter(|s| s.eval.is_some())
            .map(|s| s.step)
            .collect();
        assert_eq!(evaluated, [2, 3, 4, 6]);
        for s in &history.steps {
            if let Some(e) = s.eval {
                assert!((0.0..=1.0).contains(&e.lrap));
            }
        }
        let mut csv = Vec::new();
        history.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with("step,train_loss,eval_loss,lrap\n1,"));
        assert!(csv.lines().nth(1).unwrap().ends_with(",,"));
    }

    #[test]
    fn training_is_deterministic() {
        let data = examples(20);
        let vocab = build_vocab(data.iter().map(|e| e.tweet.text.as_str()), 12, 1).unwrap();
        let model = init_model(&ModelConfig {
            vocab_size: vocab.len(),
            ..small_model().config
        })
        .unwrap();
        let tcfg = TrainConfig {
            epochs: 3,
            sub_batch: 2,
            grad_accum_steps: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&model, &data[..16], &data[16..], &tcfg, &vocab).unwrap();
        let b = train(&model, &data[..16], &data[16..], &tcfg, &vocab).unwrap();
        assert_eq!(a, b);
        assert!(a.0.is_finite());
    }

    #[test]
    fn config_keys() {
        let mut c = TrainConfig::default();
        c.set("learning_rate", "3e-5").unwrap();
        c.set("epochs", "7").unwrap();
        assert_eq!(c.learning_rate, 3e-5);
        assert_eq!(c.epochs, 7);
        assert!(c.set("bogus", "1").is_err());
        c.split_ratio = 1.0;
        assert!(c.validate().is_err());
    }
}
