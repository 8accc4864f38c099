//! Batched tone prediction with strict thresholding.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::corpus::{ToneLabel, ToneVector, TweetRecord, N_TONES};
use crate::error::{Error, Result};
use crate::neuralnet::{forward, ModelParams, ProbVector};
use crate::textprep::{encode, Vocabulary};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TonePrediction {
    pub tweet_id: String,
    pub probs: ProbVector,
    pub tones: ToneVector,
}

/// Sets tone `i` iff `probs[i] > threshold` (strictly).
pub fn assign_tones(probs: &ProbVector, threshold: f64) -> ToneVector {
    ToneVector(probs.0.map(|p| p > threshold))
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "threshold {threshold} outside (0, 1)"
        )))
    }
}

/// Predicts tones batch by batch, handing each prediction to `sink` in input
/// order. Only one batch of sequences is alive at a time.
pub fn predict_stream<'a, I, F>(
    model: &ModelParams,
    vocab: &Vocabulary,
    tweets: I,
    batch_size: usize,
    threshold: f64,
    mut sink: F,
) -> Result<usize>
where
    I: IntoIterator<Item = &'a TweetRecord>,
    F: FnMut(TonePrediction) -> Result<()>,
{
    if vocab.len() != model.config.vocab_size {
        return Err(Error::InvalidConfig(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    check_threshold(threshold)?;

    let mut count = 0;
    let mut pending: Vec<&TweetRecord> = Vec::with_capacity(batch_size);
    let mut flush = |pending: &mut Vec<&TweetRecord>, count: &mut usize| -> Result<()> {
        let seqs = pending
            .iter()
            .map(|t| encode(&t.text, vocab, model.config.max_len))
            .collect::<Result<Vec<_>>>()?;
        for (t, probs) in pending.drain(..).zip(forward(model, &seqs)?) {
            sink(TonePrediction {
                tweet_id: t.tweet_id.clone(),
                probs,
                tones: assign_tones(&probs, threshold),
            })?;
            *count += 1;
        }
        Ok(())
    };
    for t in tweets {
        pending.push(t);
        if pending.len() == batch_size {
            flush(&mut pending, &mut count)?;
        }
    }
    if !pending.is_empty() {
        flush(&mut pending, &mut count)?;
    }
    Ok(count)
}

pub fn predict(
    model: &ModelParams,
    vocab: &Vocabulary,
    tweets: &[TweetRecord],
    batch_size: usize,
    threshold: f64,
) -> Result<Vec<TonePrediction>> {
    let mut out = Vec::with_capacity(tweets.len());
    predict_stream(model, vocab, tweets, batch_size, threshold, |p| {
        out.push(p);
        Ok(())
    })?;
    Ok(out)
}

pub fn prediction_header() -> Vec<String> {
    let mut h = vec!["tweet_id".to_string()];
    h.extend(ToneLabel::ALL.iter().map(|t| format!("p_{}", t.name())));
    h.push("tone_list".to_string());
    h
}

/// CSV writer for `tweet_id,p_confident,...,p_tentative,tone_list`.
pub struct PredictionWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> PredictionWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(prediction_header())?;
        Ok(PredictionWriter { inner })
    }

    pub fn write(&mut self, p: &TonePrediction) -> Result<()> {
        let mut row = vec![p.tweet_id.clone()];
        row.extend(p.probs.0.iter().map(|v| v.to_string()));
        row.push(p.tones.to_tone_list());
        self.inner.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(|e| Error::Csv(e.into()))?;
        self.inner
            .into_inner()
            .map_err(|e| Error::Csv(std::io::Error::other(e.to_string()).into()))
    }
}

/// Reads a predictions CSV back into a `tweet_id → prediction` map.
pub fn read_predictions<R: Read>(input: R) -> Result<HashMap<String, TonePrediction>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    let expected = prediction_header();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::parse("predictions", 1, "unexpected header"));
    }
    let mut out = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let mut probs = [0.0; N_TONES];
        for (k, p) in probs.iter_mut().enumerate() {
            *p = rec[k + 1].parse().map_err(|_| {
                Error::parse(
                    "predictions",
                    line,
                    format!("bad probability {:?}", &rec[k + 1]),
                )
            })?;
        }
        let pred = TonePrediction {
            tweet_id: rec[0].to_string(),
            probs: ProbVector(probs),
            tones: ToneVector::from_tone_list(&rec[N_TONES + 1])?,
        };
        if out.insert(pred.tweet_id.clone(), pred).is_some() {
            return Err(Error::parse(
                "predictions",
                line,
                format!("duplicate tweet_id {:?}", &rec[0]),
            ));
        }
    }
    Ok(out)
}
