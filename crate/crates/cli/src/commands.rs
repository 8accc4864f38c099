use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tempfile::NamedTempFile;
use tweet_tone::analytics::{
    aggregate, indicators, rank_countries, temporal_series, tone_histogram, write_counts_csv,
    write_indicator_csv, write_series_csv, IndicatorKey, IndicatorRow,
};
use tweet_tone::corpus::{
    filter_quality, join_labels, load_tweets, read_examples, sample_per_day, write_examples,
    write_rejects, TweetFormat,
};
use tweet_tone::geoloc::{
    geotag as tag_tweets, read_tagged_csv, write_tagged_csv, Gazetteer, GeoTaggedTweet,
};
use tweet_tone::inference::{predict_stream, read_predictions, PredictionWriter};
use tweet_tone::neuralnet::{init_model, load_checkpoint, write_checkpoint};
use tweet_tone::textprep::{build_vocab, Vocabulary};
use tweet_tone::training::{encode_examples, evaluate, split, train as fit};
use tweet_tone::{ModelParams, ToneLabel, ToneVector, TweetRecord};

use crate::config::{existing, require_input, RunConfig, ToneSource};

/// Writes through a temporary file in the destination directory and renames
/// it into place only after `fill` succeeds.
fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
    }
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn load_records(path: &Path) -> Result<Vec<TweetRecord>> {
    let report = load_tweets(path, TweetFormat::from_path(path))
        .with_context(|| format!("loading {}", path.display()))?;
    if !report.rejects.is_empty() {
        eprintln!(
            "{}: skipped {} malformed rows",
            path.display(),
            report.rejects.len()
        );
    }
    Ok(report.records)
}

fn tweet_input(cfg: &RunConfig) -> Result<PathBuf> {
    match &cfg.paths.predict_input {
        Some(p) => existing(p, "paths.predict_input"),
        None => require_input(cfg.paths.corpus.as_deref(), "paths.corpus"),
    }
}

fn load_model(cfg: &RunConfig) -> Result<(ModelParams, Vocabulary)> {
    let ckpt = existing(
        &cfg.or_out(&cfg.paths.checkpoint, "model.ckpt"),
        "paths.checkpoint",
    )?;
    let vocab_path = existing(&cfg.or_out(&cfg.paths.vocab, "vocab.tsv"), "paths.vocab")?;
    let model = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let vocab = Vocabulary::load(&vocab_path)
        .with_context(|| format!("loading {}", vocab_path.display()))?;
    if vocab.len() != model.config.vocab_size {
        bail!(
            "vocabulary {} has {} entries but checkpoint {} expects {}",
            vocab_path.display(),
            vocab.len(),
            ckpt.display(),
            model.config.vocab_size
        );
    }
    Ok((model, vocab))
}

#[derive(Serialize)]
struct PrepareReport {
    loaded: usize,
    rejected: usize,
    after_quality_filter: usize,
    after_sampling: usize,
    labeled: usize,
    unlabeled: usize,
    tone_histogram: BTreeMap<&'static str, u64>,
}

fn named_histogram(hist: [u64; 7]) -> BTreeMap<&'static str, u64> {
    ToneLabel::ALL
        .iter()
        .map(|t| (t.name(), hist[t.index()]))
        .collect()
}

pub fn prepare(cfg: &RunConfig) -> Result<()> {
    let corpus = require_input(cfg.paths.corpus.as_deref(), "paths.corpus")?;
    let labels = require_input(cfg.paths.labels.as_deref(), "paths.labels")?;
    if cfg.per_day == 0 {
        bail!("sample.per_day must be >= 1");
    }
    let loaded = load_tweets(&corpus, TweetFormat::from_path(&corpus))
        .with_context(|| format!("loading {}", corpus.display()))?;
    let filtered = filter_quality(&loaded.records, cfg.min_retweets);
    let sampled = sample_per_day(&filtered, cfg.per_day, cfg.sample_seed);
    let join = join_labels(&sampled, &labels)
        .with_context(|| format!("joining labels from {}", labels.display()))?;

    let report = PrepareReport {
        loaded: loaded.records.len(),
        rejected: loaded.rejects.len(),
        after_quality_filter: filtered.len(),
        after_sampling: sampled.len(),
        labeled: join.examples.len(),
        unlabeled: join.unlabeled.len(),
        tone_histogram: named_histogram(tone_histogram(join.examples.iter().map(|e| &e.labels))),
    };
    write_atomic(&cfg.out("prepared.jsonl"), |w| {
        Ok(write_examples(w, &join.examples)?)
    })?;
    write_atomic(&cfg.out("rejects.jsonl"), |w| {
        Ok(write_rejects(w, &loaded.rejects)?)
    })?;
    write_json(&cfg.out("prepare_report.json"), &report)?;
    println!(
        "prepared {} labeled examples ({} loaded, {} rejected, {} after filter, {} after sampling)",
        report.labeled,
        report.loaded,
        report.rejected,
        report.after_quality_filter,
        report.after_sampling
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let dataset = existing(
        &cfg.or_out(&cfg.paths.dataset, "prepared.jsonl"),
        "paths.dataset",
    )?;
    cfg.train.validate()?;
    let examples =
        read_examples(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let (train_set, test_set) = split(&examples, cfg.train.split_ratio, cfg.train.seed)?;
    let vocab = build_vocab(
        train_set.iter().map(|e| e.tweet.text.as_str()),
        cfg.vocab_max_size,
        cfg.vocab_min_freq,
    )?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = vocab.len();
    let model = init_model(&model_cfg)?;
    let (trained, history) = fit(&model, &train_set, &test_set, &cfg.train, &vocab)?;

    write_atomic(&cfg.out("train.jsonl"), |w| {
        Ok(write_examples(w, &train_set)?)
    })?;
    write_atomic(&cfg.out("test.jsonl"), |w| {
        Ok(write_examples(w, &test_set)?)
    })?;
    write_atomic(&cfg.or_out(&cfg.paths.vocab, "vocab.tsv"), |w| {
        Ok(vocab.write_tsv(w)?)
    })?;
    write_atomic(&cfg.or_out(&cfg.paths.checkpoint, "model.ckpt"), |w| {
        Ok(write_checkpoint(w, &trained)?)
    })?;
    write_atomic(&cfg.out("history.csv"), |w| Ok(history.write_csv(w)?))?;
    match history.last_eval() {
        Some(e) => println!(
            "trained {} steps on {} examples; held-out lrap={} eval_loss={}",
            history.steps.len(),
            train_set.len(),
            e.lrap,
            e.eval_loss
        ),
        None => println!(
            "trained {} steps on {} examples",
            history.steps.len(),
            train_set.len()
        ),
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let dataset = existing(
        &cfg.or_out(&cfg.paths.eval_dataset, "test.jsonl"),
        "paths.eval_dataset",
    )?;
    let (model, vocab) = load_model(cfg)?;
    let examples =
        read_examples(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let data = encode_examples(&examples, &vocab, model.config.max_len)?;
    let point = evaluate(&model, &data)?;
    write_atomic(&cfg.out("eval.csv"), |w| {
        writeln!(w, "metric,value")?;
        writeln!(w, "n_examples,{}", examples.len())?;
        writeln!(w, "lrap,{}", point.lrap)?;
        writeln!(w, "eval_loss,{}", point.eval_loss)?;
        Ok(())
    })?;
    println!("lrap={} eval_loss={}", point.lrap, point.eval_loss);
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let input = tweet_input(cfg)?;
    let (model, vocab) = load_model(cfg)?;
    let tweets = load_records(&input)?;
    let out = cfg.or_out(&cfg.paths.predictions, "predictions.csv");
    let mut n = 0;
    write_atomic(&out, |w| {
        let mut writer = PredictionWriter::new(w)?;
        n = predict_stream(
            &model,
            &vocab,
            &tweets,
            cfg.batch_size,
            cfg.threshold,
            |p| writer.write(&p),
        )?;
        writer.finish()?;
        Ok(())
    })?;
    println!("predicted tones for {n} tweets");
    Ok(())
}

pub fn geotag(cfg: &RunConfig) -> Result<()> {
    let gz = match &cfg.paths.gazetteer {
        Some(p) => {
            let p = existing(p, "paths.gazetteer")?;
            Gazetteer::load(&p).with_context(|| format!("loading gazetteer {}", p.display()))?
        }
        None => Gazetteer::bundled(),
    };
    let items: Vec<(TweetRecord, ToneVector)> = match cfg.tone_source {
        ToneSource::Predictions => {
            let input = tweet_input(cfg)?;
            let pred_path = existing(
                &cfg.or_out(&cfg.paths.predictions, "predictions.csv"),
                "paths.predictions",
            )?;
            let preds = read_predictions(File::open(&pred_path)?)
                .with_context(|| format!("reading {}", pred_path.display()))?;
            load_records(&input)?
                .into_iter()
                .map(|t| match preds.get(&t.tweet_id) {
                    Some(p) => Ok((t, p.tones)),
                    None => bail!(
                        "tweet {} has no prediction in {}",
                        t.tweet_id,
                        pred_path.display()
                    ),
                })
                .collect::<Result<_>>()?
        }
        ToneSource::Labels => {
            let dataset = existing(
                &cfg.or_out(&cfg.paths.dataset, "prepared.jsonl"),
                "paths.dataset",
            )?;
            read_examples(&dataset)?
                .into_iter()
                .map(|e| (e.tweet, e.labels))
                .collect()
        }
    };
    let (tagged, report) = tag_tweets(items, &gz);
    write_atomic(&cfg.or_out(&cfg.paths.tagged, "tagged.csv"), |w| {
        Ok(write_tagged_csv(w, &tagged)?)
    })?;
    write_json(&cfg.out("drop_report.json"), &report)?;
    println!(
        "tagged {} of {} tweets ({} without location, {} unresolved)",
        report.tagged, report.input, report.dropped_missing_location, report.dropped_unresolved
    );
    Ok(())
}

fn load_tagged(cfg: &RunConfig) -> Result<Vec<GeoTaggedTweet>> {
    let path = existing(&cfg.or_out(&cfg.paths.tagged, "tagged.csv"), "paths.tagged")?;
    read_tagged_csv(File::open(&path)?).with_context(|| format!("reading {}", path.display()))
}

pub fn analyze(cfg: &RunConfig) -> Result<()> {
    if cfg.top_n == 0 {
        bail!("analyze.top_n must be >= 1");
    }
    let tagged = load_tagged(cfg)?;
    let agg = aggregate(&tagged);
    let rows: Vec<IndicatorRow> = agg
        .values()
        .map(indicators)
        .collect::<tweet_tone::Result<_>>()?;
    let happiest = rank_countries(
        &rows,
        IndicatorKey::JoySadnessRatio,
        cfg.min_total,
        cfg.top_n,
    );
    let saddest = rank_countries(
        &rows,
        IndicatorKey::SadnessJoyRatio,
        cfg.min_total,
        cfg.top_n,
    );

    write_atomic(&cfg.out("country_tones.csv"), |w| {
        Ok(write_counts_csv(w, &agg)?)
    })?;
    write_atomic(&cfg.out("indicators.csv"), |w| {
        Ok(write_indicator_csv(w, &rows)?)
    })?;
    write_atomic(&cfg.out("happiest.csv"), |w| {
        Ok(write_indicator_csv(w, &happiest)?)
    })?;
    write_atomic(&cfg.out("saddest.csv"), |w| {
        Ok(write_indicator_csv(w, &saddest)?)
    })?;
    println!(
        "{} countries; {} ranked happiest, {} ranked saddest (min_total={})",
        rows.len(),
        happiest.len(),
        saddest.len(),
        cfg.min_total
    );
    Ok(())
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let tagged = load_tagged(cfg)?;
    let countries: Vec<String> = if cfg.report_countries.is_empty() {
        tagged
            .iter()
            .map(|t| t.country.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        cfg.report_countries.clone()
    };
    let per_country = temporal_series(&tagged, Some(&countries));
    let global = temporal_series(&tagged, None);
    write_atomic(&cfg.out("temporal.csv"), |w| {
        Ok(write_series_csv(w, &per_country)?)
    })?;
    write_atomic(&cfg.out("temporal_global.csv"), |w| {
        Ok(write_series_csv(w, &global)?)
    })?;
    println!(
        "wrote series for {} countries and the global total",
        countries.len()
    );
    Ok(())
}
