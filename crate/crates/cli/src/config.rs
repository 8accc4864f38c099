use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tweet_tone::analytics::{DEFAULT_MIN_TOTAL, DEFAULT_TOP_N};
use tweet_tone::corpus::{DEFAULT_MIN_RETWEETS, DEFAULT_PER_DAY};
use tweet_tone::inference::{DEFAULT_BATCH_SIZE, DEFAULT_THRESHOLD};
use tweet_tone::settings::{parse_kv, parse_value};
use tweet_tone::training::TrainConfig;
use tweet_tone::ModelConfig;

/// Where geotag takes each tweet's tones from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToneSource {
    Predictions,
    Labels,
}

#[derive(Debug, Clone, Default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub eval_dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub predict_input: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub tagged: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab_max_size: usize,
    pub vocab_min_freq: usize,
    pub per_day: usize,
    pub min_retweets: u64,
    pub sample_seed: u64,
    pub threshold: f64,
    pub batch_size: usize,
    pub tone_source: ToneSource,
    pub min_total: u64,
    pub top_n: usize,
    pub report_countries: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths {
                out_dir: PathBuf::from("out"),
                ..Paths::default()
            },
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            vocab_max_size: 8000,
            vocab_min_freq: 1,
            per_day: DEFAULT_PER_DAY,
            min_retweets: DEFAULT_MIN_RETWEETS,
            sample_seed: 0,
            threshold: DEFAULT_THRESHOLD,
            batch_size: DEFAULT_BATCH_SIZE,
            tone_source: ToneSource::Predictions,
            min_total: DEFAULT_MIN_TOTAL,
            top_n: DEFAULT_TOP_N,
            report_countries: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file (if any), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (k, v) in
                parse_kv(&text).with_context(|| format!("in config {}", path.display()))?
            {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v).with_context(|| format!("flag --{k}"))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let Some((section, name)) = key.split_once('.') else {
            bail!("invalid config key {key:?}: expected section.name");
        };
        let path = || Some(PathBuf::from(value));
        match section {
            "model" => self.model.set(name, value)?,
            "train" => self.train.set(name, value)?,
            "vocab" => match name {
                "max_size" => self.vocab_max_size = parse_value(key, value)?,
                "min_freq" => self.vocab_min_freq = parse_value(key, value)?,
                _ => bail!("unknown config key {key}"),
            },
            "sample" => match name {
                "per_day" => self.per_day = parse_value(key, value)?,
                "min_retweets" => self.min_retweets = parse_value(key, value)?,
                "seed" => self.sample_seed = parse_value(key, value)?,
                _ => bail!("unknown config key {key}"),
            },
            "infer" => match name {
                "threshold" => self.threshold = parse_value(key, value)?,
                "batch_size" => self.batch_size = parse_value(key, value)?,
                _ => bail!("unknown config key {key}"),
            },
            "geotag" => match (name, value) {
                ("source", "predictions") => self.tone_source = ToneSource::Predictions,
                ("source", "labels") => self.tone_source = ToneSource::Labels,
                ("source", _) => {
                    bail!("geotag.source must be `predictions` or `labels`, got {value:?}")
                }
                _ => bail!("unknown config key {key}"),
            },
            "analyze" => match name {
                "min_total" => self.min_total = parse_value(key, value)?,
                "top_n" => self.top_n = parse_value(key, value)?,
                _ => bail!("unknown config key {key}"),
            },
            "report" => match name {
                "countries" => {
                    self.report_countries = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                _ => bail!("unknown config key {key}"),
            },
            "paths" => match name {
                "corpus" => self.paths.corpus = path(),
                "labels" => self.paths.labels = path(),
                "gazetteer" => self.paths.gazetteer = path(),
                "out_dir" => self.paths.out_dir = PathBuf::from(value),
                "dataset" => self.paths.dataset = path(),
                "eval_dataset" => self.paths.eval_dataset = path(),
                "checkpoint" => self.paths.checkpoint = path(),
                "vocab" => self.paths.vocab = path(),
                "predict_input" => self.paths.predict_input = path(),
                "predictions" => self.paths.predictions = path(),
                "tagged" => self.paths.tagged = path(),
                _ => bail!("unknown config key {key}"),
            },
            _ => bail!("unknown config section {section:?} in {key}"),
        }
        Ok(())
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.paths.out_dir.join(file)
    }

    /// An explicitly configured path, or `file` inside the output directory.
    pub fn or_out(&self, explicit: &Option<PathBuf>, file: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out(file))
    }
}

/// Fails unless `path` is set and exists.
pub fn require_input(path: Option<&Path>, key: &str) -> Result<PathBuf> {
    let Some(path) = path else {
        bail!("missing input: set {key} in the config or pass --{key}");
    };
    existing(path, key)
}

pub fn existing(path: &Path, key: &str) -> Result<PathBuf> {
    if !path.exists() {
        bail!("{key}: {} does not exist", path.display());
    }
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.conf");
        std::fs::write(
            &file,
            "model.d_model=32\ntrain.epochs=7 # short run\nreport.countries=Spain, Kenya\n",
        )
        .unwrap();
        let cfg = RunConfig::resolve(Some(&file), &[("train.epochs".into(), "2".into())]).unwrap();
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.report_countries, ["Spain", "Kenya"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("model.depth", "3").is_err());
        assert!(cfg.set("nosection", "3").is_err());
        assert!(cfg.set("infer.threshold", "high").is_err());
        assert!(cfg.set("geotag.source", "guess").is_err());
    }
}
