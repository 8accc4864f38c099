//! Tweet ingestion, quality filtering, per-day sampling and label joining.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Number of tone classes.
pub const N_TONES: usize = 7;

/// The seven tone classes, in their fixed index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ToneLabel {
    Confident = 0,
    Anger = 1,
    Fear = 2,
    Joy = 3,
    Sadness = 4,
    Analytical = 5,
    Tentative = 6,
}

impl ToneLabel {
    pub const ALL: [ToneLabel; N_TONES] = [
        ToneLabel::Confident,
        ToneLabel::Anger,
        ToneLabel::Fear,
        ToneLabel::Joy,
        ToneLabel::Sadness,
        ToneLabel::Analytical,
        ToneLabel::Tentative,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ToneLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ToneLabel::Confident => "confident",
            ToneLabel::Anger => "anger",
            ToneLabel::Fear => "fear",
            ToneLabel::Joy => "joy",
            ToneLabel::Sadness => "sadness",
            ToneLabel::Analytical => "analytical",
            ToneLabel::Tentative => "tentative",
        }
    }
}

impl fmt::Display for ToneLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToneLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTone(s.to_string()))
    }
}

/// Binary tone flags indexed by [`ToneLabel`]. All-zero is a valid value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ToneVector(pub [bool; N_TONES]);

impl ToneVector {
    pub fn from_tones(tones: impl IntoIterator<Item = ToneLabel>) -> Self {
        let mut v = ToneVector::default();
        for t in tones {
            v.set(t, true);
        }
        v
    }

    /// Parses tone names; any name outside the seven classes is an error.
    pub fn from_names<S: AsRef<str>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut v = ToneVector::default();
        for name in names {
            v.set(name.as_ref().parse()?, true);
        }
        Ok(v)
    }

    pub fn get(&self, tone: ToneLabel) -> bool {
        self.0[tone.index()]
    }

    pub fn set(&mut self, tone: ToneLabel, on: bool) {
        self.0[tone.index()] = on;
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn tones(&self) -> impl Iterator<Item = ToneLabel> + '_ {
        ToneLabel::ALL.into_iter().filter(|t| self.get(*t))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.tones().map(ToneLabel::name).collect()
    }

    /// Semicolon-joined tone names in index order, as used in CSV outputs.
    pub fn to_tone_list(&self) -> String {
        self.names().join(";")
    }

    pub fn from_tone_list(s: &str) -> Result<Self> {
        Self::from_names(s.split(';').map(str::trim).filter(|t| !t.is_empty()))
    }

    pub fn as_f64(&self) -> [f64; N_TONES] {
        self.0.map(|b| if b { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub user_id: String,
    pub text: String,
    pub retweet_count: u64,
    pub followers: u64,
    pub location_text: Option<String>,
    pub posted_at: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub tweet: TweetRecord,
    pub labels: ToneVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TweetFormat {
    Csv,
    Jsonl,
}

impl TweetFormat {
    /// `.jsonl`/`.json`/`.ndjson` select JSON lines, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => TweetFormat::Jsonl,
            _ => TweetFormat::Csv,
        }
    }
}

/// A quarantined input row. `row` is 1-based over data rows (CSV) or lines (JSONL).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<TweetRecord>,
    pub rejects: Vec<Reject>,
}

pub const TWEET_COLUMNS: [&str; 7] = [
    "tweet_id",
    "user_id",
    "text",
    "retweet_count",
    "followers",
    "location_text",
    "posted_at",
];

/// Loads tweets, quarantining malformed rows into `rejects` instead of failing.
///
/// A missing file or a CSV header without one of [`TWEET_COLUMNS`] is an
/// error. Row-level problems (bad date, empty id or text, bad counts,
/// duplicate id) become rejects whose reason names the offending field.
pub fn load_tweets(path: &Path, format: TweetFormat) -> Result<LoadReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        TweetFormat::Csv => load_csv(file),
        TweetFormat::Jsonl => load_jsonl(BufReader::new(file), path),
    }
}

fn load_csv(file: File) -> Result<LoadReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let mut columns = [0usize; 7];
    for (slot, name) in columns.iter_mut().zip(TWEET_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }

    let mut builder = Collector::default();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let parsed = row
            .map_err(|e| format!("unreadable row: {e}"))
            .and_then(|rec| {
                let field = |k: usize| -> std::result::Result<&str, String> {
                    rec.get(columns[k])
                        .ok_or_else(|| format!("field `{}`: missing", TWEET_COLUMNS[k]))
                };
                let location = field(5)?.trim();
                build_record(
                    field(0)?,
                    field(1)?,
                    field(2)?,
                    parse_count("retweet_count", field(3)?)?,
                    parse_count("followers", field(4)?)?,
                    (!location.is_empty()).then(|| location.to_string()),
                    field(6)?,
                )
            });
        builder.push(row_no, parsed);
    }
    Ok(builder.finish())
}

fn load_jsonl(reader: impl BufRead, path: &Path) -> Result<LoadReport> {
    let mut builder = Collector::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(&line)
            .map_err(|e| format!("invalid JSON: {e}"))
            .and_then(|v| record_from_json(&v));
        builder.push(i + 1, parsed);
    }
    Ok(builder.finish())
}

fn record_from_json(v: &Value) -> std::result::Result<TweetRecord, String> {
    let obj = v.as_object().ok_or("row is not a JSON object")?;
    let string = |k: &str| -> std::result::Result<&str, String> {
        match obj.get(k) {
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(format!("field `{k}`: expected a string")),
            None => Err(format!("field `{k}`: missing")),
        }
    };
    let count = |k: &'static str| -> std::result::Result<u64, String> {
        match obj.get(k) {
            Some(Value::Number(n)) => n
                .as_u64()
                .ok_or_else(|| format!("field `{k}`: expected a non-negative integer, got {n}")),
            Some(Value::String(s)) => parse_count(k, s),
            Some(_) => Err(format!("field `{k}`: expected a non-negative integer")),
            None => Err(format!("field `{k}`: missing")),
        }
    };
    let location = match obj.get("location_text") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.trim().is_empty() => None,
        Some(Value::String(s)) => Some(s.trim().to_string()),
        Some(_) => return Err("field `location_text`: expected a string".into()),
    };
    build_record(
        string("tweet_id")?,
        string("user_id")?,
        string("text")?,
        count("retweet_count")?,
        count("followers")?,
        location,
        string("posted_at")?,
    )
}

fn parse_count(field: &str, raw: &str) -> std::result::Result<u64, String> {
    raw.trim()
        .parse::<u64>()
        .map_err(|_| format!("field `{field}`: expected a non-negative integer, got {raw:?}"))
}

/// Accepts `YYYY-MM-DD` or an RFC 3339 timestamp, bucketed to its UTC day.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok().or_else(|| {
        DateTime::parse_from_rfc3339(raw)
            .ok()
            .map(|dt| dt.with_timezone(&Utc).date_naive())
    })
}

fn build_record(
    tweet_id: &str,
    user_id: &str,
    text: &str,
    retweet_count: u64,
    followers: u64,
    location_text: Option<String>,
    posted_at: &str,
) -> std::result::Result<TweetRecord, String> {
    let tweet_id = tweet_id.trim();
    if tweet_id.is_empty() {
        return Err("field `tweet_id`: empty".into());
    }
    if text.trim().is_empty() {
        return Err("field `text`: empty".into());
    }
    let posted_at = parse_date(posted_at)
        .ok_or_else(|| format!("field `posted_at`: unparseable date {posted_at:?}"))?;
    Ok(TweetRecord {
        tweet_id: tweet_id.to_string(),
        user_id: user_id.trim().to_string(),
        text: text.to_string(),
        retweet_count,
        followers,
        location_text,
        posted_at,
    })
}

#[derive(Default)]
struct Collector {
    seen: HashSet<String>,
    report: LoadReport,
}

impl Collector {
    fn push(&mut self, row: usize, parsed: std::result::Result<TweetRecord, String>) {
        match parsed {
            Ok(rec) if !self.seen.insert(rec.tweet_id.clone()) => {
                self.report.rejects.push(Reject {
                    row,
                    reason: format!("field `tweet_id`: duplicate {:?}", rec.tweet_id),
                })
            }
            Ok(rec) => self.report.records.push(rec),
            Err(reason) => self.report.rejects.push(Reject { row, reason }),
        }
    }

    fn finish(self) -> LoadReport {
        self.report
    }
}

/// Keeps records with `retweet_count >= min_retweets`, in input order.
///
/// The default threshold of 2 is the strict "more than one retweet" filter.
pub fn filter_quality(tweets: &[TweetRecord], min_retweets: u64) -> Vec<TweetRecord> {
    tweets
        .iter()
        .filter(|t| t.retweet_count >= min_retweets)
        .cloned()
        .collect()
}

pub const DEFAULT_MIN_RETWEETS: u64 = 2;
pub const DEFAULT_PER_DAY: usize = 2000;

/// Draws up to `per_day` tweets uniformly without replacement from each day.
///
/// Each day's draw uses its own ChaCha stream (selected by the day number)
/// over the day's tweets ordered by id, so the result depends only on the
/// multiset of records, `per_day` and `seed`. Output is sorted by
/// `(posted_at, tweet_id)`.
pub fn sample_per_day(tweets: &[TweetRecord], per_day: usize, seed: u64) -> Vec<TweetRecord> {
    assert!(per_day >= 1, "per_day must be at least 1");
    let mut by_day: BTreeMap<NaiveDate, Vec<&TweetRecord>> = BTreeMap::new();
    for t in tweets {
        by_day.entry(t.posted_at).or_default().push(t);
    }

    let mut out = Vec::new();
    for (day, mut group) in by_day {
        group.sort_by(|a, b| a.tweet_id.cmp(&b.tweet_id));
        let mut picked: Vec<&TweetRecord> = if group.len() <= per_day {
            group
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(day_number(day));
            rand::seq::index::sample(&mut rng, group.len(), per_day)
                .into_iter()
                .map(|i| group[i])
                .collect()
        };
        picked.sort_by(|a, b| a.tweet_id.cmp(&b.tweet_id));
        out.extend(picked.into_iter().cloned());
    }
    out
}

fn day_number(day: NaiveDate) -> u64 {
    use chrono::Datelike;
    day.num_days_from_ce() as u64
}

#[derive(Debug, Deserialize)]
struct LabelLine {
    tweet_id: String,
    tones: Vec<String>,
}

/// Reads a JSON-lines label file of `{"tweet_id": ..., "tones": [...]}` objects.
pub fn read_labels(path: &Path) -> Result<HashMap<String, ToneVector>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LabelLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse("label file", i + 1, e.to_string()))?;
        let tones = ToneVector::from_names(&parsed.tones)?;
        if labels.insert(parsed.tweet_id.clone(), tones).is_some() {
            return Err(Error::DuplicateLabel(parsed.tweet_id));
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, Default)]
pub struct JoinReport {
    pub examples: Vec<LabeledExample>,
    /// Ids of tweets with no entry in the label file.
    pub unlabeled: Vec<String>,
}

/// Inner join of tweets with a label file on `tweet_id`, in tweet order.
pub fn join_labels(tweets: &[TweetRecord], labels: &Path) -> Result<JoinReport> {
    Ok(join_label_map(tweets, &read_labels(labels)?))
}

pub fn join_label_map(tweets: &[TweetRecord], labels: &HashMap<String, ToneVector>) -> JoinReport {
    let mut report = JoinReport::default();
    for t in tweets {
        match labels.get(&t.tweet_id) {
            Some(&tones) => report.examples.push(LabeledExample {
                tweet: t.clone(),
                labels: tones,
            }),
            None => report.unlabeled.push(t.tweet_id.clone()),
        }
    }
    report
}

#[derive(Serialize, Deserialize)]
struct ExampleLine {
    #[serde(flatten)]
    tweet: TweetRecord,
    tones: Vec<String>,
}

/// Writes labeled examples as JSON lines: the tweet fields plus a `tones` list.
pub fn write_examples<W: Write>(mut out: W, examples: &[LabeledExample]) -> std::io::Result<()> {
    for ex in examples {
        let line = ExampleLine {
            tweet: ex.tweet.clone(),
            tones: ex.labels.names().into_iter().map(String::from).collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<LabeledExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ExampleLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse("example file", i + 1, e.to_string()))?;
        out.push(LabeledExample {
            labels: ToneVector::from_names(&parsed.tones)?,
            tweet: parsed.tweet,
        });
    }
    Ok(out)
}

pub fn write_rejects<W: Write>(mut out: W, rejects: &[Reject]) -> std::io::Result<()> {
    for r in rejects {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes tweets in the canonical CSV column order.
pub fn write_tweets_csv<W: Write>(out: W, tweets: &[TweetRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TWEET_COLUMNS)?;
    for t in tweets {
        let rt = t.retweet_count.to_string();
        let fl = t.followers.to_string();
        let date = t.posted_at.to_string();
        w.write_record([
            t.tweet_id.as_str(),
            t.user_id.as_str(),
            t.text.as_str(),
            rt.as_str(),
            fl.as_str(),
            t.location_text.as_deref().unwrap_or(""),
            date.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
