//! Country-level tone counts, joy/sadness indicators, rankings and per-day
//! series.
//!
//! Two readings of the happiness and sadness indicators are reported side by
//! side: the share of a country's tweets carrying the tone (`stated_hi`,
//! `stated_si`), and the joy-to-sadness ratios (`joy_sadness_ratio`,
//! `sadness_joy_ratio`) that published country rankings actually use, e.g.
//! 417 joy / 90 sadness = 4.63.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::NaiveDate;
use serde::Serialize;

use crate::corpus::{ToneLabel, ToneVector, N_TONES};
use crate::error::{Error, Result};
use crate::geoloc::GeoTaggedTweet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountryToneCounts {
    pub country: String,
    /// Distinct tweets, including those with no tone.
    pub total_tweets: u64,
    pub tone_counts: [u64; N_TONES],
}

impl CountryToneCounts {
    pub fn new(country: impl Into<String>) -> Self {
        CountryToneCounts {
            country: country.into(),
            total_tweets: 0,
            tone_counts: [0; N_TONES],
        }
    }

    pub fn add(&mut self, tones: &ToneVector) {
        self.total_tweets += 1;
        for (c, &on) in self.tone_counts.iter_mut().zip(&tones.0) {
            *c += on as u64;
        }
    }

    pub fn merge(&mut self, other: &CountryToneCounts) {
        self.total_tweets += other.total_tweets;
        for (a, b) in self.tone_counts.iter_mut().zip(other.tone_counts) {
            *a += b;
        }
    }

    pub fn count(&self, tone: ToneLabel) -> u64 {
        self.tone_counts[tone.index()]
    }
}

pub type Aggregate = BTreeMap<String, CountryToneCounts>;

pub fn aggregate<'a>(tagged: impl IntoIterator<Item = &'a GeoTaggedTweet>) -> Aggregate {
    let mut out = Aggregate::new();
    for t in tagged {
        out.entry(t.country.clone())
            .or_insert_with(|| CountryToneCounts::new(&t.country))
            .add(&t.tones);
    }
    out
}

pub fn merge_aggregates(mut into: Aggregate, other: &Aggregate) -> Aggregate {
    for (country, counts) in other {
        into.entry(country.clone())
            .or_insert_with(|| CountryToneCounts::new(country))
            .merge(counts);
    }
    into
}

/// Tweets per tone over any collection of tone vectors.
pub fn tone_histogram<'a>(tones: impl IntoIterator<Item = &'a ToneVector>) -> [u64; N_TONES] {
    let mut h = [0; N_TONES];
    for t in tones {
        for (c, &on) in h.iter_mut().zip(&t.0) {
            *c += on as u64;
        }
    }
    h
}

/// `country,total,confident,...,tentative`, one row per country in name order.
pub fn write_counts_csv<W: Write>(out: W, agg: &Aggregate) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["country", "total"];
    header.extend(ToneLabel::ALL.iter().map(|t| t.name()));
    w.write_record(&header)?;
    for c in agg.values() {
        let mut row = vec![c.country.clone(), c.total_tweets.to_string()];
        row.extend(c.tone_counts.iter().map(u64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicatorRow {
    pub country: String,
    pub total: u64,
    pub joy: u64,
    pub sadness: u64,
    pub stated_hi: f64,
    pub stated_si: f64,
    pub joy_sadness_ratio: Option<f64>,
    pub sadness_joy_ratio: Option<f64>,
}

pub fn indicators(counts: &CountryToneCounts) -> Result<IndicatorRow> {
    if counts.total_tweets == 0 {
        return Err(Error::Empty("country tweet total"));
    }
    let joy = counts.count(ToneLabel::Joy);
    let sadness = counts.count(ToneLabel::Sadness);
    let total = counts.total_tweets;
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    Ok(IndicatorRow {
        country: counts.country.clone(),
        total,
        joy,
        sadness,
        stated_hi: joy as f64 / total as f64,
        stated_si: sadness as f64 / total as f64,
        joy_sadness_ratio: ratio(joy, sadness),
        sadness_joy_ratio: ratio(sadness, joy),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndicatorKey {
    StatedHi,
    StatedSi,
    JoySadnessRatio,
    SadnessJoyRatio,
}

impl IndicatorKey {
    pub fn value(self, row: &IndicatorRow) -> Option<f64> {
        match self {
            IndicatorKey::StatedHi => Some(row.stated_hi),
            IndicatorKey::StatedSi => Some(row.stated_si),
            IndicatorKey::JoySadnessRatio => row.joy_sadness_ratio,
            IndicatorKey::SadnessJoyRatio => row.sadness_joy_ratio,
        }
    }
}

pub const DEFAULT_MIN_TOTAL: u64 = 100;
pub const DEFAULT_TOP_N: usize = 10;

/// Countries with `total >= min_total` and a defined key, sorted by key
/// descending then name ascending, truncated to `top_n`.
pub fn rank_countries(
    rows: &[IndicatorRow],
    key: IndicatorKey,
    min_total: u64,
    top_n: usize,
) -> Vec<IndicatorRow> {
    let mut kept: Vec<(f64, &IndicatorRow)> = rows
        .iter()
        .filter(|r| r.total >= min_total)
        .filter_map(|r| key.value(r).map(|v| (v, r)))
        .collect();
    kept.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.country.cmp(&b.1.country))
    });
    kept.into_iter()
        .take(top_n)
        .map(|(_, r)| r.clone())
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `country,total,joy,sadness,stated_hi,stated_si,joy_sadness_ratio,sadness_joy_ratio`
pub fn write_indicator_csv<W: Write>(out: W, rows: &[IndicatorRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "country",
        "total",
        "joy",
        "sadness",
        "stated_hi",
        "stated_si",
        "joy_sadness_ratio",
        "sadness_joy_ratio",
    ])?;
    for r in rows {
        w.write_record([
            r.country.clone(),
            r.total.to_string(),
            r.joy.to_string(),
            r.sadness.to_string(),
            r.stated_hi.to_string(),
            r.stated_si.to_string(),
            fmt_opt(r.joy_sadness_ratio),
            fmt_opt(r.sadness_joy_ratio),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Country label used for the all-countries series.
pub const GLOBAL: &str = "ALL";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeriesPoint {
    pub country: String,
    pub date: NaiveDate,
    pub tone: ToneLabel,
    pub count: u64,
}

/// Per (country, day, tone) counts, dense over the observed date range.
///
/// With `countries = None` every tweet is pooled under [`GLOBAL`]; otherwise
/// one series per listed country, including listed countries with no tweets.
/// Output is ordered by country, date, tone index.
pub fn temporal_series(
    tagged: &[GeoTaggedTweet],
    countries: Option<&[String]>,
) -> Vec<SeriesPoint> {
    let selected: Option<BTreeSet<&str>> =
        countries.map(|cs| cs.iter().map(String::as_str).collect());
    let mut counts: BTreeMap<(&str, NaiveDate), [u64; N_TONES]> = BTreeMap::new();
    let mut range: Option<(NaiveDate, NaiveDate)> = None;
    for t in tagged {
        let key = match &selected {
            None => GLOBAL,
            Some(set) if set.contains(t.country.as_str()) => t.country.as_str(),
            Some(_) => continue,
        };
        let d = t.tweet.posted_at;
        range = Some(range.map_or((d, d), |(lo, hi)| (lo.min(d), hi.max(d))));
        let slot = counts.entry((key, d)).or_insert([0; N_TONES]);
        for (c, &on) in slot.iter_mut().zip(&t.tones.0) {
            *c += on as u64;
        }
    }
    let Some((first, last)) = range else {
        return Vec::new();
    };
    let keys: Vec<&str> = match &selected {
        None => vec![GLOBAL],
        Some(set) => set.iter().copied().collect(),
    };
    let mut out = Vec::new();
    for country in keys {
        for date in first.iter_days().take_while(|d| *d <= last) {
            let c = counts
                .get(&(country, date))
                .copied()
                .unwrap_or([0; N_TONES]);
            for tone in ToneLabel::ALL {
                out.push(SeriesPoint {
                    country: country.to_string(),
                    date,
                    tone,
                    count: c[tone.index()],
                });
            }
        }
    }
    out
}

/// `country,date,tone,count`
pub fn write_series_csv<W: Write>(out: W, points: &[SeriesPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["country", "date", "tone", "count"])?;
    for p in points {
        w.write_record([
            p.country.clone(),
            p.date.to_string(),
            p.tone.name().to_string(),
            p.count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
