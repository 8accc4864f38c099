//! Gazetteer-based resolution of free-text profile locations to countries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{parse_date, ToneVector, TweetRecord, TWEET_COLUMNS};
use crate::error::{Error, Result};

/// Alias → country table shipped with the crate.
pub const BUNDLED_GAZETTEER: &str = include_str!("../data/gazetteer.tsv");

/// Lowercases, strips everything except letters, digits, whitespace and
/// hyphens, and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let cleaned: String = text
        .nfc()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace() || *c == '-')
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    aliases: HashMap<String, String>,
    countries: BTreeSet<String>,
}

impl Gazetteer {
    /// Builds from `(alias, country)` pairs. Re-stating an alias for the same
    /// country is fine; mapping it to a second country is an error.
    pub fn from_entries<A, C>(entries: impl IntoIterator<Item = (A, C)>) -> Result<Self>
    where
        A: AsRef<str>,
        C: AsRef<str>,
    {
        let mut gz = Gazetteer::default();
        for (alias, country) in entries {
            gz.insert(alias.as_ref(), country.as_ref())?;
        }
        if gz.aliases.is_empty() {
            return Err(Error::Empty("gazetteer"));
        }
        Ok(gz)
    }

    fn insert(&mut self, alias: &str, country: &str) -> Result<()> {
        let key = normalize(alias);
        let country = country.trim();
        if key.is_empty() || country.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "blank gazetteer entry {alias:?} -> {country:?}"
            )));
        }
        match self.aliases.get(&key) {
            Some(existing) if existing != country => {
                return Err(Error::ConflictingAlias {
                    alias: key,
                    first: existing.clone(),
                    second: country.to_string(),
                })
            }
            Some(_) => {}
            None => {
                self.aliases.insert(key, country.to_string());
            }
        }
        self.countries.insert(country.to_string());
        Ok(())
    }

    /// Parses `alias<TAB>country` lines; `#` lines and blank lines are skipped.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (alias, country) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse("gazetteer", i + 1, "expected alias<TAB>country"))?;
            entries.push((alias.to_string(), country.to_string()));
        }
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    pub fn bundled() -> Self {
        Self::parse_tsv(BUNDLED_GAZETTEER).expect("bundled gazetteer is valid")
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }

    pub fn countries(&self) -> &BTreeSet<String> {
        &self.countries
    }

    pub fn lookup(&self, normalized_alias: &str) -> Option<&str> {
        self.aliases.get(normalized_alias).map(String::as_str)
    }

    /// Comma segments are tried right to left; inside a segment the whole
    /// segment first, then word n-grams from longest to shortest (rightmost
    /// first among equal lengths). The first hit wins.
    pub fn resolve(&self, location_text: &str) -> Option<&str> {
        for segment in location_text.rsplit(',') {
            let seg = normalize(segment);
            if seg.is_empty() {
                continue;
            }
            let words: Vec<&str> = seg.split(' ').collect();
            for n in (1..=words.len()).rev() {
                for start in (0..=words.len() - n).rev() {
                    if let Some(c) = self.lookup(&words[start..start + n].join(" ")) {
                        return Some(c);
                    }
                }
            }
        }
        None
    }
}

pub fn resolve_location<'g>(location_text: &str, gz: &'g Gazetteer) -> Option<&'g str> {
    gz.resolve(location_text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeoTaggedTweet {
    pub tweet: TweetRecord,
    pub tones: ToneVector,
    pub country: String,
}

/// How many unresolved strings a drop report keeps as examples.
pub const UNRESOLVED_SAMPLE: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DropReport {
    pub input: usize,
    pub tagged: usize,
    pub dropped: usize,
    pub dropped_missing_location: usize,
    pub dropped_unresolved: usize,
    /// Most frequent unresolved location strings (count desc, text asc).
    pub unresolved_samples: Vec<(String, usize)>,
}

/// Attaches a country to every tweet whose location resolves; the rest are
/// dropped and counted, missing and unresolvable locations separately.
pub fn geotag(
    items: impl IntoIterator<Item = (TweetRecord, ToneVector)>,
    gz: &Gazetteer,
) -> (Vec<GeoTaggedTweet>, DropReport) {
    let mut tagged = Vec::new();
    let mut report = DropReport::default();
    let mut unresolved: BTreeMap<String, usize> = BTreeMap::new();
    for (tweet, tones) in items {
        report.input += 1;
        let location = tweet.location_text.as_deref().map(str::trim).unwrap_or("");
        if location.is_empty() {
            report.dropped_missing_location += 1;
            continue;
        }
        match gz.resolve(location) {
            Some(country) => tagged.push(GeoTaggedTweet {
                country: country.to_string(),
                tweet,
                tones,
            }),
            None => {
                report.dropped_unresolved += 1;
                *unresolved.entry(location.to_string()).or_default() += 1;
            }
        }
    }
    report.tagged = tagged.len();
    report.dropped = report.dropped_missing_location + report.dropped_unresolved;
    let mut samples: Vec<_> = unresolved.into_iter().collect();
    samples.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    samples.truncate(UNRESOLVED_SAMPLE);
    report.unresolved_samples = samples;
    (tagged, report)
}

/// Writes tagged tweets as CSV: the tweet columns, then `country,tone_list`.
pub fn write_tagged_csv<W: Write>(out: W, tagged: &[GeoTaggedTweet]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = TWEET_COLUMNS.to_vec();
    header.extend(["country", "tone_list"]);
    w.write_record(&header)?;
    for g in tagged {
        let t = &g.tweet;
        w.write_record([
            t.tweet_id.clone(),
            t.user_id.clone(),
            t.text.clone(),
            t.retweet_count.to_string(),
            t.followers.to_string(),
            t.location_text.clone().unwrap_or_default(),
            t.posted_at.to_string(),
            g.country.clone(),
            g.tones.to_tone_list(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Reads the output of [`write_tagged_csv`]. Any malformed row is an error.
pub fn read_tagged_csv<R: Read>(input: R) -> Result<Vec<GeoTaggedTweet>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    let expected: Vec<&str> = TWEET_COLUMNS
        .iter()
        .copied()
        .chain(["country", "tone_list"])
        .collect();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::parse("tagged tweets", 1, "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let count = |k: usize| {
            rec[k].parse::<u64>().map_err(|_| {
                Error::parse(
                    "tagged tweets",
                    line,
                    format!("bad {} {:?}", TWEET_COLUMNS[k], &rec[k]),
                )
            })
        };
        let posted_at = parse_date(&rec[6]).ok_or_else(|| {
            Error::parse(
                "tagged tweets",
                line,
                format!("bad posted_at {:?}", &rec[6]),
            )
        })?;
        out.push(GeoTaggedTweet {
            tweet: TweetRecord {
                tweet_id: rec[0].to_string(),
                user_id: rec[1].to_string(),
                text: rec[2].to_string(),
                retweet_count: count(3)?,
                followers: count(4)?,
                location_text: (!rec[5].is_empty()).then(|| rec[5].to_string()),
                posted_at,
            },
            tones: ToneVector::from_tone_list(&rec[8])?,
            country: rec[7].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn gz() -> Gazetteer {
        Gazetteer::from_entries([
            ("Spain", "Spain"),
            ("España", "Spain"),
            ("Madrid", "Spain"),
            ("Gaborone", "Botswana"),
            ("United Kingdom", "United Kingdom"),
            ("New York", "United States"),
            ("York", "United Kingdom"),
            ("Bosnia-Herzegovina", "Bosnia and Herzegovina"),
        ])
        .unwrap()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("  St. Louis,\tMO  "), "st louis mo");
        assert_eq!(normalize("U.S.A."), "usa");
        assert_eq!(normalize("Guinea-Bissau!"), "guinea-bissau");
        assert_eq!(normalize("ESPAÑA"), "españa");
    }

    #[test]
    fn aliases_for_one_country() {
        let g = Gazetteer::parse_tsv("# comment\nespaña\tSpain\nspain\tSpain\n").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.countries().len(), 1);
    }

    #[test]
    fn conflicting_alias_is_an_error() {
        let err = Gazetteer::parse_tsv("georgia\tGeorgia\ngeorgia\tUnited States\n").unwrap_err();
        assert!(matches!(err, Error::ConflictingAlias { .. }));
        assert!(matches!(
            Gazetteer::parse_tsv("# only comments\n"),
            Err(Error::Empty(_))
        ));
        assert!(Gazetteer::parse_tsv("no tab here\n").is_err());
    }

    #[test]
    fn resolution_order() {
        let g = gz();
        assert_eq!(g.resolve("Madrid, Spain"), Some("Spain"));
        assert_eq!(g.resolve("Gaborone"), Some("Botswana"));
        assert_eq!(g.resolve("living in new york city"), Some("United States"));
        assert_eq!(g.resolve("York, United Kingdom"), Some("United Kingdom"));
        assert_eq!(
            g.resolve("bosnia-herzegovina"),
            Some("Bosnia and Herzegovina")
        );
        assert_eq!(g.resolve("Spain ,  "), Some("Spain"));
        assert_eq!(g.resolve(""), None);
        assert_eq!(g.resolve("the moon 🌙"), None);
    }

    fn tweet(id: &str, loc: Option<&str>) -> TweetRecord {
        TweetRecord {
            tweet_id: id.into(),
            user_id: "u".into(),
            text: "x".into(),
            retweet_count: 2,
            followers: 0,
            location_text: loc.map(String::from),
            posted_at: NaiveDate::from_ymd_opt(2020, 3, 25).unwrap(),
        }
    }

    #[test]
    fn geotag_drops_and_counts() {
        let items = vec![
            (tweet("a", Some("Madrid")), ToneVector::default()),
            (tweet("b", None), ToneVector::default()),
            (tweet("c", Some("   ")), ToneVector::default()),
            (
                tweet("d", Some("Gaborone, Botswana")),
                ToneVector::default(),
            ),
            (tweet("e", Some("somewhere")), ToneVector::default()),
        ];
        let (tagged, report) = geotag(items, &gz());
        assert_eq!(tagged.len(), 2);
        assert_eq!(report.dropped_missing_location, 2);
        assert_eq!(report.dropped_unresolved, 1);
        assert_eq!(report.dropped + report.tagged, report.input);
        assert_eq!(report.unresolved_samples, [("somewhere".to_string(), 1)]);
        assert_eq!(tagged[1].country, "Botswana");
    }

    #[test]
    fn tagged_csv_round_trip() {
        let items = vec![
            (
                tweet("a", Some("Madrid, Spain")),
                ToneVector::from_names(["joy", "fear"]).unwrap(),
            ),
            (tweet("d", Some("Gaborone")), ToneVector::default()),
        ];
        let (tagged, _) = geotag(items, &gz());
        let mut buf = Vec::new();
        write_tagged_csv(&mut buf, &tagged).unwrap();
        assert_eq!(read_tagged_csv(buf.as_slice()).unwrap(), tagged);
        assert!(read_tagged_csv("tweet_id,country\n".as_bytes()).is_err());
    }

    #[test]
    fn all_unresolvable() {
        let items = vec![
            (tweet("a", Some("mars")), ToneVector::default()),
            (tweet("b", Some("venus")), ToneVector::default()),
        ];
        let (tagged, report) = geotag(items, &gz());
        assert!(tagged.is_empty());
        assert_eq!(report.dropped, 2);
    }

    proptest! {
        #[test]
        fn resolution_is_case_insensitive(s in "[a-zA-Z ,.ñ]{0,30}") {
            let g = gz();
            prop_assert_eq!(g.resolve(&s), g.resolve(&s.to_uppercase()));
            if let Some(c) = g.resolve(&s) {
                prop_assert!(g.countries().contains(c));
            }
        }
    }
}
