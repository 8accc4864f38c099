//! Corpus, geotagging and aggregation on the bundled fixtures, checked
//! against counts tallied independently when the fixtures were generated.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tweet_tone::analytics::{
    aggregate, merge_aggregates, temporal_series, tone_histogram, Aggregate,
};
use tweet_tone::corpus::{filter_quality, join_labels, load_tweets, sample_per_day, TweetFormat};
use tweet_tone::geoloc::{geotag, Gazetteer, GeoTaggedTweet};
use tweet_tone::textprep::{build_vocab, RESERVED};
use tweet_tone::{LabeledExample, ToneLabel, ToneVector, TweetRecord};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn tweets() -> Vec<TweetRecord> {
    let report = load_tweets(&fixture("tweets_100.csv"), TweetFormat::Csv).unwrap();
    assert!(report.rejects.is_empty());
    report.records
}

fn prepared() -> Vec<LabeledExample> {
    let kept = sample_per_day(&filter_quality(&tweets(), 2), 2000, 0);
    join_labels(&kept, &fixture("labels_100.jsonl"))
        .unwrap()
        .examples
}

fn tagged_prepared() -> Vec<GeoTaggedTweet> {
    let items = prepared().into_iter().map(|e| (e.tweet, e.labels));
    geotag(items, &Gazetteer::bundled()).0
}

#[test]
fn quality_filter_keeps_37() {
    let all = tweets();
    assert_eq!(all.len(), 100);
    let kept = filter_quality(&all, 2);
    assert_eq!(kept.len(), 37);
    assert_eq!(filter_quality(&kept, 2), kept);
    assert_eq!(filter_quality(&all, 0), all);
}

#[test]
fn dirty_fixture_quarantines_five_rows() {
    let report = load_tweets(&fixture("tweets_dirty_100.csv"), TweetFormat::Csv).unwrap();
    assert_eq!(report.records.len(), 95);
    assert_eq!(report.rejects.len(), 5);
    let reasons: Vec<&str> = report.rejects.iter().map(|r| r.reason.as_str()).collect();
    for field in [
        "tweet_id",
        "posted_at",
        "retweet_count",
        "text",
        "followers",
    ] {
        assert!(
            reasons.iter().any(|r| r.contains(field)),
            "no reject names {field}: {reasons:?}"
        );
    }
}

#[test]
fn sampling_keeps_undersized_days_and_labels_join() {
    let kept = sample_per_day(&filter_quality(&tweets(), 2), 2000, 0);
    let mut per_day: BTreeMap<String, usize> = BTreeMap::new();
    for t in &kept {
        *per_day.entry(t.posted_at.to_string()).or_default() += 1;
    }
    let expected = [3, 5, 5, 6, 6, 6, 6];
    assert_eq!(per_day.values().copied().collect::<Vec<_>>(), expected);

    let join = join_labels(&kept, &fixture("labels_100.jsonl")).unwrap();
    assert_eq!(join.examples.len(), 33);
    assert_eq!(join.unlabeled.len(), 4);

    let capped = sample_per_day(&kept, 4, 11);
    assert_eq!(capped.len(), 3 + 4 * 6);
    assert_eq!(capped, sample_per_day(&kept, 4, 11));
}

#[test]
fn tone_histogram_matches_label_multiset() {
    let examples = prepared();
    let hist = tone_histogram(examples.iter().map(|e| &e.labels));
    assert_eq!(hist, [6, 3, 9, 12, 4, 10, 6]);
    let mut multiset = [0u64; 7];
    for e in &examples {
        for tone in e.labels.tones() {
            multiset[tone.index()] += 1;
        }
    }
    assert_eq!(hist, multiset);
}

#[test]
fn vocabulary_of_fifty_from_independent_recount() {
    let texts: Vec<String> = tweets().into_iter().map(|t| t.text).collect();
    let vocab = build_vocab(texts.iter().map(String::as_str), 50, 1).unwrap();
    assert_eq!(vocab.len(), 50);
    assert_eq!(&vocab.tokens()[..3], RESERVED);

    // fixture texts are lowercase words separated by single spaces
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for t in &texts {
        for w in t.split(' ') {
            *freq.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    assert!(ranked.len() > 47, "fixture too small for the check");
    let admitted: Vec<&str> = ranked[..47].iter().map(|r| r.0).collect();
    assert_eq!(&vocab.tokens()[3..], admitted.as_slice());
    assert!(ranked[46].1 >= ranked[47].1);
}

#[test]
fn bundled_gazetteer_is_conflict_free() {
    let gz = Gazetteer::parse_tsv(tweet_tone::geoloc::BUNDLED_GAZETTEER).unwrap();
    assert!(
        gz.countries().len() >= 249,
        "{} countries",
        gz.countries().len()
    );
    for country in [
        "Spain",
        "Germany",
        "France",
        "Cayman Islands",
        "Ghana",
        "Ireland",
        "Holy See",
        "New Caledonia",
        "Mongolia",
        "Macao",
        "Botswana",
        "Namibia",
        "Kenya",
        "Zambia",
        "Iceland",
        "Japan",
        "Zimbabwe",
        "Nepal",
        "Tonga",
        "Norway",
    ] {
        assert!(gz.countries().contains(country), "{country}");
    }
    for (capital, country) in [
        ("Madrid", "Spain"),
        ("Berlin", "Germany"),
        ("Paris", "France"),
        ("George Town", "Cayman Islands"),
        ("Accra", "Ghana"),
        ("Dublin", "Ireland"),
        ("Vatican City", "Holy See"),
        ("Nouméa", "New Caledonia"),
        ("Ulaanbaatar", "Mongolia"),
        ("Macau", "Macao"),
        ("Gaborone", "Botswana"),
        ("Windhoek", "Namibia"),
        ("Nairobi", "Kenya"),
        ("Lusaka", "Zambia"),
        ("Reykjavík", "Iceland"),
        ("Tokyo", "Japan"),
        ("Harare", "Zimbabwe"),
        ("Kathmandu", "Nepal"),
        ("Nuku'alofa", "Tonga"),
        ("Oslo", "Norway"),
    ] {
        assert_eq!(gz.resolve(capital), Some(country), "{capital}");
    }
}

#[test]
fn geotag_drop_counts_on_raw_fixture() {
    let items = tweets().into_iter().map(|t| (t, ToneVector::default()));
    let (tagged, report) = geotag(items, &Gazetteer::bundled());
    assert_eq!(report.input, 100);
    assert_eq!(report.dropped_missing_location, 7);
    assert_eq!(report.dropped_unresolved, 30);
    assert_eq!(tagged.len(), 63);
}

#[test]
fn per_country_tone_counts_match_hand_tally() {
    let agg = aggregate(&tagged_prepared());
    // country, total, then tone counts in label order
    let expected: [(&str, u64, [u64; 7]); 7] = [
        ("Botswana", 1, [0, 0, 0, 1, 0, 1, 0]),
        ("Germany", 7, [1, 1, 1, 2, 1, 1, 1]),
        ("Japan", 3, [1, 0, 1, 0, 0, 0, 0]),
        ("Kenya", 2, [1, 1, 0, 2, 0, 0, 0]),
        ("Spain", 5, [0, 0, 0, 2, 0, 2, 2]),
        ("United Kingdom", 3, [1, 0, 2, 1, 1, 0, 1]),
        ("United States", 3, [1, 0, 2, 0, 1, 1, 2]),
    ];
    assert_eq!(agg.len(), expected.len());
    for (country, total, tones) in expected {
        let c = &agg[country];
        assert_eq!(c.total_tweets, total, "{country}");
        assert_eq!(c.tone_counts, tones, "{country}");
    }
}

fn shard_aggregate(tagged: &[GeoTaggedTweet], rng: &mut ChaCha8Rng) -> Aggregate {
    let mut shuffled = tagged.to_vec();
    shuffled.shuffle(rng);
    let mut cuts: Vec<usize> = (0..3)
        .map(|_| rng.random_range(0..=shuffled.len()))
        .collect();
    cuts.sort_unstable();
    let bounds = [0, cuts[0], cuts[1], cuts[2], shuffled.len()];
    let shards: Vec<Aggregate> = bounds
        .windows(2)
        .map(|w| aggregate(&shuffled[w[0]..w[1]]))
        .collect();
    // ((a + b) + (c + d)) to exercise grouping as well as order
    let left = merge_aggregates(shards[0].clone(), &shards[1]);
    let right = merge_aggregates(shards[2].clone(), &shards[3]);
    merge_aggregates(left, &right)
}

#[test]
fn sharded_aggregation_equals_whole() {
    let items = tweets().into_iter().map(|t| {
        let n = t.tweet_id.len() + t.text.len();
        (t, ToneVector(std::array::from_fn(|i| (n >> i) & 1 == 1)))
    });
    let (tagged, _) = geotag(items, &Gazetteer::bundled());
    let whole = aggregate(&tagged);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        assert_eq!(shard_aggregate(&tagged, &mut rng), whole);
    }
}

#[test]
fn temporal_series_sums_to_aggregate() {
    let tagged = tagged_prepared();
    let agg = aggregate(&tagged);
    let countries: Vec<String> = agg.keys().cloned().collect();
    let series = temporal_series(&tagged, Some(&countries));
    assert_eq!(series.len(), countries.len() * 7 * 7);
    let mut sums: BTreeMap<(String, ToneLabel), u64> = BTreeMap::new();
    for p in &series {
        *sums.entry((p.country.clone(), p.tone)).or_default() += p.count;
    }
    for (country, counts) in &agg {
        for tone in ToneLabel::ALL {
            assert_eq!(sums[&(country.clone(), tone)], counts.count(tone));
        }
    }
    let global = temporal_series(&tagged, None);
    let hist = tone_histogram(tagged.iter().map(|t| &t.tones));
    for tone in ToneLabel::ALL {
        let total: u64 = global
            .iter()
            .filter(|p| p.tone == tone)
            .map(|p| p.count)
            .sum();
        assert_eq!(total, hist[tone.index()]);
    }
}
