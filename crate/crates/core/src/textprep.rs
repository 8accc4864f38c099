//! Word-level tokenizer and vocabulary.
//!
//! Text is NFC-normalized and lowercased, then split into maximal runs of
//! non-whitespace, non-punctuation characters. Underscore counts as a word
//! character, and a single leading `#` or `@` stays attached to the word that
//! follows it. Bare punctuation produces no token.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[CLS]"];

/// Upper bound on sequence length.
pub const MAX_SEQ_LEN: usize = 250;
pub const DEFAULT_MAX_LEN: usize = 64;

static WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[#@]?(?:_|[^\s\p{P}])+").expect("static regex"));

pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    WORD.find_iter(&normalized)
        .map(|m| m.as_str().to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Writes `token<TAB>id` lines sorted by id.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(out, "{t}\t{i}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse("vocabulary", line_no, "expected token<TAB>id"))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse("vocabulary", line_no, format!("bad id {id:?}")))?;
            if id != tokens.len() {
                return Err(Error::parse(
                    "vocabulary",
                    line_no,
                    "ids must be contiguous from 0",
                ));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < RESERVED.len() || tokens[..3] != RESERVED {
            return Err(Error::parse("vocabulary", 1, "reserved tokens missing"));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::parse("vocabulary", 0, "duplicate token"));
        }
        Ok(vocab)
    }
}

/// Builds a vocabulary from raw texts.
///
/// Tokens are ranked by frequency (descending) then lexicographically; the
/// top `max_size - 3` with frequency at least `min_freq` get ids from 3.
pub fn build_vocab<I, S>(texts: I, max_size: usize, min_freq: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_size < 4 {
        return Err(Error::InvalidConfig(format!(
            "vocabulary max_size {max_size} < 4"
        )));
    }
    if min_freq < 1 {
        return Err(Error::InvalidConfig(
            "vocabulary min_freq must be >= 1".into(),
        ));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut n_texts = 0usize;
    for text in texts {
        n_texts += 1;
        for tok in tokenize(text.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if n_texts == 0 {
        return Err(Error::Empty("corpus"));
    }
    let mut ranked: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - RESERVED.len());

    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t))
        .collect();
    Ok(Vocabulary::from_tokens(tokens))
}

/// Fixed-length token ids with an attention mask (1 for real tokens).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    if !(1..=MAX_SEQ_LEN).contains(&max_len) {
        return Err(Error::InvalidConfig(format!(
            "max_len {max_len} outside 1..={MAX_SEQ_LEN}"
        )));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend(
        tokenize(text)
            .iter()
            .take(max_len - 1)
            .map(|t| vocab.id(t).unwrap_or(UNK_ID)),
    );
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    let mut mask = vec![0u8; max_len];
    mask[..real].fill(1);
    Ok(TokenSequence { ids, mask })
}
