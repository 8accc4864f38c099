//! `key=value` configuration files.
//!
//! One setting per line, `#` starts a comment, keys carry a section prefix
//! such as `model.d_model` or `train.epochs`.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::parse("config", i + 1, format!("expected key=value, got {line:?}"))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_value<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key}={value}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = parse_kv("# header\nmodel.d_model = 32\n\ntrain.epochs=3 # short run\n").unwrap();
        assert_eq!(
            kv,
            [
                ("model.d_model".to_string(), "32".to_string()),
                ("train.epochs".to_string(), "3".to_string())
            ]
        );
        assert!(parse_kv("novalue\n").is_err());
        assert!(parse_value::<usize>("k", "x").is_err());
    }
}
