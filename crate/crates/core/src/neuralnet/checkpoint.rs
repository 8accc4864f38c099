//! Plain-text checkpoint.
//!
//! ```text
//! tweet-tone-checkpoint 1
//! config vocab_size=16 d_model=8 n_heads=2 n_layers=1 d_ffn=16 max_len=4 n_labels=7 seed=3
//! tensor token_embedding 16 8
//! <one line per row, values in shortest round-trip exponent form>
//! ...
//! end
//! ```
//!
//! Values are written with `{:e}`, which round-trips every finite `f64`
//! exactly, so save then load reproduces the parameters bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{init_model, ModelConfig, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &str = "tweet-tone-checkpoint 1";

pub fn write_checkpoint<W: Write>(mut out: W, params: &ModelParams) -> std::io::Result<()> {
    let c = &params.config;
    writeln!(out, "{MAGIC}")?;
    writeln!(
        out,
        "config vocab_size={} d_model={} n_heads={} n_layers={} d_ffn={} max_len={} n_labels={} seed={}",
        c.vocab_size, c.d_model, c.n_heads, c.n_layers, c.d_ffn, c.max_len, c.n_labels, c.seed
    )?;
    for (name, t) in params.tensors() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(out, "tensor {name} {}", shape.join(" "))?;
        let row_len = *t.shape().last().unwrap_or(&1);
        let values: Vec<f64> = t.iter().copied().collect();
        for row in values.chunks(row_len.max(1)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    writeln!(out, "end")
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&text)
}

pub fn read_checkpoint(text: &str) -> Result<ModelParams> {
    let err = |line: usize, msg: String| Error::parse("checkpoint", line, msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
    };

    let (n, magic) = next("header")?;
    if magic != MAGIC {
        return Err(err(n, format!("bad header {magic:?}")));
    }
    let (n, cfg_line) = next("config")?;
    let fields = cfg_line
        .strip_prefix("config ")
        .ok_or_else(|| err(n, "expected config line".into()))?;
    let mut config = ModelConfig::default();
    for kv in fields.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| err(n, format!("bad config field {kv:?}")))?;
        config.set(k, v)?;
    }
    let mut params = init_model(&config)?;

    for (name, mut tensor) in params.tensors_mut() {
        let (n, header) = next("tensor header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("tensor") || parts.next() != Some(name.as_str()) {
            return Err(err(n, format!("expected tensor {name}, got {header:?}")));
        }
        let shape: Vec<usize> = parts
            .map(|p| {
                p.parse()
                    .map_err(|_| err(n, format!("bad dimension {p:?}")))
            })
            .collect::<Result<_>>()?;
        if shape != tensor.shape() {
            return Err(err(
                n,
                format!(
                    "tensor {name}: shape {shape:?}, expected {:?}",
                    tensor.shape()
                ),
            ));
        }
        let row_len = *shape.last().unwrap_or(&1);
        let rows = tensor.len() / row_len.max(1);
        let mut values = Vec::with_capacity(tensor.len());
        for _ in 0..rows {
            let (n, line) = next("tensor row")?;
            let before = values.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| err(n, format!("bad value {tok:?}")))?;
                if !v.is_finite() {
                    return Err(err(n, format!("non-finite value in {name}")));
                }
                values.push(v);
            }
            if values.len() - before != row_len {
                return Err(err(n, format!("tensor {name}: row has wrong length")));
            }
        }
        for (dst, v) in tensor.iter_mut().zip(values) {
            *dst = v;
        }
    }
    match next("end") {
        Ok((_, "end")) => Ok(params),
        Ok((n, other)) => Err(err(n, format!("expected end, got {other:?}"))),
        Err(e) => Err(e),
    }
}
