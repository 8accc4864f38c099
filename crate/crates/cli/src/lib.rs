//! Command-line pipeline: one subcommand per stage, artifacts on disk between
//! stages.
//!
//! Settings come from `--config FILE` (`section.key=value` lines) and may be
//! overridden by `--section.key=value` or `--section.key value` flags.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};
use clap::{Parser, Subcommand};

pub use config::{RunConfig, ToneSource};

#[derive(Debug, Parser)]
#[command(
    name = "tweet-tone",
    version,
    about = "Tweet tone classification and country-level indicators"
)]
struct Cli {
    /// key=value settings file
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Load, filter, sample and label the raw corpus
    Prepare,
    /// Split the prepared dataset, build a vocabulary and train a model
    Train,
    /// Print LRAP and eval loss of a checkpoint on a labeled dataset
    Eval,
    /// Predict tones for a tweet file
    Predict,
    /// Attach countries to tweets and report what was dropped
    Geotag,
    /// Per-country tone counts, indicators and rankings
    Analyze,
    /// Per-day tone series, per country and global
    Report,
}

type Overrides = Vec<(String, String)>;

/// Splits `--section.key[=value]` overrides from the arguments clap sees.
fn split_overrides(argv: Vec<OsString>) -> Result<(Vec<OsString>, Overrides)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut iter = argv.into_iter();
    while let Some(arg) = iter.next() {
        let flag = arg.to_str().and_then(|s| s.strip_prefix("--"));
        match flag {
            Some(body) if body.split('=').next().is_some_and(|k| k.contains('.')) => {
                if let Some((k, v)) = body.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else {
                    let value = iter
                        .next()
                        .and_then(|v| v.into_string().ok())
                        .ok_or_else(|| anyhow!("flag --{body} needs a value"))?;
                    overrides.push((body.to_string(), value));
                }
            }
            _ => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

/// Runs one pipeline command. `argv[0]` is the program name.
pub fn run_command<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let (rest, overrides) = split_overrides(argv.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            bail!("{}", first.trim_start_matches("error: "));
        }
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    std::fs::create_dir_all(&cfg.paths.out_dir)
        .map_err(|e| anyhow!("creating {}: {e}", cfg.paths.out_dir.display()))?;
    match cli.command {
        Command::Prepare => commands::prepare(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::Geotag => commands::geotag(&cfg),
        Command::Analyze => commands::analyze(&cfg),
        Command::Report => commands::report(&cfg),
    }
}
