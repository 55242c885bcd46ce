//! Flat `key=value` run configuration.
//!
//! A config file supplies flag values for one subcommand; flags given on the
//! command line take precedence. Result files embed their configuration as
//! `# config: key=value` lines (JSON reports as a `"config"` object), so any
//! output file can be passed back as `--config` to repeat the run.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

pub const SUBCOMMANDS: [&str; 4] = ["matgen", "gbs", "entangle", "compare"];

/// Ordered `(key, value)` pairs. `key` is the long flag name; the pseudo-key
/// `command` names the subcommand.
pub type Pairs = Vec<(String, String)>;

pub fn read(path: &Path) -> Result<Pairs> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        return from_json(&text);
    }
    let embedded: Vec<&str> = text
        .lines()
        .filter_map(|l| l.trim().strip_prefix('#'))
        .filter_map(|l| l.trim().strip_prefix("config:"))
        .collect();
    if !embedded.is_empty() {
        return embedded.into_iter().enumerate().map(|(i, l)| pair(l, i + 1)).collect();
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim().starts_with('#'))
        .map(|(i, l)| pair(l, i + 1))
        .collect()
}

fn pair(line: &str, line_no: usize) -> Result<(String, String)> {
    let Some((k, v)) = line.split_once('=') else {
        bail!("config line {line_no}: expected key=value, got '{}'", line.trim());
    };
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn from_json(text: &str) -> Result<Pairs> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let Some(obj) = value.get("config").and_then(|c| c.as_object()) else {
        bail!("JSON config needs a \"config\" object");
    };
    Ok(obj
        .iter()
        .map(|(k, v)| {
            let v = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), v)
        })
        .collect())
}

/// Serialize resolved arguments into pairs, `command` first. `None` fields
/// and `false` switches are left out.
pub fn pairs<T: Serialize>(command: &str, args: &T) -> Pairs {
    let mut out = vec![("command".to_string(), command.to_string())];
    if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(args) {
        for (k, v) in map {
            match v {
                serde_json::Value::Null | serde_json::Value::Bool(false) => {}
                serde_json::Value::String(s) => out.push((k, s)),
                other => out.push((k, other.to_string())),
            }
        }
    }
    out
}

pub fn comment_lines(pairs: &Pairs) -> Vec<String> {
    pairs.iter().map(|(k, v)| format!("config: {k}={v}")).collect()
}

pub fn json_object(pairs: &Pairs) -> serde_json::Value {
    serde_json::Value::Object(
        pairs
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect(),
    )
}

/// Splice `--config FILE` into the argument list. Config values go directly
/// after the subcommand name so later command-line flags override them.
pub fn expand_args(args: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut file = None;
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        if arg == "--config" {
            file = Some(iter.next().context("--config needs a file argument")?);
        } else if let Some(f) = arg.strip_prefix("--config=") {
            file = Some(f.to_string());
        } else {
            rest.push(arg);
        }
    }
    let Some(file) = file else {
        return Ok(rest);
    };
    let pairs = read(Path::new(&file))?;
    let mut flags = Vec::new();
    let mut command = None;
    for (k, v) in pairs {
        if k == "command" {
            command = Some(v);
        } else if v == "true" {
            flags.push(format!("--{k}"));
        } else if v != "false" {
            flags.push(format!("--{k}"));
            flags.push(v);
        }
    }
    let position = match rest.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) {
        Some(p) => p + 1,
        None => {
            let Some(command) = command else {
                bail!("config {file} names no subcommand; give one on the command line");
            };
            // Global flags are accepted after the subcommand too.
            rest.insert(1.min(rest.len()), command);
            2.min(rest.len())
        }
    };
    rest.splice(position..position, flags);
    Ok(rest)
}
