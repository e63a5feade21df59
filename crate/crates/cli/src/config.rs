//! Flat `key=value` configuration files and the config echo written next to
//! every artifact.
//!
//! A config file is merged by turning each entry into a `--key value` pair
//! placed ahead of the command-line flags; since every subcommand lets later
//! occurrences override earlier ones, explicit flags win.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use btc_core::{Error, Result};
use serde::Serialize;

/// Keys that describe the run rather than a flag.
const RESERVED: &[&str] = &["command"];

pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut entries = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k as u64 + 1,
                msg: format!("expected key=value, found {line:?}"),
            });
        };
        let key = key.trim();
        if !RESERVED.contains(&key) {
            entries.push((key.to_string(), value.trim().to_string()));
        }
    }
    Ok(entries)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Inserts the entries of `--config FILE` right after the subcommand name.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let entries = parse_file(&path)?;
    // the subcommand is the first bare word after the program name, skipping
    // the values of global options
    let mut pos = 1;
    while pos < args.len() {
        let s = args[pos].to_string_lossy();
        if s == "--config" || s == "--threads" {
            pos += 2;
        } else if s.starts_with("--") {
            pos += 1;
        } else {
            break;
        }
    }
    if pos >= args.len() {
        return Ok(args);
    }
    let mut out: Vec<OsString> = args[..=pos].to_vec();
    for (k, v) in entries {
        out.push(format!("--{k}").into());
        out.push(v.into());
    }
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

/// Flattens serialized arguments into `key=value` pairs, dropping unset options.
pub fn resolved<T: Serialize>(command: &str, args: &T) -> Vec<(String, String)> {
    let mut out = vec![("command".to_string(), command.to_string())];
    if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(args) {
        for (k, v) in map {
            let text = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            out.push((k, text));
        }
    }
    out
}

/// Replaces or appends `key`.
pub fn set(config: &mut Vec<(String, String)>, key: &str, value: impl ToString) {
    match config.iter_mut().find(|(k, _)| k == key) {
        Some(entry) => entry.1 = value.to_string(),
        None => config.push((key.to_string(), value.to_string())),
    }
}

pub fn render(config: &[(String, String)]) -> String {
    config.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Writes `<artifact>.config` next to an artifact.
pub fn write_sidecar(artifact: &Path, config: &[(String, String)]) -> Result<()> {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".config");
    let path = PathBuf::from(name);
    fs::write(&path, render(config)).map_err(|source| Error::Io { path, source })
}
