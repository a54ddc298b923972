//! Flat `key = value` configuration text.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Keys are
//! the long CLI flag names without the leading dashes.

use crate::error::{Error, Result};

pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
            path: "config".into(),
            reason: format!("line {}: expected `key = value`", n + 1),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Format {
                path: "config".into(),
                reason: format!("line {}: empty key", n + 1),
            });
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Turn config entries into long-flag arguments.
///
/// `true` becomes a bare flag and `false` is dropped, so boolean keys behave
/// like switches.
pub fn to_cli_args(entries: &[(String, String)]) -> Vec<String> {
    let mut args = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => args.push(format!("--{k}")),
            "false" => {}
            _ => {
                args.push(format!("--{k}"));
                args.push(v.clone());
            }
        }
    }
    args
}
