//! `key = value` experiment manifests.
//!
//! Blank lines and `#` comments are ignored. Keys are the long command-line
//! option names without the leading dashes; later keys override earlier ones.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigFileError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: invalid key {key:?}")]
    Key { line: usize, key: String },
}

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, ConfigFileError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigFileError::Syntax { line: n + 1 })?;
        let key = key.trim();
        let valid = key.starts_with(|c: char| c.is_ascii_alphanumeric())
            && key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !valid {
            return Err(ConfigFileError::Key {
                line: n + 1,
                key: key.to_owned(),
            });
        }
        let key = key.replace('_', "-");
        let value = value.trim().to_owned();
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => out.push((key, value)),
        }
    }
    Ok(out)
}

/// Turns manifest entries into command-line arguments. `true` becomes a
/// bare flag and `false` drops the key.
pub fn to_args(pairs: &[(String, String)]) -> Vec<String> {
    let mut args = Vec::new();
    for (k, v) in pairs {
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
