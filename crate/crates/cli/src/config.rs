//! Flat `key = value` config files merged into the argument list. Explicit
//! flags win over file entries.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parse `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected key = value, found {line:?}", i + 1);
        };
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Path given with `--config`, if any.
pub fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn has_flag(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    let prefix = format!("--{key}=");
    args.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

/// Append config entries not already present as flags. `true` and `false`
/// values toggle switches.
pub fn merge(args: &[String], entries: &[(String, String)]) -> Vec<String> {
    let mut merged = args.to_vec();
    for (key, value) in entries {
        if key == "config" || has_flag(args, key) {
            continue;
        }
        match value.as_str() {
            "true" => merged.push(format!("--{key}")),
            "false" => {}
            _ => {
                merged.push(format!("--{key}"));
                merged.push(value.clone());
            }
        }
    }
    merged
}

pub fn load_and_merge(args: &[String]) -> Result<Vec<String>> {
    let Some(path) = config_path(args) else {
        return Ok(args.to_vec());
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .with_context(|| format!("reading config file {path}"))?;
    let entries = parse_config(&text).with_context(|| format!("parsing config file {path}"))?;
    Ok(merge(args, &entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn parses_and_skips_comments() {
        let entries = parse_config("# c\n\nreps = 200\n--q=0.1\n").unwrap();
        assert_eq!(
            entries,
            vec![("reps".into(), "200".into()), ("q".into(), "0.1".into())]
        );
        assert!(parse_config("novalue").is_err());
    }

    #[test]
    fn flags_override_file() {
        let args = argv("spfmri --config c.txt qq --reps 150");
        let entries = vec![
            ("reps".to_string(), "300".to_string()),
            ("n".to_string(), "200".to_string()),
        ];
        let merged = merge(&args, &entries);
        assert_eq!(merged, argv("spfmri --config c.txt qq --reps 150 --n 200"));
        assert_eq!(config_path(&args).as_deref(), Some("c.txt"));
    }
}
