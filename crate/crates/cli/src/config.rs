use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// One `key = value` entry; keys are long flag names without dashes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses a config file: `key = value` per line, `#` starts a comment,
/// blank lines are ignored and keys may repeat (e.g. `attack`).
pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, got `{}`", i + 1, raw.trim());
        };
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            bail!("line {}: invalid key `{}`", i + 1, key);
        }
        out.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse(&text).with_context(|| format!("in config {}", path.display()))
}

fn given_on_command_line(args: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    let prefix = format!("--{key}=");
    args.iter()
        .filter_map(|a| a.to_str())
        .any(|a| a == flag || a.starts_with(&prefix))
}

/// Inserts config entries as flags right after the subcommand name, skipping
/// keys already present on the command line, so explicit flags win.
/// Boolean keys take `true`/`false`.
pub fn merge(args: &[OsString], entries: &[Entry], subcommand_at: usize) -> Vec<OsString> {
    let mut injected = Vec::new();
    for e in entries {
        if given_on_command_line(args, &e.key) {
            continue;
        }
        match e.value.as_str() {
            "true" => injected.push(OsString::from(format!("--{}", e.key))),
            "false" => {}
            v => {
                injected.push(OsString::from(format!("--{}", e.key)));
                injected.push(OsString::from(v));
            }
        }
    }
    let mut out = args[..=subcommand_at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[subcommand_at + 1..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_comments_and_repeats() {
        let e = parse("# run\nepochs = 5\n\nattack = fgsm:0.5  # first\nattack=pgd\n").unwrap();
        let kv: Vec<(&str, &str)> = e.iter().map(|e| (e.key.as_str(), e.value.as_str())).collect();
        assert_eq!(kv, vec![("epochs", "5"), ("attack", "fgsm:0.5"), ("attack", "pgd")]);
        assert_eq!(e[2].line, 5);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(parse("epochs 5").unwrap_err().to_string().contains("line 1"));
    }

    #[test]
    fn flags_win_over_config() {
        let args = os(&["genmix", "train-defense", "--epochs", "3", "--attack=pgd"]);
        let entries = parse("epochs = 9\nattack = fgsm\nfaster-init = true\nlarge-generator = false\nbatch = 64").unwrap();
        let merged = merge(&args, &entries, 1);
        assert_eq!(
            merged,
            os(&["genmix", "train-defense", "--faster-init", "--batch", "64", "--epochs", "3", "--attack=pgd"])
        );
    }
}
