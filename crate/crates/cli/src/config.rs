//! Flat `key = value` config files, expanded into command-line flags.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Turn config file text into flags. `true` becomes a bare switch, `false`
/// is dropped, anything else becomes `--key value`.
pub fn parse(text: &str, path: &Path) -> Result<Vec<OsString>> {
    let mut flags = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), i + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key.starts_with('-') {
            bail!("{}:{}: bad key {key:?}", path.display(), i + 1);
        }
        match value {
            "true" => flags.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                flags.push(format!("--{key}").into());
                flags.push(value.into());
            }
        }
    }
    Ok(flags)
}

/// Remove every `--config FILE` from `args` and splice the file's flags in
/// right after the subcommand, so explicit flags (which come later) win.
///
/// Returns `Ok(None)` when there is no config option.
pub fn expand(args: Vec<OsString>, subcommands: &[&str]) -> Result<Option<Vec<OsString>>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut files = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            match iter.next() {
                Some(file) => files.push(file),
                None => bail!("--config needs a file"),
            }
        } else if let Some(file) = s.strip_prefix("--config=") {
            files.push(file.into());
        } else {
            rest.push(arg);
        }
    }
    if files.is_empty() {
        return Ok(None);
    }
    let mut injected = Vec::new();
    for file in &files {
        let path = Path::new(file);
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        injected.extend(parse(&text, path)?);
    }
    let at = rest
        .iter()
        .skip(1)
        .position(|a| subcommands.contains(&a.to_string_lossy().as_ref()))
        .map_or(rest.len(), |p| p + 2);
    rest.splice(at..at, injected);
    Ok(Some(rest))
}
