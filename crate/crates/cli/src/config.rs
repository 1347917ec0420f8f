//! Flat `key = value` config files. Each key is the long name of a flag of the subcommand
//! being run; the file's settings are spliced in before the command-line flags, so flags
//! given on the command line win.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Command};

/// Parses `text` into `--key value` arguments accepted by `cmd`.
pub fn config_args(cmd: &Command, text: &str) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got {line:?}", no + 1);
        };
        let (key, value) = (key.trim(), value.trim());
        if key == "config" {
            bail!("config line {}: a config file cannot include another", no + 1);
        }
        let Some(arg) = cmd.get_arguments().find(|a| a.get_long() == Some(key)) else {
            bail!("config line {}: unknown key {key:?} for `{}`", no + 1, cmd.get_name());
        };
        match arg.get_action() {
            ArgAction::SetTrue => match value {
                "true" => args.push(format!("--{key}")),
                "false" => {}
                _ => bail!("config line {}: {key} takes true or false, got {value:?}", no + 1),
            },
            _ => args.push(format!("--{key}={value}")),
        }
    }
    Ok(args)
}

pub fn read_config_args(cmd: &Command, path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    config_args(cmd, &text)
}

/// Finds `--config PATH` or `--config=PATH` in raw arguments.
pub fn find_config_flag(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}
