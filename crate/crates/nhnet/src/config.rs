//! Key-value config files.
//!
//! One `key = value` pair per line. Blank lines and lines starting with `#`
//! are ignored. Keys are the long flag names of the subcommand without the
//! leading dashes (`beam-width` or `beam_width`). Boolean flags take `true`
//! or `false`. Flags given on the command line win over the file.

use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, Command};

use crate::error::{CliError, Result};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn flag_given(args: &[OsString], key: &str) -> bool {
    let long = format!("--{key}");
    let eq = format!("--{key}=");
    args.iter().any(|a| {
        let a = a.to_string_lossy();
        a == long || a.starts_with(&eq)
    })
}

/// Removes `--config <path>` from `args` and appends the file's settings for
/// every flag not already present.
pub fn merge(mut args: Vec<OsString>, cmd: &Command) -> Result<Vec<OsString>> {
    let Some(pos) = args
        .iter()
        .position(|a| a == "--config" || a.to_string_lossy().starts_with("--config="))
    else {
        return Ok(args);
    };
    let flag = args.remove(pos).to_string_lossy().into_owned();
    let path = match flag.strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None if pos < args.len() => args.remove(pos).to_string_lossy().into_owned(),
        None => return Err(CliError::usage("--config needs a path")),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(Path::new(&path), e))?;
    let name = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy())
        .find(|a| !a.starts_with('-'))
        .ok_or_else(|| CliError::usage("--config needs a subcommand"))?
        .into_owned();
    let sub = cmd
        .find_subcommand(&name)
        .ok_or_else(|| CliError::usage(format!("unknown subcommand {name}")))?;
    let mut extra = Vec::new();
    for (key, value) in parse(&text)? {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| CliError::usage(format!("{path}: unknown key {key} for {name}")))?;
        if flag_given(&args, &key) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => extra.push(OsString::from(format!("--{key}"))),
                "false" => {}
                _ => return Err(CliError::usage(format!("{path}: {key} takes true or false"))),
            }
        } else {
            extra.push(OsString::from(format!("--{key}={value}")));
        }
    }
    args.extend(extra);
    Ok(args)
}
