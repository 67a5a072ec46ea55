//! Layered settings. Every subcommand flag can also come from a
//! `GECFORGE_<FLAG>` environment variable or from the TOML config file;
//! flags win over the environment, which wins over the file.
//!
//! The file holds shared keys at the top level and per-subcommand tables:
//!
//! ```toml
//! workers = 8
//! seed = 7
//!
//! [noise]
//! dict = "artifacts/dict.json"
//! token_error_prob = 0.9
//! ```
//!
//! Keys use underscores for dashes. Top-level keys apply to every
//! subcommand that has the flag; keys in a subcommand table must exist.
//! Layering works by splicing the resolved values into argv ahead of the
//! user's own flags, so clap performs all parsing and validation.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Command};

use crate::io::{read_string, CliError, CliResult};

pub const ENV_PREFIX: &str = "GECFORGE_";

/// Global options that take a value, so their values are not mistaken for
/// the subcommand name.
const GLOBAL_VALUED: [&str; 2] = ["--config", "--log-level"];

pub fn env_name(long: &str) -> String {
    format!("{ENV_PREFIX}{}", long.replace('-', "_").to_uppercase())
}

fn global_value(raw: &[OsString], name: &str, upto: usize) -> Option<OsString> {
    let eq = format!("{name}=");
    let mut found = None;
    let mut i = 1;
    while i < upto {
        let a = raw[i].to_string_lossy();
        if a == name {
            found = raw.get(i + 1).cloned();
            i += 1;
        } else if let Some(v) = a.strip_prefix(&eq) {
            found = Some(v.into());
        }
        i += 1;
    }
    found
}

/// Index of the subcommand name in `raw`, if any.
fn subcommand_index(raw: &[OsString], cmd: &Command) -> Option<usize> {
    let mut i = 1;
    while i < raw.len() {
        let a = raw[i].to_string_lossy();
        if GLOBAL_VALUED.contains(&a.as_ref()) {
            i += 2;
            continue;
        }
        if a.starts_with('-') {
            i += 1;
            continue;
        }
        return cmd.find_subcommand(a.as_ref()).map(|_| i);
    }
    None
}

/// Long flags the user typed after the subcommand.
fn given_flags(args: &[OsString]) -> HashSet<String> {
    args.iter()
        .filter_map(|a| a.to_str())
        .take_while(|a| *a != "--")
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_owned())
        .collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Switch,
    Repeated,
    Single,
}

fn kind(action: &ArgAction) -> Kind {
    match action {
        ArgAction::SetTrue => Kind::Switch,
        ArgAction::Append => Kind::Repeated,
        _ => Kind::Single,
    }
}

fn flag_args(long: &str, kind: Kind, values: Vec<String>) -> Vec<OsString> {
    let flag = format!("--{long}");
    match kind {
        Kind::Switch => values.iter().take(1).map(|_| flag.clone().into()).collect(),
        _ => values
            .into_iter()
            .flat_map(|v| [flag.clone().into(), v.into()])
            .collect(),
    }
}

fn env_values(long: &str, kind: Kind) -> CliResult<Option<Vec<String>>> {
    let name = env_name(long);
    let Ok(v) = std::env::var(&name) else {
        return Ok(None);
    };
    Ok(Some(match kind {
        Kind::Switch => match v.to_lowercase().as_str() {
            "1" | "true" | "yes" | "on" => vec![String::new()],
            "0" | "false" | "no" | "off" | "" => Vec::new(),
            _ => {
                return Err(CliError::validation(format!(
                    "{name}: expected a boolean, got {v:?}"
                )))
            }
        },
        Kind::Repeated => v
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect(),
        Kind::Single => vec![v],
    }))
}

fn scalar(key: &str, v: &toml::Value) -> CliResult<String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(CliError::validation(format!(
            "config key {key:?}: unsupported value {v}"
        ))),
    }
}

fn file_values(key: &str, kind: Kind, v: &toml::Value) -> CliResult<Vec<String>> {
    match (kind, v) {
        (Kind::Switch, toml::Value::Boolean(b)) => {
            Ok(if *b { vec![String::new()] } else { Vec::new() })
        }
        (Kind::Switch, _) => Err(CliError::validation(format!(
            "config key {key:?} must be a boolean"
        ))),
        (Kind::Repeated, toml::Value::Array(items)) => {
            items.iter().map(|i| scalar(key, i)).collect()
        }
        (Kind::Single, toml::Value::Array(items)) => {
            // Lists such as `lambdas = [0.1, 0.3, 0.6]` become comma lists.
            let parts: Vec<String> = items
                .iter()
                .map(|i| scalar(key, i))
                .collect::<CliResult<_>>()?;
            Ok(vec![parts.join(",")])
        }
        _ => Ok(vec![scalar(key, v)?]),
    }
}

fn load_table(path: &Path) -> CliResult<toml::Table> {
    let text = read_string(path)?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn config_path(raw: &[OsString], cmd: &Command) -> Option<PathBuf> {
    let upto = subcommand_index(raw, cmd).unwrap_or(raw.len());
    global_value(raw, "--config", upto)
        .or_else(|| std::env::var_os(format!("{ENV_PREFIX}CONFIG")))
        .map(PathBuf::from)
}

/// Top-level `log_level` from the config file, if any.
pub fn file_log_level(raw: &[OsString], cmd: &Command) -> CliResult<Option<String>> {
    let Some(path) = config_path(raw, cmd) else {
        return Ok(None);
    };
    let table = load_table(&path)?;
    table
        .get("log_level")
        .map(|v| scalar("log_level", v))
        .transpose()
}

/// Returns argv with environment and config-file values spliced in.
pub fn layered_args(raw: Vec<OsString>, cmd: &Command) -> CliResult<Vec<OsString>> {
    let Some(at) = subcommand_index(&raw, cmd) else {
        return Ok(raw);
    };
    let name = raw[at].to_string_lossy().into_owned();
    let sub = cmd
        .find_subcommand(&name)
        .expect("subcommand index points at a subcommand");
    let table = match config_path(&raw, cmd) {
        Some(p) => load_table(&p)?,
        None => toml::Table::new(),
    };
    let section = match table.get(&name) {
        Some(toml::Value::Table(t)) => Some(t),
        Some(_) => {
            return Err(CliError::validation(format!(
                "config key {name:?} must be a table"
            )))
        }
        None => None,
    };

    let mut known = HashSet::new();
    let given = given_flags(&raw[at + 1..]);
    let mut extra: Vec<OsString> = Vec::new();
    for arg in sub.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        if long == "help" {
            continue;
        }
        let key = long.replace('-', "_");
        known.insert(key.clone());
        if given.contains(long) {
            continue;
        }
        let k = kind(arg.get_action());
        let values = match env_values(long, k)? {
            Some(v) => v,
            None => match section
                .and_then(|s| s.get(&key))
                .or_else(|| table.get(&key))
            {
                Some(v) => file_values(&key, k, v)?,
                None => continue,
            },
        };
        extra.extend(flag_args(long, k, values));
    }
    if let Some(s) = section {
        if let Some(bad) = s.keys().find(|k| !known.contains(*k)) {
            return Err(CliError::validation(format!(
                "config [{name}] has unknown key {bad:?}"
            )));
        }
    }

    let mut out = raw[..=at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&raw[at + 1..]);
    Ok(out)
}
