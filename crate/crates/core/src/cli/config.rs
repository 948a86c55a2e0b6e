//! TOML config files as flag defaults.
//!
//! Top-level scalar keys apply to whichever command accepts a flag of that
//! name; a table named after a command (`[train]`, `[store.add]`) applies to
//! that command only. Values are spliced into the argument list ahead of the
//! user's own flags, so explicit flags win.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Command, CommandFactory};

use super::Cli;

const GLOBAL_VALUE_FLAGS: [&str; 3] = ["--config", "--seed", "--jobs"];

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Indices of the subcommand tokens, e.g. `store` and `add`.
fn subcommand_positions(argv: &[OsString], root: &Command) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut cmd = root.clone();
    let mut i = 1;
    while i < argv.len() {
        let s = argv[i].to_string_lossy().to_string();
        if GLOBAL_VALUE_FLAGS.contains(&s.as_str()) {
            i += 2;
            continue;
        }
        if s.starts_with('-') {
            i += 1;
            continue;
        }
        match cmd.find_subcommand(&s) {
            Some(sub) => {
                let sub = sub.clone();
                out.push((i, s));
                cmd = sub;
                i += 1;
            }
            None => break,
        }
    }
    out
}

fn render(value: &toml::Value) -> Option<Vec<String>> {
    match value {
        toml::Value::String(s) => Some(vec![s.clone()]),
        toml::Value::Integer(i) => Some(vec![i.to_string()]),
        toml::Value::Float(f) => Some(vec![f.to_string()]),
        toml::Value::Boolean(_) => Some(Vec::new()),
        toml::Value::Array(items) => {
            let parts: Option<Vec<String>> =
                items.iter().map(|v| render(v).and_then(|r| r.into_iter().next())).collect();
            parts.map(|p| vec![p.join(",")])
        }
        _ => None,
    }
}

fn flags(table: &toml::Table, accepts: impl Fn(&str) -> bool) -> Result<Vec<OsString>, String> {
    let mut out = Vec::new();
    for (key, value) in table {
        if value.is_table() || !accepts(key) {
            continue;
        }
        if value.as_bool() == Some(false) {
            continue;
        }
        let rendered = render(value).ok_or_else(|| format!("unsupported value for {key}"))?;
        out.push(OsString::from(format!("--{key}")));
        out.extend(rendered.into_iter().map(OsString::from));
    }
    Ok(out)
}

fn long_names(cmd: &Command) -> Vec<String> {
    cmd.get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect()
}

/// Returns `argv` with config-file values spliced in.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let root = Cli::command();
    let globals = long_names(&root);
    let positions = subcommand_positions(&argv, &root);
    let Some(&(last_pos, _)) = positions.last() else {
        return Ok(argv);
    };
    let mut cmd = root.clone();
    let mut section = Some(&table);
    for (_, name) in &positions {
        cmd = cmd.find_subcommand(name).expect("found during scan").clone();
        section = section.and_then(|t| t.get(name)).and_then(|v| v.as_table());
    }
    let local = long_names(&cmd);
    let mut injected = flags(&table, |k| local.iter().any(|l| l == k) && !globals.iter().any(|g| g == k))?;
    if let Some(section) = section {
        injected.extend(flags(section, |_| true)?);
    }
    let global_flags = flags(&table, |k| globals.iter().any(|g| g == k) && k != "config")?;
    let mut out: Vec<OsString> = Vec::with_capacity(argv.len() + injected.len() + global_flags.len());
    out.push(argv[0].clone());
    out.extend(global_flags);
    out.extend(argv[1..=last_pos].iter().cloned());
    out.extend(injected);
    out.extend(argv[last_pos + 1..].iter().cloned());
    Ok(out)
}
