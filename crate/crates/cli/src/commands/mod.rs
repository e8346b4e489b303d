mod bench;
mod eval;
mod generate;
mod gradcheck;
mod infer;
mod train;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::Command;

pub use bench::{BENCH_FILES, BENCH_HEADER};
pub use generate::derive_seed;

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Generate(a) => generate::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Infer(a) => infer::run(&a),
        Command::Eval(a) => eval::run(&a),
        Command::Bench(a) => bench::run(&a),
        Command::Gradcheck(a) => gradcheck::run(&a),
    }
}

pub(crate) fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Failure(format!("cannot create {}: {e}", dir.display())))
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

/// Reads a `key = value` file into a sorted map.
pub(crate) fn read_kv(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        let msg = format!("{}: {e}", path.display());
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(msg)
        } else {
            CliError::Failure(msg)
        }
    })?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Failure(format!("{}:{}: expected `key = value`", path.display(), n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub(crate) fn kv_text(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        writeln!(s, "{k} = {v}").expect("write to string");
    }
    s
}

/// `path` relative to `base` unless it is already absolute.
pub(crate) fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub(crate) fn parse_bool_flag(flag: &str, value: &str) -> CliResult<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::Failure(format!("{flag} expects true or false, got `{value}`"))),
    }
}
