//! Shared on-disk container: a UTF-8 `key = value` header introduced by a
//! magic line and closed by `end_header`, followed by a raw little-endian
//! blob. Used for both volumes and checkpoints.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const END: &str = "end_header";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Header {
    pub entries: Vec<(String, String)>,
}

impl Header {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> {
        self.entries.iter().filter_map(move |(k, v)| {
            k.strip_prefix(prefix).map(|rest| (rest, v.as_str()))
        })
    }

    pub(crate) fn require<V: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<V> {
        let raw = self.get(key).ok_or_else(|| Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: format!("missing key `{key}`"),
        })?;
        raw.parse().map_err(|_| Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: format!("unparsable value `{raw}` for `{key}`"),
        })
    }
}

pub fn encode(magic: &str, header: &Header, blob: &[u8]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(magic);
    out.push('\n');
    for (k, v) in &header.entries {
        debug_assert!(!k.contains('=') && !k.contains('\n') && !v.contains('\n'));
        out.push_str(&format!("{k} = {v}\n"));
    }
    out.push_str(END);
    out.push('\n');
    let mut bytes = out.into_bytes();
    bytes.extend_from_slice(blob);
    bytes
}

pub fn write(path: &Path, magic: &str, header: &Header, blob: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode(magic, header, blob)).map_err(|e| Error::io(path, e))
}

pub fn decode(bytes: &[u8], magic: &str, path: &Path) -> Result<(Header, Vec<u8>)> {
    let corrupt = |reason: String| Error::CorruptHeader {
        path: path.to_path_buf(),
        reason,
    };
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<String> {
        let rest = &bytes[*pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt(format!("header not terminated by `{END}`")))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| corrupt("header is not UTF-8".into()))?
            .to_string();
        *pos += nl + 1;
        Ok(line)
    };
    let first = next_line(&mut pos)?;
    if first.trim() != magic {
        return Err(corrupt(format!("expected `{magic}`, found `{}`", first.trim())));
    }
    let mut header = Header::default();
    loop {
        let line = next_line(&mut pos)?;
        let line = line.trim();
        if line == END {
            break;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| corrupt(format!("malformed header line `{line}`")))?;
        header.push(k.trim(), v.trim());
    }
    Ok((header, bytes[pos..].to_vec()))
}

pub fn read(path: &Path, magic: &str) -> Result<(Header, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, magic, path)
}
