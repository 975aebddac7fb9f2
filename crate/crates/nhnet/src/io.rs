//! JSONL corpora, vocabulary files and content hashing.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nhnet_core::corpus::CorpusRecord;
use nhnet_core::tokenizer::Vocabulary;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn open_reader(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(if is_gzip(path) {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    open_reader(path)?
        .read_to_end(&mut buf)
        .map_err(|e| CliError::io(path, e))?;
    Ok(buf)
}

/// Writes `bytes`, gzip-compressed when the path ends in `.gz`.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let res = if is_gzip(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(bytes)
            .and_then(|_| enc.finish())
            .and_then(|mut w| w.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(bytes).and_then(|_| w.flush())
    };
    res.map_err(|e| CliError::io(path, e))
}

/// One JSON object per line with keys sorted.
pub fn to_canonical_line<T: Serialize>(item: &T) -> Result<String> {
    let value = serde_json::to_value(item).map_err(|e| CliError::data(e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| CliError::data(e.to_string()))
}

pub fn jsonl_bytes<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = String::new();
    for item in items {
        out.push_str(&to_canonical_line(item)?);
        out.push('\n');
    }
    Ok(out.into_bytes())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_bytes(path, &jsonl_bytes(items)?)
}

/// Parses every nonblank line; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open_reader(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, item: &T) -> Result<()> {
    let value = serde_json::to_value(item).map_err(|e| CliError::data(e.to_string()))?;
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Reads and validates a corpus. Duplicate story ids and records that break
/// the headline/label rule are reported with their line number.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in open_reader(path)?.lines().enumerate() {
        let at = |msg: String| CliError::data(format!("{}:{}: {msg}", path.display(), i + 1));
        let line = line.map_err(|e| at(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        record.validate().map_err(|e| at(e.to_string()))?;
        if !seen.insert(record.story_id.clone()) {
            return Err(at(format!("duplicate story_id {}", record.story_id)));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    nhnet_core::corpus::validate_corpus(records)?;
    write_jsonl(path, records)
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Vocabulary::from_text(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_bytes(path, vocab.to_text().as_bytes())
}

/// Hash of `blob <len>\0<content>`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
