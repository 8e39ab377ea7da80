//! Canonical line-delimited JSON persistence.
//!
//! A split file holds one sentence per line:
//!
//! ```text
//! {"id":"1004","tokens":["The","bread","is","top","notch"],
//!  "aspects":[{"span":[1,2],"polarity":"positive","opinions":[[3,5]]}]}
//! ```
//!
//! A triplet file holds one triplet per line:
//!
//! ```text
//! {"id":"1004","aspect":[1,2],"sentiment":"positive","opinions":[[3,5]]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{DatasetSplit, Sentence, SentenceTriplet, SplitName};
use crate::error::{Error, Result};

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path, name: SplitName) -> Result<DatasetSplit> {
    let sentences: Vec<Sentence> = read_jsonl(path)?;
    DatasetSplit::new(name, sentences)
}

pub fn write_split(path: &Path, split: &DatasetSplit) -> Result<()> {
    write_jsonl(path, &split.sentences)
}

pub fn read_triplets(path: &Path) -> Result<Vec<SentenceTriplet>> {
    read_jsonl(path)
}

pub fn write_triplets(path: &Path, triplets: &[SentenceTriplet]) -> Result<()> {
    write_jsonl(path, triplets)
}
