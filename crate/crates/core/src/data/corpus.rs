//! Prepared-corpus files: a versioned JSON header line followed by one JSON
//! record per example.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub records: usize,
}

pub fn write_records<W: Write, T: Serialize>(mut w: W, format: &str, records: &[T]) -> Result<()> {
    let header = CorpusHeader {
        format: format.to_string(),
        version: CORPUS_VERSION,
        records: records.len(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead, T: DeserializeOwned>(r: R, format: &str) -> Result<Vec<T>> {
    let mut lines = r.lines();
    let first = lines.next().transpose()?.ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: CorpusHeader = serde_json::from_str(&first).map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.format != format {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected format {format}, found {}", header.format),
        });
    }
    if header.version != CORPUS_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported version {}", header.version),
        });
    }
    let mut out = Vec::with_capacity(header.records);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?);
    }
    if out.len() != header.records {
        return Err(Error::Parse {
            line: out.len() + 1,
            message: format!("header announces {} records, found {}", header.records, out.len()),
        });
    }
    Ok(out)
}
