//! Versioned JSON-lines persistence. The first line of every file is a schema header.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, schema: &str, items: &[T]) -> Result<()> {
    serde_json::to_writer(&mut w, &Header { schema: schema.to_string() })?;
    w.write_all(b"\n")?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(r: R, schema: &str) -> Result<Vec<T>> {
    let mut lines = r.lines();
    let header: Header = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::Empty("jsonl file")),
    };
    check_schema(schema, &header.schema)?;
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn check_schema(expected: &str, found: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Schema {
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }
}
