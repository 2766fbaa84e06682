//! Normalized corpus cache: parsed examples as length-prefixed records so a
//! split can be reloaded without re-parsing the distribution files.
//!
//! Layout: magic `AACP`, `u16` version, `u32` record count, then per record
//! the source id, query, document and candidate token lists and the answer.
//! Strings are `u32` length + UTF-8; lists are `u32` count + strings.

use std::io::{Read, Write};

use super::example::RawExample;
use crate::binio::*;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AACP";
const VERSION: u16 = 1;

fn write_list<W: Write>(w: &mut W, items: &[String]) -> Result<()> {
    write_u32(w, items.len() as u32)?;
    items.iter().try_for_each(|s| write_str(w, s))
}

fn read_list<R: Read>(r: &mut R) -> Result<Vec<String>> {
    let n = read_u32(r)? as usize;
    (0..n).map(|_| read_str(r)).collect()
}

pub fn write_corpus<W: Write>(w: &mut W, examples: &[RawExample]) -> Result<()> {
    write_bytes(w, MAGIC)?;
    write_u16(w, VERSION)?;
    write_u32(w, examples.len() as u32)?;
    for ex in examples {
        write_str(w, &ex.source_id)?;
        write_list(w, &ex.query)?;
        write_list(w, &ex.document)?;
        write_list(w, &ex.candidates)?;
        write_str(w, &ex.answer)?;
    }
    Ok(())
}

/// Reads a corpus cache and re-validates every record.
pub fn read_corpus<R: Read>(r: &mut R) -> Result<Vec<RawExample>> {
    if &read_exact_vec(r, 4)?[..] != MAGIC {
        return Err(Error::Format("not a corpus cache (bad magic)".into()));
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported corpus cache version {version}")));
    }
    let n = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let ex = RawExample {
            source_id: read_str(r)?,
            query: read_list(r)?,
            document: read_list(r)?,
            candidates: read_list(r)?,
            answer: read_str(r)?,
        };
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}
