//! Children's Book Test block format.
//!
//! Each block is 21 numbered lines followed by a blank line. Lines 1-20 are
//! the context. Line 21 carries tab-separated fields: the query with `XXXXX`
//! in place of the missing word, the answer, an empty field, and the
//! `|`-separated candidate list.

use std::io::BufRead;

use super::example::{RawExample, PLACEHOLDER_TOKEN};
use crate::error::{Error, Result};

pub const CBT_PLACEHOLDER: &str = "XXXXX";
pub const CBT_CONTEXT_LINES: usize = 20;
pub const CBT_CANDIDATES: usize = 10;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_string)
}

/// Splits `"<n> <text>"` and checks the number.
fn numbered(line: &str, expected: usize, line_no: usize) -> Result<&str> {
    let (num, rest) = line
        .split_once(' ')
        .ok_or_else(|| parse_err(line_no, "line is not numbered"))?;
    let n: usize = num
        .parse()
        .map_err(|_| parse_err(line_no, format!("bad line number {num:?}")))?;
    if n != expected {
        return Err(parse_err(
            line_no,
            format!("expected line {expected} of block, found {n}"),
        ));
    }
    Ok(rest)
}

fn finish_block(
    lines: &[(usize, String)],
    source: &str,
    block_start: usize,
) -> Result<RawExample> {
    if lines.len() != CBT_CONTEXT_LINES + 1 {
        return Err(parse_err(
            block_start,
            format!("block has {} lines, expected 21", lines.len()),
        ));
    }
    let mut document = Vec::new();
    for (k, (line_no, text)) in lines[..CBT_CONTEXT_LINES].iter().enumerate() {
        document.extend(tokens(numbered(text, k + 1, *line_no)?));
    }
    let (q_line, q_text) = &lines[CBT_CONTEXT_LINES];
    let body = numbered(q_text, CBT_CONTEXT_LINES + 1, *q_line)?;
    let fields: Vec<&str> = body.split('\t').collect();
    if fields.len() < 3 {
        return Err(parse_err(*q_line, "query line lacks tab-separated answer and candidates"));
    }
    let query: Vec<String> = tokens(fields[0])
        .map(|t| {
            if t == CBT_PLACEHOLDER {
                PLACEHOLDER_TOKEN.to_string()
            } else {
                t
            }
        })
        .collect();
    let answer = fields[1].trim().to_string();
    let cand_field = fields[2..]
        .iter()
        .rev()
        .find(|f| !f.trim().is_empty())
        .ok_or_else(|| parse_err(*q_line, "missing candidate list"))?;
    let candidates: Vec<String> = cand_field
        .trim()
        .split('|')
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect();
    if candidates.len() != CBT_CANDIDATES {
        return Err(parse_err(
            *q_line,
            format!("{} candidates, expected {CBT_CANDIDATES}", candidates.len()),
        ));
    }
    if !candidates.contains(&answer) {
        return Err(parse_err(*q_line, format!("answer {answer:?} not among candidates")));
    }
    let ex = RawExample {
        source_id: format!("{source}:{block_start}"),
        query,
        document,
        candidates,
        answer,
    };
    ex.validate()?;
    Ok(ex)
}

/// Reads every block of a CBT file. `source` prefixes each example id.
pub fn parse_cbt<R: BufRead>(reader: R, source: &str) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    let mut block: Vec<(usize, String)> = Vec::new();
    let mut block_start = 0;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(format!("{source}: line {line_no}"), e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !block.is_empty() {
                out.push(finish_block(&block, source, block_start)?);
                block.clear();
            }
            continue;
        }
        if block.is_empty() {
            block_start = line_no;
        }
        if block.len() == CBT_CONTEXT_LINES + 1 {
            return Err(parse_err(line_no, "block longer than 21 lines"));
        }
        block.push((line_no, line.to_string()));
    }
    if !block.is_empty() {
        out.push(finish_block(&block, source, block_start)?);
    }
    Ok(out)
}
