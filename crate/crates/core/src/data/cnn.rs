//! CNN `.question` files: URL, passage, question, answer and the entity
//! mapping, as blank-line separated sections.

use std::collections::HashSet;

use super::example::{RawExample, PLACEHOLDER_TOKEN};
use crate::error::{Error, Result};

pub const CNN_PLACEHOLDER: &str = "@placeholder";
const ENTITY_PREFIX: &str = "@entity";

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses one question file. Candidates are the distinct entity markers of
/// the passage in order of first appearance.
pub fn parse_cnn(text: &str, source_id: &str) -> Result<RawExample> {
    // (first line number, lines) for each non-empty section
    let mut sections: Vec<(usize, Vec<&str>)> = Vec::new();
    let mut current: Option<(usize, Vec<&str>)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(s) = current.take() {
                sections.push(s);
            }
        } else {
            current.get_or_insert_with(|| (i + 1, Vec::new())).1.push(line);
        }
    }
    if let Some(s) = current.take() {
        sections.push(s);
    }
    let names = ["url", "passage", "question", "answer", "entity mapping"];
    if sections.len() < names.len() {
        let line = sections.last().map_or(1, |s| s.0);
        return Err(parse_err(
            line,
            format!("missing {} section", names[sections.len()]),
        ));
    }
    if sections.len() > names.len() {
        return Err(parse_err(sections[names.len()].0, "unexpected trailing section"));
    }
    for (line_no, lines) in &sections[..4] {
        if lines.len() != 1 {
            return Err(parse_err(*line_no, "section spans more than one line"));
        }
    }
    for (k, line) in sections[4].1.iter().enumerate() {
        if !line.starts_with(ENTITY_PREFIX) || !line.contains(':') {
            return Err(parse_err(sections[4].0 + k, format!("bad entity mapping {line:?}")));
        }
    }

    let document: Vec<String> = sections[1].1[0].split_whitespace().map(String::from).collect();
    let (q_line, q_lines) = &sections[2];
    let query: Vec<String> = q_lines[0].split_whitespace().map(String::from).collect();
    if !query.iter().any(|t| t == CNN_PLACEHOLDER) {
        return Err(parse_err(*q_line, "question has no @placeholder"));
    }
    let query = query
        .into_iter()
        .map(|t| if t == CNN_PLACEHOLDER { PLACEHOLDER_TOKEN.to_string() } else { t })
        .collect();
    let answer = sections[3].1[0].trim().to_string();

    let mut seen = HashSet::new();
    let candidates: Vec<String> = document
        .iter()
        .filter(|t| t.starts_with(ENTITY_PREFIX))
        .filter(|t| seen.insert(t.as_str()))
        .cloned()
        .collect();
    if !seen.contains(answer.as_str()) {
        return Err(Error::Integrity {
            source_id: source_id.to_string(),
            message: format!("answer {answer:?} does not occur in the passage"),
        });
    }
    let ex = RawExample {
        source_id: source_id.to_string(),
        query,
        document,
        candidates,
        answer,
    };
    ex.validate()?;
    Ok(ex)
}
