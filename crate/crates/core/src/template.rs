//! Prompt template parsing.
//!
//! A template is fixed text interleaved with named placeholders in braces:
//! `{user_question}`, `{agent_<id>_current}`, `{agent_<id>_history_<t>}`,
//! `{condition_<id>_current}`, `{condition_<id>_history_<t>}`. Parsed
//! segments always alternate prefix / placeholder / prefix ... / prefix,
//! with empty prefixes inserted where needed so the leading segment is a
//! prefix and adjacent placeholders stay separated.

use crate::error::{Error, Result};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlaceholderKind {
    UserQuestion,
    AgentCurrent { source: String },
    AgentHistory { source: String, turn: i64 },
    ConditionCurrent { source: String },
    ConditionHistory { source: String, turn: i64 },
}

impl PlaceholderKind {
    /// The name as written between braces; also the anchor-pool key.
    pub fn canonical_name(&self) -> String {
        match self {
            PlaceholderKind::UserQuestion => "user_question".to_string(),
            PlaceholderKind::AgentCurrent { source } => format!("agent_{source}_current"),
            PlaceholderKind::AgentHistory { source, turn } => format!("agent_{source}_history_{turn}"),
            PlaceholderKind::ConditionCurrent { source } => format!("condition_{source}_current"),
            PlaceholderKind::ConditionHistory { source, turn } => {
                format!("condition_{source}_history_{turn}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Segment {
    /// Fixed template text as raw bytes.
    Prefix(Vec<u8>),
    Placeholder(PlaceholderKind),
}

fn valid_id(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric())
}

fn parse_placeholder(name: &str) -> Result<PlaceholderKind> {
    let err = || Error::TemplateParse(name.to_string());
    if name == "user_question" {
        return Ok(PlaceholderKind::UserQuestion);
    }
    let (family, rest) = name.split_once('_').ok_or_else(err)?;
    if family != "agent" && family != "condition" {
        return Err(err());
    }
    // id_current | id_history_t
    let kind = if let Some(id) = rest.strip_suffix("_current") {
        if !valid_id(id) {
            return Err(err());
        }
        if family == "agent" {
            PlaceholderKind::AgentCurrent { source: id.to_string() }
        } else {
            PlaceholderKind::ConditionCurrent { source: id.to_string() }
        }
    } else {
        let (id, t) = match rest.find("_history_") {
            Some(i) => (&rest[..i], &rest[i + "_history_".len()..]),
            None => return Err(err()),
        };
        if !valid_id(id) {
            return Err(err());
        }
        let turn: i64 = t.parse().map_err(|_| err())?;
        if family == "agent" {
            PlaceholderKind::AgentHistory { source: id.to_string(), turn }
        } else {
            PlaceholderKind::ConditionHistory { source: id.to_string(), turn }
        }
    };
    Ok(kind)
}

/// Parse template text into alternating segments.
pub fn parse_template(text: &str) -> Result<Vec<Segment>> {
    let bytes = text.as_bytes();
    let mut segments = Vec::new();
    let mut plain_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let close = bytes[i + 1..]
                .iter()
                .position(|&b| b == b'}')
                .map(|p| i + 1 + p)
                .ok_or_else(|| Error::TemplateParse(text[i..].to_string()))?;
            let inner = &text[i + 1..close];
            if inner.contains('{') {
                return Err(Error::TemplateParse(text[i..=close].to_string()));
            }
            segments.push(Segment::Prefix(bytes[plain_start..i].to_vec()));
            segments.push(Segment::Placeholder(parse_placeholder(inner)?));
            i = close + 1;
            plain_start = i;
        } else if bytes[i] == b'}' {
            return Err(Error::TemplateParse(text[i..].to_string()));
        } else {
            i += 1;
        }
    }
    segments.push(Segment::Prefix(bytes[plain_start..].to_vec()));
    // Drop the empty prefixes the splitter produced between placeholders?
    // No: Eq-1 structure keeps them, so the segment list always looks like
    // [prefix, ph, prefix, ..., ph, prefix].
    debug_assert!(segments.len() % 2 == 1);
    Ok(segments)
}

/// Placeholder ordinals and names used by a segment list.
pub fn placeholder_names(segments: &[Segment]) -> Vec<String> {
    segments
        .iter()
        .filter_map(|s| match s {
            Segment::Placeholder(k) => Some(k.canonical_name()),
            Segment::Prefix(_) => None,
        })
        .collect()
}
