//! Error type shared by all core modules.

use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A token position would exceed the configured maximum context length.
    PositionOverflow { position: usize, max_context: usize },
    /// A segment span does not fit inside the fragment it addresses.
    SpanOutOfRange { start: usize, len: usize, fragment_len: usize },
    /// Two fragments/offsets disagree in length.
    LengthMismatch { expected: usize, got: usize },
    /// Two fragments/offsets disagree in layer count or row width.
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    /// Fragment concatenation found a gap or overlap in absolute positions.
    PositionGap { expected: i64, got: i64 },
    /// Anchor weight computation was handed no candidates.
    EmptyCandidates,
    /// Shareability threshold outside [0, 1].
    InvalidGamma(f32),
    /// Anchor id not present in the pool.
    UnknownAnchor(u64),
    /// A matched anchor lacks the offset required for this agent/slot.
    MissingOffset { anchor: u64, agent: String, slot: usize },
    /// Template text failed to parse; carries the offending token.
    TemplateParse(String),
    /// The agent graph contains a cycle.
    CyclicGraph,
    /// An agent referenced a current-turn response that is not available.
    MissingUpstream { agent: String, source: String, turn: usize },
    /// An agent referenced a current-turn peer that is not listed upstream.
    NotUpstream { agent: String, source: String },
    /// A shared-store entry was written twice.
    StoreConflict(String),
    /// A token id falls outside the configured vocabulary.
    InvalidToken(u16),
    /// Model configuration violates an invariant.
    InvalidConfig(String),
    /// Decoding was asked to run on an empty cache.
    EmptyCache,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::PositionOverflow { position, max_context } => {
                write!(f, "position {position} exceeds max context {max_context}")
            }
            Error::SpanOutOfRange { start, len, fragment_len } => {
                write!(f, "span [{start}, {start}+{len}) out of range for fragment of length {fragment_len}")
            }
            Error::LengthMismatch { expected, got } => {
                write!(f, "length mismatch: expected {expected}, got {got}")
            }
            Error::ShapeMismatch { what, expected, got } => {
                write!(f, "{what} mismatch: expected {expected}, got {got}")
            }
            Error::PositionGap { expected, got } => {
                write!(f, "fragments not contiguous: expected start {expected}, got {got}")
            }
            Error::EmptyCandidates => write!(f, "anchor weight computation needs at least one candidate"),
            Error::InvalidGamma(g) => write!(f, "gamma {g} outside [0, 1]"),
            Error::UnknownAnchor(id) => write!(f, "unknown anchor id {id}"),
            Error::MissingOffset { anchor, agent, slot } => {
                write!(f, "anchor {anchor} has no offset for agent {agent} slot {slot}")
            }
            Error::TemplateParse(tok) => write!(f, "unrecognized placeholder `{tok}`"),
            Error::CyclicGraph => write!(f, "agent graph is cyclic"),
            Error::MissingUpstream { agent, source, turn } => {
                write!(f, "agent {agent}: response of {source} for turn {turn} not available")
            }
            Error::NotUpstream { agent, source } => {
                write!(f, "agent {agent} references current-turn output of {source}, which is not upstream")
            }
            Error::StoreConflict(key) => write!(f, "store entry {key} written twice"),
            Error::InvalidToken(id) => write!(f, "token id {id} outside vocabulary"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::EmptyCache => write!(f, "cache is empty"),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
