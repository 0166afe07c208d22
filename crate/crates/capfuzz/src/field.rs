//! Field inference: tokenize client requests and type each token.
//!
//! A message body splits on runs of ASCII space; every maximal non-space run
//! is one field. A field is integer-typed iff it is an optional `+`/`-`
//! followed by one or more ASCII digits, string-typed otherwise. No protocol
//! dictionary is involved; the verb is a field like any other.

use serde::{Deserialize, Serialize};

use crate::flow::{Direction, FlowKey, Message};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    String,
    Integer,
}

/// A typed byte range inside one client request message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpan {
    pub flow_key: FlowKey,
    pub message_index: usize,
    pub field_index: usize,
    /// Byte offset within the message, terminator excluded from the range.
    pub start: usize,
    pub end: usize,
    pub field_type: FieldType,
    pub original_bytes: Vec<u8>,
}

/// Integer iff optional sign then one or more ASCII digits, nothing else.
pub fn classify_token(token: &[u8]) -> FieldType {
    let digits = match token.first() {
        Some(b'+') | Some(b'-') => &token[1..],
        _ => token,
    };
    if !digits.is_empty() && digits.iter().all(u8::is_ascii_digit) {
        FieldType::Integer
    } else {
        FieldType::String
    }
}

/// Split a client message into typed field spans. Offsets index into the
/// message bytes; the terminator is never part of a span.
pub fn tokenize_message(message: &Message) -> Vec<FieldSpan> {
    debug_assert_eq!(message.direction, Direction::ClientToServer);
    let body = message.body();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < body.len() {
        if body[i] == b' ' {
            i += 1;
            continue;
        }
        let start = i;
        while i < body.len() && body[i] != b' ' {
            i += 1;
        }
        let token = &body[start..i];
        spans.push(FieldSpan {
            flow_key: message.flow_key,
            message_index: message.message_index,
            field_index: spans.len(),
            start,
            end: i,
            field_type: classify_token(token),
            original_bytes: token.to_vec(),
        });
    }
    spans
}
