//! Payload library: the three attack classes and their schedules.
//!
//! String overflows probe the classic problem lengths (127/128/255/256,
//! either side of 32K, 64K and 64K-1), format-string probes use `%x`/`%s`/
//! `%n` runs plus the `NotLikely%x%x.txt` file-name probe, and integer
//! boundaries sit on both sides of each power-of-two edge where adding one
//! flips the sign or wraps to zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PayloadError {
    #[error("invalid schedule: {0}")]
    InvalidConfig(String),
    #[error("unrecognized payload label {0:?}")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadClass {
    StringOverflow,
    FormatString,
    IntegerBoundary,
}

/// Fill byte for string overflows; printable and easy to spot in a debugger.
pub const FILL_BYTE: u8 = b'A';

/// Default overflow lengths. 256 and 32768 extend the quoted boundaries so
/// every edge is probed from both sides.
pub const DEFAULT_STRING_LENGTHS: [usize; 9] =
    [127, 128, 255, 256, 32767, 32768, 32769, 65535, 65536];

const FORMAT_PAYLOADS: [(&str, &str); 4] = [
    ("%x*8", "%x%x%x%x%x%x%x%x"),
    ("%s*8", "%s%s%s%s%s%s%s%s"),
    ("%n*4", "%n%n%n%n"),
    ("NotLikely%x%x.txt", "NotLikely%x%x.txt"),
];

const INTEGER_PAYLOADS: [&str; 11] = [
    "0",
    "-1",
    "32767",
    "32768",
    "65535",
    "65536",
    "2147483647",
    "2147483648",
    "4294967295",
    "4294967296",
    "-2147483648",
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Repr {
    Bytes(Vec<u8>),
    /// Materialized only at render time; 64K fills never sit in the plan.
    Fill {
        byte: u8,
        len: usize,
    },
}

/// One attack payload. Bytes are produced on demand so large fills cost
/// nothing until a test case is actually sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub class: PayloadClass,
    pub label: String,
    repr: Repr,
}

impl Payload {
    fn fill(class: PayloadClass, len: usize) -> Payload {
        Payload {
            class,
            label: format!("A*{len}"),
            repr: Repr::Fill {
                byte: FILL_BYTE,
                len,
            },
        }
    }

    fn literal(class: PayloadClass, label: &str, bytes: &str) -> Payload {
        Payload {
            class,
            label: label.to_string(),
            repr: Repr::Bytes(bytes.as_bytes().to_vec()),
        }
    }

    pub fn len(&self) -> usize {
        match &self.repr {
            Repr::Bytes(b) => b.len(),
            Repr::Fill { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Append the payload bytes to `out`.
    pub fn write_into(&self, out: &mut Vec<u8>) {
        match &self.repr {
            Repr::Bytes(b) => out.extend_from_slice(b),
            Repr::Fill { byte, len } => out.resize(out.len() + len, *byte),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(self.len());
        self.write_into(&mut v);
        v
    }

    /// Rebuild a payload from its manifest label. Labels are either
    /// `<token>*<count>` (token repeated) or the literal bytes themselves.
    pub fn from_label(class: PayloadClass, label: &str) -> Result<Payload, PayloadError> {
        if let Some((token, count)) = label.rsplit_once('*') {
            if let Ok(count) = count.parse::<usize>() {
                if token == "A" {
                    return Ok(Payload::fill(class, count));
                }
                if matches!(token, "%x" | "%s" | "%n") {
                    return Ok(Payload {
                        class,
                        label: label.to_string(),
                        repr: Repr::Bytes(token.repeat(count).into_bytes()),
                    });
                }
                return Err(PayloadError::UnknownLabel(label.to_string()));
            }
        }
        Ok(Payload::literal(class, label, label))
    }
}

/// Expand a length schedule into string-overflow payloads. Lengths must be
/// positive and free of duplicates; order is preserved.
pub fn string_overflow_schedule(lengths: &[usize]) -> Result<Vec<Payload>, PayloadError> {
    if lengths.is_empty() {
        return Err(PayloadError::InvalidConfig(
            "string length schedule is empty".into(),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    for &len in lengths {
        if len == 0 {
            return Err(PayloadError::InvalidConfig(
                "string length 0 would produce an empty payload".into(),
            ));
        }
        if !seen.insert(len) {
            return Err(PayloadError::InvalidConfig(format!(
                "duplicate string length {len}"
            )));
        }
    }
    Ok(lengths
        .iter()
        .map(|&len| Payload::fill(PayloadClass::StringOverflow, len))
        .collect())
}

/// The fixed format-string probe list. `%n` is the write primitive of the
/// vulnerability class; it can be excluded for targets where attempting
/// writes is unsafe.
pub fn format_string_payloads(enable_percent_n: bool) -> Vec<Payload> {
    FORMAT_PAYLOADS
        .iter()
        .filter(|(label, _)| enable_percent_n || *label != "%n*4")
        .map(|(label, bytes)| Payload::literal(PayloadClass::FormatString, label, bytes))
        .collect()
}

/// The fixed integer-boundary list, as decimal text.
pub fn integer_boundary_payloads() -> Vec<Payload> {
    INTEGER_PAYLOADS
        .iter()
        .map(|v| Payload::literal(PayloadClass::IntegerBoundary, v, v))
        .collect()
}
