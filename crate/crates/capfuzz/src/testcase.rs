//! Test-case generation: expand every field into an ordered run of payload
//! substitutions, and render the mutated message bytes on demand.
//!
//! Canonical order, fixed so a campaign is reproducible from the capture
//! alone: flows in capture order, client messages in message_index order,
//! fields left to right, then the field's payload classes (string fields get
//! string_overflow then format_string; integer fields get integer_boundary
//! then string_overflow), payloads in schedule order.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::{tokenize_message, FieldSpan, FieldType};
use crate::flow::{extract_messages, Direction, FlowKey, Message, TcpFlow};
use crate::payload::{
    format_string_payloads, integer_boundary_payloads, string_overflow_schedule, Payload,
    PayloadClass, PayloadError, DEFAULT_STRING_LENGTHS,
};
use crate::util::printable;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Schedule(#[from] PayloadError),
    #[error("empty corpus: no client request fields to mutate")]
    EmptyCorpus,
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(
        "test {test_id}: field bytes at [{start}..{end}) no longer match the corpus (span drift)"
    )]
    SpanMismatch {
        test_id: usize,
        start: usize,
        end: usize,
    },
}

/// Mutation schedule knobs, embedded in configs and echoed into reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub string_lengths: Vec<usize>,
    pub enable_percent_n: bool,
    pub mutate_verbs: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            string_lengths: DEFAULT_STRING_LENGTHS.to_vec(),
            enable_percent_n: true,
            mutate_verbs: true,
        }
    }
}

/// One planned mutation.
#[derive(Debug, Clone)]
pub struct TestCase {
    pub test_id: usize,
    pub flow_key: FlowKey,
    pub message_index: usize,
    pub field: FieldSpan,
    pub payload: Payload,
}

struct FlowMessages {
    key: FlowKey,
    client_messages: Vec<Message>,
}

/// The full deterministic plan for a campaign: every test case plus the
/// original client messages needed to replay flow prefixes.
pub struct TestPlan {
    pub cases: Vec<TestCase>,
    flows: Vec<FlowMessages>,
}

impl TestPlan {
    /// Expand flows into the canonical test-case list.
    pub fn generate(
        flows: &[TcpFlow],
        schedules: &ScheduleConfig,
    ) -> Result<TestPlan, GenerateError> {
        let overflow = string_overflow_schedule(&schedules.string_lengths)?;
        let format = format_string_payloads(schedules.enable_percent_n);
        let integer = integer_boundary_payloads();

        let mut plan = TestPlan {
            cases: Vec::new(),
            flows: Vec::new(),
        };
        for flow in flows {
            let client_messages: Vec<Message> = extract_messages(flow)
                .into_iter()
                .filter(|m| m.direction == Direction::ClientToServer)
                .collect();
            let flow_slot = plan.flows.len();
            plan.flows.push(FlowMessages {
                key: flow.key,
                client_messages,
            });
            for message in &plan.flows[flow_slot].client_messages {
                for span in tokenize_message(message) {
                    if !schedules.mutate_verbs && span.field_index == 0 {
                        continue;
                    }
                    let classes: [&[Payload]; 2] = match span.field_type {
                        FieldType::String => [&overflow, &format],
                        FieldType::Integer => [&integer, &overflow],
                    };
                    for class in classes {
                        for payload in class {
                            plan.cases.push(TestCase {
                                test_id: plan.cases.len(),
                                flow_key: flow.key,
                                message_index: message.message_index,
                                field: span.clone(),
                                payload: payload.clone(),
                            });
                        }
                    }
                }
            }
        }
        if plan.cases.is_empty() {
            return Err(GenerateError::EmptyCorpus);
        }
        Ok(plan)
    }

    /// The original (unmutated) message a test case addresses.
    pub fn original_message(&self, tc: &TestCase) -> &Message {
        self.client_messages(tc.flow_key)
            .iter()
            .find(|m| m.message_index == tc.message_index)
            .expect("test case addresses a message absent from its own plan")
    }

    /// All client messages of the flow that precede the mutated one, in
    /// order: the replay prefix.
    pub fn prefix_messages(&self, tc: &TestCase) -> Vec<&Message> {
        self.client_messages(tc.flow_key)
            .iter()
            .filter(|m| m.message_index < tc.message_index)
            .collect()
    }

    fn client_messages(&self, key: FlowKey) -> &[Message] {
        self.flows
            .iter()
            .find(|f| f.key == key)
            .map(|f| f.client_messages.as_slice())
            .unwrap_or(&[])
    }

    /// Render a test case's mutated message bytes.
    pub fn render(&self, tc: &TestCase) -> Result<Vec<u8>, RenderError> {
        render_mutated_message(tc, self.original_message(tc))
    }
}

/// Splice the payload over the field's byte range: everything before the
/// span, the payload, everything after (terminator included).
pub fn render_mutated_message(tc: &TestCase, original: &Message) -> Result<Vec<u8>, RenderError> {
    let (start, end) = (tc.field.start, tc.field.end);
    if end > original.bytes.len() || original.bytes[start..end] != tc.field.original_bytes[..] {
        return Err(RenderError::SpanMismatch {
            test_id: tc.test_id,
            start,
            end,
        });
    }
    let mut out = Vec::with_capacity(original.bytes.len() - (end - start) + tc.payload.len());
    out.extend_from_slice(&original.bytes[..start]);
    tc.payload.write_into(&mut out);
    out.extend_from_slice(&original.bytes[end..]);
    Ok(out)
}

/// Payload bytes above this size are left out of the manifest; the label
/// regenerates them exactly.
const MANIFEST_INLINE_MAX: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldRecord {
    pub field_index: usize,
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub field_type: FieldType,
    pub original: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PayloadRecord {
    pub class: PayloadClass,
    pub label: String,
    pub length: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes: Option<String>,
}

/// One manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub test_id: usize,
    pub flow: FlowKey,
    pub message_index: usize,
    pub field: FieldRecord,
    pub payload: PayloadRecord,
}

impl ManifestEntry {
    pub fn from_case(tc: &TestCase) -> ManifestEntry {
        let bytes = if tc.payload.len() <= MANIFEST_INLINE_MAX {
            Some(printable(&tc.payload.to_bytes()))
        } else {
            None
        };
        ManifestEntry {
            test_id: tc.test_id,
            flow: tc.flow_key,
            message_index: tc.message_index,
            field: FieldRecord {
                field_index: tc.field.field_index,
                start: tc.field.start,
                end: tc.field.end,
                field_type: tc.field.field_type,
                original: printable(&tc.field.original_bytes),
            },
            payload: PayloadRecord {
                class: tc.payload.class,
                label: tc.payload.label.clone(),
                length: tc.payload.len(),
                bytes,
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest i/o: {0}")]
    Io(#[from] io::Error),
    #[error("manifest line {0}: {1}")]
    Parse(usize, serde_json::Error),
}

/// Serialize the plan as JSON Lines, one test case per line.
pub fn write_manifest<W: Write>(plan: &TestPlan, mut out: W) -> io::Result<()> {
    for tc in &plan.cases {
        let entry = ManifestEntry::from_case(tc);
        serde_json::to_writer(&mut out, &entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn manifest_to_bytes(plan: &TestPlan) -> Vec<u8> {
    let mut buf = Vec::new();
    write_manifest(plan, &mut buf).expect("in-memory write");
    buf
}

pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<ManifestEntry>, ManifestError> {
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| ManifestError::Parse(i + 1, e))?);
    }
    Ok(entries)
}

/// Hex SHA-256 of the manifest bytes; pins a status file to its manifest.
pub fn manifest_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}
