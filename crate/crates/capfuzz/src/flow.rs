//! TCP flow grouping, stream reassembly and message splitting.
//!
//! Segments are grouped by their 5-tuple (both directions share one flow),
//! each direction's stream is rebuilt in sequence order with first-seen bytes
//! winning on overlap, and the streams are cut at LF boundaries into
//! conversation-ordered messages.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pcap::TcpSegment;

/// Per-direction streams are capped here; a fuzzing session is nowhere near
/// it, and the cap keeps 32-bit serial sequence arithmetic unambiguous.
const MAX_STREAM: u64 = 1 << 31;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow {0} exceeds 2 GiB in one direction")]
    StreamTooLong(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
}

/// Canonical flow identity: the client endpoint always comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub client_ip: Ipv4Addr,
    pub client_port: u16,
    pub server_ip: Ipv4Addr,
    pub server_port: u16,
    pub protocol: Protocol,
}

impl std::fmt::Display for FlowKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}:{} -> {}:{}",
            self.client_ip, self.client_port, self.server_ip, self.server_port
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

/// One segment as it sits inside a flow, capture-ordered.
#[derive(Debug, Clone)]
pub struct FlowSegment {
    pub packet_index: usize,
    pub direction: Direction,
    pub seq: u32,
    pub payload: Vec<u8>,
}

/// Provenance of a reassembled byte range: which packet first supplied it.
#[derive(Debug, Clone, Copy)]
struct Chunk {
    stream_offset: usize,
    len: usize,
    packet_index: usize,
}

/// A reassembled bidirectional session.
#[derive(Debug, Clone)]
pub struct TcpFlow {
    pub key: FlowKey,
    pub client_stream: Vec<u8>,
    pub server_stream: Vec<u8>,
    pub segments: Vec<FlowSegment>,
    pub handshake_seen: bool,
    /// Sequence gap observed while reassembling the client direction.
    pub client_gap: bool,
    pub server_gap: bool,
    /// An overlapping or duplicate retransmission was clipped (first-seen
    /// bytes kept) in the client direction.
    pub client_overlap: bool,
    pub server_overlap: bool,
    client_chunks: Vec<Chunk>,
    server_chunks: Vec<Chunk>,
}

impl TcpFlow {
    pub fn has_gap(&self) -> bool {
        self.client_gap || self.server_gap
    }

    pub fn has_overlap(&self) -> bool {
        self.client_overlap || self.server_overlap
    }
}

/// One application message cut from a stream at an LF boundary. `bytes`
/// includes the terminator; an unterminated tail becomes a final message.
#[derive(Debug, Clone)]
pub struct Message {
    pub flow_key: FlowKey,
    pub direction: Direction,
    pub message_index: usize,
    pub bytes: Vec<u8>,
    pub stream_offset: usize,
}

impl Message {
    /// Length of the trailing CRLF/LF, if any.
    pub fn terminator_len(&self) -> usize {
        if self.bytes.ends_with(b"\r\n") {
            2
        } else if self.bytes.ends_with(b"\n") {
            1
        } else {
            0
        }
    }

    /// Message bytes with the terminator stripped.
    pub fn body(&self) -> &[u8] {
        &self.bytes[..self.bytes.len() - self.terminator_len()]
    }
}

type Endpoint = (Ipv4Addr, u16);

fn endpoint_pair(seg: &TcpSegment) -> (Endpoint, Endpoint) {
    ((seg.src_ip, seg.src_port), (seg.dst_ip, seg.dst_port))
}

/// Order-independent session identity used while grouping.
fn unordered_key(seg: &TcpSegment) -> (Endpoint, Endpoint) {
    let (a, b) = endpoint_pair(seg);
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

struct FlowBuild {
    segments: Vec<FlowSegment>,
    raw: Vec<(Endpoint, u32, bool, Vec<u8>)>, // (src, seq, syn-only, payload)
    first_syn_src: Option<Endpoint>,
    first_payload_src: Option<Endpoint>,
    first_src: Endpoint,
}

/// One reassembled direction: the stream, its chunk provenance, and whether
/// a hole or an overlapping retransmission was observed.
struct Assembled {
    stream: Vec<u8>,
    chunks: Vec<Chunk>,
    gap: bool,
    overlap: bool,
}

/// Rebuild one direction from (seq, payload, packet_index) triples kept in
/// capture order. `base` is the sequence number of stream offset 0. Bytes are
/// placed at seq-derived offsets; whoever writes an offset first wins.
fn assemble_direction(
    key: &FlowKey,
    pieces: &[(u32, &[u8], usize)],
    base: u32,
    expect_zero_start: bool,
) -> Result<Assembled, FlowError> {
    // Disjoint written ranges as (offset, bytes, packet_index), kept sorted.
    let mut runs: Vec<(u64, Vec<u8>, usize)> = Vec::new();
    let mut dropped_out_of_window = false;
    let mut overlap = false;

    for &(seq, payload, packet_index) in pieces {
        if payload.is_empty() {
            continue;
        }
        let off = seq.wrapping_sub(base) as u64;
        let len = payload.len() as u64;
        if off + len > MAX_STREAM {
            if off >= MAX_STREAM {
                // Serial arithmetic says this starts "before" offset 0
                // (a pre-capture retransmission); there is nowhere to put it.
                dropped_out_of_window = true;
                continue;
            }
            return Err(FlowError::StreamTooLong(key.to_string()));
        }
        // Clip against already-written ranges, first writer wins.
        let mut cursor = off;
        let end = off + len;
        let mut inserts: Vec<(u64, Vec<u8>, usize)> = Vec::new();
        for (roff, rbytes, _) in runs.iter() {
            let rend = roff + rbytes.len() as u64;
            if rend <= cursor || *roff >= end {
                continue;
            }
            if *roff > cursor {
                let a = (cursor - off) as usize;
                let b = (*roff - off) as usize;
                inserts.push((cursor, payload[a..b].to_vec(), packet_index));
            }
            cursor = cursor.max(rend);
            if cursor >= end {
                break;
            }
        }
        if cursor < end {
            let a = (cursor - off) as usize;
            inserts.push((cursor, payload[a..].to_vec(), packet_index));
        }
        // Fewer inserted bytes than the segment carried means some range was
        // already written: a duplicate or overlapping retransmission.
        if inserts.iter().map(|(_, b, _)| b.len() as u64).sum::<u64>() < len {
            overlap = true;
        }
        runs.extend(inserts);
        runs.sort_by_key(|(o, _, _)| *o);
    }

    let mut stream = Vec::new();
    let mut chunks = Vec::new();
    let mut gap = dropped_out_of_window;
    let mut expected = if expect_zero_start { Some(0u64) } else { None };
    for (off, bytes, packet_index) in runs {
        if let Some(e) = expected {
            if off != e {
                gap = true;
            }
        }
        expected = Some(off + bytes.len() as u64);
        chunks.push(Chunk {
            stream_offset: stream.len(),
            len: bytes.len(),
            packet_index,
        });
        stream.extend_from_slice(&bytes);
    }
    Ok(Assembled {
        stream,
        chunks,
        gap,
        overlap,
    })
}

/// Group segments into flows and reassemble both directions of each.
///
/// The client is the endpoint that sent the first SYN-without-ACK; captures
/// with no handshake fall back to the first payload sender, then to the first
/// segment's source. Flows come back in order of first appearance.
pub fn assemble_flows(segments: &[TcpSegment]) -> Result<Vec<TcpFlow>, FlowError> {
    let mut order: Vec<(Endpoint, Endpoint)> = Vec::new();
    let mut builds: HashMap<(Endpoint, Endpoint), FlowBuild> = HashMap::new();

    for seg in segments {
        let ukey = unordered_key(seg);
        let (src, _) = endpoint_pair(seg);
        let build = builds.entry(ukey).or_insert_with(|| {
            order.push(ukey);
            FlowBuild {
                segments: Vec::new(),
                raw: Vec::new(),
                first_syn_src: None,
                first_payload_src: None,
                first_src: src,
            }
        });
        if seg.flags.syn() && !seg.flags.ack() && build.first_syn_src.is_none() {
            build.first_syn_src = Some(src);
        }
        if !seg.payload.is_empty() && build.first_payload_src.is_none() {
            build.first_payload_src = Some(src);
        }
        build
            .raw
            .push((src, seg.seq, seg.flags.syn(), seg.payload.clone()));
        // Direction is filled in after client election.
        build.segments.push(FlowSegment {
            packet_index: seg.packet_index,
            direction: Direction::ClientToServer,
            seq: seg.seq,
            payload: seg.payload.clone(),
        });
    }

    let mut flows = Vec::with_capacity(order.len());
    for ukey in order {
        let mut build = builds.remove(&ukey).unwrap();
        let client = build
            .first_syn_src
            .or(build.first_payload_src)
            .unwrap_or(build.first_src);
        let server = if ukey.0 == client { ukey.1 } else { ukey.0 };
        let key = FlowKey {
            client_ip: client.0,
            client_port: client.1,
            server_ip: server.0,
            server_port: server.1,
            protocol: Protocol::Tcp,
        };

        for (fseg, (src, ..)) in build.segments.iter_mut().zip(build.raw.iter()) {
            fseg.direction = if *src == client {
                Direction::ClientToServer
            } else {
                Direction::ServerToClient
            };
        }

        // Stream base per direction: SYN consumes one sequence number, so
        // data starts at ISN+1. Without a SYN, the base is the serially
        // smallest payload seq, so out-of-order first segments still land
        // at offset 0.
        let mut assembled = [None, None];
        for (slot, endpoint) in [(0, client), (1, server)] {
            let syn_based = build
                .raw
                .iter()
                .any(|(src, _, syn, _)| src == &endpoint && *syn);
            let mut base = None;
            for (src, seq, syn, payload) in &build.raw {
                if *src != endpoint {
                    continue;
                }
                if *syn {
                    base = Some(seq.wrapping_add(1));
                    break;
                }
                if !payload.is_empty() {
                    base = match base {
                        None => Some(*seq),
                        Some(b) if (seq.wrapping_sub(b) as i32) < 0 => Some(*seq),
                        keep => keep,
                    };
                }
            }
            let pieces: Vec<(u32, &[u8], usize)> = build
                .raw
                .iter()
                .zip(build.segments.iter())
                .filter(|((src, ..), _)| src == &endpoint)
                .map(|((_, seq, _, payload), fseg)| (*seq, payload.as_slice(), fseg.packet_index))
                .collect();
            assembled[slot] = Some(match base {
                Some(base) => assemble_direction(&key, &pieces, base, syn_based)?,
                None => Assembled {
                    stream: Vec::new(),
                    chunks: Vec::new(),
                    gap: false,
                    overlap: false,
                },
            });
        }
        let client_side = assembled[0].take().unwrap();
        let server_side = assembled[1].take().unwrap();

        flows.push(TcpFlow {
            key,
            client_stream: client_side.stream,
            server_stream: server_side.stream,
            segments: build.segments,
            handshake_seen: build.first_syn_src.is_some(),
            client_gap: client_side.gap,
            server_gap: server_side.gap,
            client_overlap: client_side.overlap,
            server_overlap: server_side.overlap,
            client_chunks: client_side.chunks,
            server_chunks: server_side.chunks,
        });
    }
    Ok(flows)
}

fn split_stream(stream: &[u8]) -> Vec<(usize, Vec<u8>)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in stream.iter().enumerate() {
        if b == b'\n' {
            out.push((start, stream[start..=i].to_vec()));
            start = i + 1;
        }
    }
    if start < stream.len() {
        out.push((start, stream[start..].to_vec()));
    }
    out
}

fn capture_position(chunks: &[Chunk], stream_offset: usize) -> usize {
    for c in chunks {
        if stream_offset < c.stream_offset + c.len {
            return c.packet_index;
        }
    }
    chunks.last().map(|c| c.packet_index).unwrap_or(0)
}

/// Split both directions of a flow at LF boundaries and interleave the
/// messages by the capture position of each message's first byte.
pub fn extract_messages(flow: &TcpFlow) -> Vec<Message> {
    let mut tagged: Vec<(usize, usize, Direction, usize, Vec<u8>)> = Vec::new();
    for (direction, stream, chunks) in [
        (
            Direction::ClientToServer,
            &flow.client_stream,
            &flow.client_chunks,
        ),
        (
            Direction::ServerToClient,
            &flow.server_stream,
            &flow.server_chunks,
        ),
    ] {
        for (offset, bytes) in split_stream(stream) {
            let pos = capture_position(chunks, offset);
            tagged.push((pos, offset, direction, offset, bytes));
        }
    }
    tagged.sort_by_key(|(pos, offset, ..)| (*pos, *offset));
    tagged
        .into_iter()
        .enumerate()
        .map(
            |(message_index, (_, _, direction, stream_offset, bytes))| Message {
                flow_key: flow.key,
                direction,
                message_index,
                bytes,
                stream_offset,
            },
        )
        .collect()
}
