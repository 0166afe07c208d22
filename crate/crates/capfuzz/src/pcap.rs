//! Classic pcap parsing and Ethernet/IPv4/TCP decoding.
//!
//! Only the classic format is handled: a 24-byte global header (magic,
//! version, thiszone, sigfigs, snaplen, linktype) followed by 16-byte
//! per-packet headers. Byte order follows the magic. pcapng and the
//! nanosecond-timestamp variant are rejected up front, and the only link
//! type accepted is Ethernet (1).

use std::fmt;
use std::net::Ipv4Addr;
use thiserror::Error;

/// Native magic. A file whose first word reads back byte-swapped was written
/// on a machine with the opposite byte order and every header field in it
/// needs swapping.
const MAGIC: u32 = 0xA1B2_C3D4;
const MAGIC_SWAPPED: u32 = 0xD4C3_B2A1;
/// Nanosecond-precision variants, deliberately not supported.
const MAGIC_NSEC: u32 = 0xA1B2_3C4D;
const MAGIC_NSEC_SWAPPED: u32 = 0x4D3C_B2A1;
/// First word of a pcapng Section Header Block (endian-symmetric).
const PCAPNG_BLOCK: u32 = 0x0A0D_0D0A;

pub const LINKTYPE_ETHERNET: u32 = 1;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("malformed capture: {0}")]
    MalformedCapture(String),
    #[error("unsupported link type {0} (only Ethernet link type 1 is handled)")]
    UnsupportedLinkType(u32),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(&'static str),
    #[error("malformed packet {index}: {reason}")]
    MalformedPacket { index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Native,
    Swapped,
}

/// A parsed capture file.
#[derive(Debug, Clone)]
pub struct CaptureFile {
    pub byte_order: ByteOrder,
    pub snaplen: u32,
    pub linktype: u32,
    pub packets: Vec<RawPacket>,
}

/// One captured frame, still undecoded.
#[derive(Debug, Clone)]
pub struct RawPacket {
    /// 0-based position in the file; this is the "packet number" used for
    /// addressing throughout the pipeline.
    pub index: usize,
    pub ts_sec: u32,
    pub ts_usec: u32,
    pub data: Vec<u8>,
}

/// TCP flag bits as they appear in byte 13 of the TCP header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TcpFlags(u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;

    pub fn from_wire(byte: u8) -> Self {
        TcpFlags(byte & (Self::FIN | Self::SYN | Self::RST | Self::PSH | Self::ACK))
    }

    pub fn syn(self) -> bool {
        self.0 & Self::SYN != 0
    }

    pub fn ack(self) -> bool {
        self.0 & Self::ACK != 0
    }

    pub fn fin(self) -> bool {
        self.0 & Self::FIN != 0
    }

    pub fn rst(self) -> bool {
        self.0 & Self::RST != 0
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (bit, ch) in [
            (Self::SYN, 'S'),
            (Self::ACK, 'A'),
            (Self::FIN, 'F'),
            (Self::RST, 'R'),
            (Self::PSH, 'P'),
        ] {
            if self.0 & bit != 0 {
                f.write_fmt(format_args!("{ch}"))?;
            }
        }
        Ok(())
    }
}

/// One decoded TCP segment: the in-memory packet-flow record.
#[derive(Debug, Clone)]
pub struct TcpSegment {
    pub packet_index: usize,
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub seq: u32,
    pub flags: TcpFlags,
    pub payload: Vec<u8>,
}

/// Outcome of decoding one frame: a TCP segment, or a skip marker for
/// anything that is not offset-0 IPv4/TCP.
#[derive(Debug, Clone)]
pub enum Decoded {
    Tcp(TcpSegment),
    NotTcp,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    swap: bool,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_ne_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        if self.swap {
            v.swap_bytes()
        } else {
            v
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Parse a complete capture file image.
pub fn parse_capture(bytes: &[u8]) -> Result<CaptureFile, PcapError> {
    if bytes.len() >= 4 && u32::from_ne_bytes(bytes[..4].try_into().unwrap()) == PCAPNG_BLOCK {
        return Err(PcapError::UnsupportedFormat("pcapng"));
    }
    if bytes.len() < 24 {
        return Err(PcapError::MalformedCapture(format!(
            "{} bytes is shorter than the 24-byte global header",
            bytes.len()
        )));
    }
    let magic = u32::from_ne_bytes(bytes[..4].try_into().unwrap());
    let (byte_order, swap) = match magic {
        MAGIC => (ByteOrder::Native, false),
        MAGIC_SWAPPED => (ByteOrder::Swapped, true),
        MAGIC_NSEC | MAGIC_NSEC_SWAPPED => {
            return Err(PcapError::MalformedCapture(format!(
                "unknown magic 0x{magic:08x} (nanosecond pcap is not supported)"
            )))
        }
        _ => {
            return Err(PcapError::MalformedCapture(format!(
                "unknown magic 0x{magic:08x}"
            )))
        }
    };

    let mut r = Reader {
        bytes,
        pos: 4,
        swap,
    };
    let _version = r.u32(); // major.minor, not enforced
    let _thiszone = r.u32();
    let _sigfigs = r.u32();
    let snaplen = r.u32();
    let linktype = r.u32();
    if linktype != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(linktype));
    }

    let mut packets = Vec::new();
    while r.remaining() > 0 {
        if r.remaining() < 16 {
            return Err(PcapError::MalformedCapture(format!(
                "truncated packet header for packet {} ({} trailing bytes)",
                packets.len(),
                r.remaining()
            )));
        }
        let ts_sec = r.u32();
        let ts_usec = r.u32();
        let incl_len = r.u32();
        let _orig_len = r.u32();
        if ts_usec >= 1_000_000 {
            return Err(PcapError::MalformedCapture(format!(
                "packet {}: timestamp microseconds {} out of range",
                packets.len(),
                ts_usec
            )));
        }
        if incl_len > snaplen {
            return Err(PcapError::MalformedCapture(format!(
                "packet {}: captured length {} exceeds snaplen {}",
                packets.len(),
                incl_len,
                snaplen
            )));
        }
        let incl = incl_len as usize;
        if r.remaining() < incl {
            return Err(PcapError::MalformedCapture(format!(
                "packet {}: record truncated ({} of {} bytes present)",
                packets.len(),
                r.remaining(),
                incl
            )));
        }
        let data = bytes[r.pos..r.pos + incl].to_vec();
        r.pos += incl;
        packets.push(RawPacket {
            index: packets.len(),
            ts_sec,
            ts_usec,
            data,
        });
    }

    Ok(CaptureFile {
        byte_order,
        snaplen,
        linktype,
        packets,
    })
}

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

/// Decode one frame down to its TCP payload. Non-IPv4, non-TCP and non-first
/// IP fragments come back as [`Decoded::NotTcp`]; frames whose declared
/// headers do not fit the captured bytes are errors.
pub fn decode_segment(packet: &RawPacket, linktype: u32) -> Result<Decoded, PcapError> {
    if linktype != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(linktype));
    }
    let malformed = |reason: String| PcapError::MalformedPacket {
        index: packet.index,
        reason,
    };
    let d = &packet.data;
    if d.len() < 14 {
        return Err(malformed(format!(
            "{}-byte frame is shorter than an Ethernet header",
            d.len()
        )));
    }
    let mut ethertype = be16(&d[12..14]);
    let mut ip_start = 14;
    if ethertype == ETHERTYPE_VLAN {
        // Unwrap one 802.1Q tag; anything nested deeper is skipped.
        if d.len() < 18 {
            return Err(malformed("VLAN tag truncated".into()));
        }
        ethertype = be16(&d[16..18]);
        ip_start = 18;
        if ethertype == ETHERTYPE_VLAN {
            return Ok(Decoded::NotTcp);
        }
    }
    if ethertype != ETHERTYPE_IPV4 {
        return Ok(Decoded::NotTcp);
    }
    if d.len() < ip_start + 20 {
        return Err(malformed("IPv4 header truncated".into()));
    }
    let ip = &d[ip_start..];
    if ip[0] >> 4 != 4 {
        return Ok(Decoded::NotTcp);
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    if ihl < 20 {
        return Err(malformed(format!("IP header length {ihl} < 20")));
    }
    let total_len = be16(&ip[2..4]) as usize;
    if total_len < ihl {
        return Err(malformed(format!(
            "IP total length {total_len} smaller than header length {ihl}"
        )));
    }
    if ip.len() < total_len {
        return Err(malformed(format!(
            "frame carries {} IP bytes but declares {total_len}",
            ip.len()
        )));
    }
    let frag = be16(&ip[6..8]);
    if frag & 0x1fff != 0 {
        // Fragment at a non-zero offset: reassembly is out of scope.
        return Ok(Decoded::NotTcp);
    }
    if ip[9] != 6 {
        return Ok(Decoded::NotTcp);
    }
    if ip.len() < ihl + 20 || total_len < ihl + 20 {
        return Err(malformed("TCP header truncated".into()));
    }
    let tcp = &ip[ihl..total_len];
    let data_offset = ((tcp[12] >> 4) as usize) * 4;
    if data_offset < 20 {
        return Err(malformed(format!(
            "TCP data offset {} < 5 words",
            tcp[12] >> 4
        )));
    }
    if tcp.len() < data_offset {
        return Err(malformed(format!(
            "TCP data offset {data_offset} exceeds the {} bytes present",
            tcp.len()
        )));
    }

    Ok(Decoded::Tcp(TcpSegment {
        packet_index: packet.index,
        src_ip: Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]),
        src_port: be16(&tcp[0..2]),
        dst_ip: Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]),
        dst_port: be16(&tcp[2..4]),
        seq: be32(&tcp[4..8]),
        flags: TcpFlags::from_wire(tcp[13]),
        payload: tcp[data_offset..].to_vec(),
    }))
}

/// Decode every packet of a capture, skipping non-TCP frames. Frames that
/// fail to decode are counted rather than failing the whole capture; real
/// captures routinely carry a few mangled records.
pub fn decode_capture(capture: &CaptureFile) -> (Vec<TcpSegment>, usize) {
    let mut segments = Vec::new();
    let mut malformed = 0;
    for packet in &capture.packets {
        match decode_segment(packet, capture.linktype) {
            Ok(Decoded::Tcp(seg)) => segments.push(seg),
            Ok(Decoded::NotTcp) => {}
            Err(_) => malformed += 1,
        }
    }
    (segments, malformed)
}
