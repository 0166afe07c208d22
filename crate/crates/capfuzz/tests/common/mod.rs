//! Shared helpers for the integration suites: an independent pcap writer
//! (the oracle side of round-trip checks), synthetic session builders, port
//! allocation and child-process guards for the live end-to-end runs.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU16, Ordering};
use std::time::{Duration, Instant};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn capfuzz_bin() -> &'static str {
    env!("CARGO_BIN_EXE_capfuzz")
}

/// Distinct base ports per test to keep parallel tests off each other.
static NEXT_PORT: AtomicU16 = AtomicU16::new(21500);

pub fn alloc_port() -> u16 {
    loop {
        let port = NEXT_PORT.fetch_add(1, Ordering::SeqCst);
        if std::net::TcpListener::bind(("127.0.0.1", port)).is_ok() {
            return port;
        }
    }
}

/// Kills the child on drop so failed tests do not leak servers.
pub struct Guard(pub Child);

impl Drop for Guard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

pub fn spawn_monitor(port: u16, target_cmd: &str) -> Guard {
    let child = Command::new(capfuzz_bin())
        .args([
            "monitor",
            "--port",
            &port.to_string(),
            "--target-cmd",
            target_cmd,
        ])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn monitor");
    Guard(child)
}

pub fn victim_cmd(port: u16, faults: &str) -> String {
    format!("{} victim --port {} {}", capfuzz_bin(), port, faults)
}

pub fn wait_for_port(port: u16, timeout: Duration) -> bool {
    let deadline = Instant::now() + timeout;
    let addr = ("127.0.0.1", port)
        .to_socket_addrs()
        .unwrap()
        .next()
        .unwrap();
    while Instant::now() < deadline {
        if TcpStream::connect_timeout(&addr, Duration::from_millis(200)).is_ok() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(25));
    }
    false
}

/// One LF-terminated control round trip against the monitor.
pub fn control_roundtrip(stream: &mut TcpStream, verb: &[u8]) -> String {
    stream.write_all(verb).unwrap();
    stream.write_all(b"\n").unwrap();
    let mut reply = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match stream.read(&mut byte) {
            Ok(0) => break,
            Ok(_) if byte[0] == b'\n' => break,
            Ok(_) => reply.push(byte[0]),
            Err(e) => panic!("control read: {e}"),
        }
    }
    String::from_utf8_lossy(&reply).into_owned()
}

/// Read status.jsonl as raw JSON values (header first).
pub fn read_jsonl(path: &Path) -> Vec<serde_json::Value> {
    let file = std::fs::File::open(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    BufReader::new(file)
        .lines()
        .map(|l| serde_json::from_str(&l.unwrap()).unwrap())
        .collect()
}

// --- independent pcap/session writer (oracle side of round-trip checks) ---

pub struct PcapWriter {
    pub big_endian: bool,
    pub snaplen: u32,
    buf: Vec<u8>,
    packets: usize,
}

impl PcapWriter {
    pub fn new(big_endian: bool) -> PcapWriter {
        let mut w = PcapWriter {
            big_endian,
            snaplen: 262_144,
            buf: Vec::new(),
            packets: 0,
        };
        w.u32(0xA1B2_C3D4);
        w.u16(2);
        w.u16(4);
        w.u32(0); // thiszone
        w.u32(0); // sigfigs
        let snaplen = w.snaplen;
        w.u32(snaplen);
        w.u32(1); // Ethernet
        w
    }

    fn u16(&mut self, v: u16) {
        let b = if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        self.buf.extend_from_slice(&b);
    }

    fn u32(&mut self, v: u32) {
        let b = if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        self.buf.extend_from_slice(&b);
    }

    pub fn record(&mut self, ts_sec: u32, ts_usec: u32, frame: &[u8]) {
        self.u32(ts_sec);
        self.u32(ts_usec);
        self.u32(frame.len() as u32);
        self.u32(frame.len() as u32);
        self.buf.extend_from_slice(frame);
        self.packets += 1;
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Build one Ethernet/IPv4/TCP frame. Checksums are left zero: the decoder
/// does not verify them and the fixture pcaps (which external tools might
/// open) carry real ones.
pub fn tcp_frame(
    src: (u8, u8, u8, u8),
    sport: u16,
    dst: (u8, u8, u8, u8),
    dport: u16,
    seq: u32,
    flags: u8,
    payload: &[u8],
) -> Vec<u8> {
    let mut f = Vec::with_capacity(54 + payload.len());
    f.extend_from_slice(&[2, 0, 0, 0, 0, 2]);
    f.extend_from_slice(&[2, 0, 0, 0, 0, 1]);
    f.extend_from_slice(&0x0800u16.to_be_bytes());
    let total_len = (40 + payload.len()) as u16;
    f.push(0x45);
    f.push(0);
    f.extend_from_slice(&total_len.to_be_bytes());
    f.extend_from_slice(&[0, 0, 0x40, 0]); // id, DF
    f.push(64);
    f.push(6);
    f.extend_from_slice(&[0, 0]); // checksum
    f.extend_from_slice(&[src.0, src.1, src.2, src.3]);
    f.extend_from_slice(&[dst.0, dst.1, dst.2, dst.3]);
    f.extend_from_slice(&sport.to_be_bytes());
    f.extend_from_slice(&dport.to_be_bytes());
    f.extend_from_slice(&seq.to_be_bytes());
    f.extend_from_slice(&0u32.to_be_bytes()); // ack
    f.push(5 << 4);
    f.push(flags);
    f.extend_from_slice(&0xffffu16.to_be_bytes());
    f.extend_from_slice(&[0, 0, 0, 0]);
    f.extend_from_slice(payload);
    f
}

pub const FLAG_SYN: u8 = 0x02;
pub const FLAG_ACK: u8 = 0x10;
pub const FLAG_PSH: u8 = 0x08;

/// A scripted deterministic TCP session for synthetic captures.
pub struct SessionSpec {
    pub client: ((u8, u8, u8, u8), u16),
    pub server: ((u8, u8, u8, u8), u16),
    pub client_isn: u32,
    pub server_isn: u32,
    /// (from_client, payload) in conversation order.
    pub exchanges: Vec<(bool, Vec<u8>)>,
}

impl SessionSpec {
    /// Frames in conversation order: handshake, then data.
    pub fn frames(&self) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        out.push(tcp_frame(
            self.client.0,
            self.client.1,
            self.server.0,
            self.server.1,
            self.client_isn,
            FLAG_SYN,
            b"",
        ));
        out.push(tcp_frame(
            self.server.0,
            self.server.1,
            self.client.0,
            self.client.1,
            self.server_isn,
            FLAG_SYN | FLAG_ACK,
            b"",
        ));
        out.push(tcp_frame(
            self.client.0,
            self.client.1,
            self.server.0,
            self.server.1,
            self.client_isn.wrapping_add(1),
            FLAG_ACK,
            b"",
        ));
        let mut cseq = self.client_isn.wrapping_add(1);
        let mut sseq = self.server_isn.wrapping_add(1);
        for (from_client, payload) in &self.exchanges {
            if *from_client {
                out.push(tcp_frame(
                    self.client.0,
                    self.client.1,
                    self.server.0,
                    self.server.1,
                    cseq,
                    FLAG_ACK | FLAG_PSH,
                    payload,
                ));
                cseq = cseq.wrapping_add(payload.len() as u32);
            } else {
                out.push(tcp_frame(
                    self.server.0,
                    self.server.1,
                    self.client.0,
                    self.client.1,
                    sseq,
                    FLAG_ACK | FLAG_PSH,
                    payload,
                ));
                sseq = sseq.wrapping_add(payload.len() as u32);
            }
        }
        out
    }

    /// Brute-force per-direction streams: concatenation in conversation
    /// order, independent of any reassembly logic.
    pub fn expected_streams(&self) -> (Vec<u8>, Vec<u8>) {
        let mut c = Vec::new();
        let mut s = Vec::new();
        for (from_client, payload) in &self.exchanges {
            if *from_client {
                c.extend_from_slice(payload);
            } else {
                s.extend_from_slice(payload);
            }
        }
        (c, s)
    }
}
