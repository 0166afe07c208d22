#!/usr/bin/env python3
"""Generate the pcap fixtures used by the test suite.

Everything here is written from the wire-format definitions (classic pcap,
RFC 791, RFC 793) with plain struct packing, so the fixtures act as an
independent oracle for the Rust parser and reassembler. Alongside each pcap
an .expected.json records ground truth computed in this script: the message
transcript, per-flow reassembled streams, and packet metadata.

Run from the repository root:

    python3 scripts/make_fixtures.py

Outputs land in crates/capfuzz/tests/fixtures/. The files are committed; the
script only needs re-running when a fixture changes.
"""

import json
import random
import struct
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates" / "capfuzz" / "tests" / "fixtures"

MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1


def ip_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def tcp_checksum(src: bytes, dst: bytes, segment: bytes) -> int:
    pseudo = src + dst + struct.pack(">BBH", 0, 6, len(segment))
    return ip_checksum(pseudo + segment)


def ipv4(addr: str) -> bytes:
    return bytes(int(p) for p in addr.split("."))


def tcp_packet(src_ip, sport, dst_ip, dport, seq, ack, flags, payload=b""):
    """Build one Ethernet/IPv4/TCP frame. flags is a string like 'SA' or 'PA'."""
    flag_bits = 0
    for ch in flags:
        flag_bits |= {"F": 0x01, "S": 0x02, "R": 0x04, "P": 0x08, "A": 0x10}[ch]
    tcp_hdr = struct.pack(
        ">HHIIBBHHH", sport, dport, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF,
        5 << 4, flag_bits, 64240, 0, 0
    )
    src, dst = ipv4(src_ip), ipv4(dst_ip)
    csum = tcp_checksum(src, dst, tcp_hdr + payload)
    tcp_hdr = tcp_hdr[:16] + struct.pack(">H", csum) + tcp_hdr[18:]

    total_len = 20 + len(tcp_hdr) + len(payload)
    ip_hdr = struct.pack(">BBHHHBBH", 0x45, 0, total_len, 0x1234, 0x4000, 64, 6, 0) + src + dst
    ip_hdr = ip_hdr[:10] + struct.pack(">H", ip_checksum(ip_hdr)) + ip_hdr[12:]

    eth = bytes.fromhex("0a0000000002") + bytes.fromhex("0a0000000001") + struct.pack(">H", 0x0800)
    return eth + ip_hdr + tcp_hdr + payload


def write_pcap(path: Path, packets, big_endian=False, snaplen=65535):
    """packets: list of (ts_sec, ts_usec, frame_bytes)."""
    e = ">" if big_endian else "<"
    buf = struct.pack(e + "IHHiIII", MAGIC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET)
    for ts_sec, ts_usec, frame in packets:
        buf += struct.pack(e + "IIII", ts_sec, ts_usec, len(frame), len(frame)) + frame
    path.write_bytes(buf)
    return buf


class Session:
    """Scripted TCP session: emits handshake, data and teardown frames."""

    def __init__(self, client_ip, client_port, server_ip, server_port,
                 client_isn=1000, server_isn=2000):
        self.c = (client_ip, client_port)
        self.s = (server_ip, server_port)
        self.cseq = client_isn
        self.sseq = server_isn
        self.frames = []
        self.transcript = []  # (direction, payload) in conversation order

    def handshake(self):
        self.frames.append(tcp_packet(*self.c, *self.s, self.cseq, 0, "S"))
        self.cseq += 1
        self.frames.append(tcp_packet(*self.s, *self.c, self.sseq, self.cseq, "SA"))
        self.sseq += 1
        self.frames.append(tcp_packet(*self.c, *self.s, self.cseq, self.sseq, "A"))

    def client(self, payload: bytes):
        self.frames.append(tcp_packet(*self.c, *self.s, self.cseq, self.sseq, "PA", payload))
        self.cseq += len(payload)
        self.transcript.append(("client_to_server", payload))

    def server(self, payload: bytes):
        self.frames.append(tcp_packet(*self.s, *self.c, self.sseq, self.cseq, "PA", payload))
        self.sseq += len(payload)
        self.transcript.append(("server_to_client", payload))

    def fin(self):
        self.frames.append(tcp_packet(*self.s, *self.c, self.sseq, self.cseq, "FA"))
        self.sseq += 1
        self.frames.append(tcp_packet(*self.c, *self.s, self.cseq, self.sseq, "FA"))
        self.cseq += 1
        self.frames.append(tcp_packet(*self.s, *self.c, self.sseq, self.cseq, "A"))

    def timed_frames(self, t0=1_700_000_000):
        return [(t0 + i, (i * 1000) % 1_000_000, f) for i, f in enumerate(self.frames)]


def preview(b: bytes) -> str:
    return b.decode("ascii").replace("\r", "\\r").replace("\n", "\\n")


def fixture_three_packets():
    pkts = []
    meta = []
    payloads = [b"abc", b"hello world", b""]
    ts = [(1_700_000_101, 1), (1_700_000_102, 250_000), (1_700_000_140, 999_999)]
    seq = 5000
    for (sec, usec), pl in zip(ts, payloads):
        frame = tcp_packet("192.168.1.5", 40001, "192.168.1.9", 7, seq, 77, "PA", pl)
        seq += len(pl)
        pkts.append((sec, usec, frame))
        meta.append({"ts_sec": sec, "ts_usec": usec, "frame_len": len(frame),
                     "payload": pl.decode("ascii")})
    write_pcap(OUT / "three_packets.pcap", pkts)
    (OUT / "three_packets.expected.json").write_text(json.dumps({"packets": meta}, indent=1))


FIXTURE_A = [
    ("client_to_server", b"USER anonymous\r\n"),
    ("server_to_client", b"331 ok\r\n"),
    ("client_to_server", b"PASS secret\r\n"),
    ("server_to_client", b"230 ok\r\n"),
    ("client_to_server", b"CWD upload\r\n"),
    ("server_to_client", b"250 ok\r\n"),
    ("client_to_server", b"QUIT\r\n"),
    ("server_to_client", b"221 bye\r\n"),
]

# Transcript mirroring one benign harness session: banner first, then each
# command answered from the fixed reply table, connection closed after QUIT.
FIXTURE_B = [
    ("server_to_client", b"220 harness ready\r\n"),
    ("client_to_server", b"USER anon\r\n"),
    ("server_to_client", b"331 ok\r\n"),
    ("client_to_server", b"PASS x\r\n"),
    ("server_to_client", b"230 ok\r\n"),
    ("client_to_server", b"CWD pub\r\n"),
    ("server_to_client", b"250 ok\r\n"),
    ("client_to_server", b"RETR file.txt\r\n"),
    ("server_to_client", b"550 not found\r\n"),
    ("client_to_server", b"REST 1024\r\n"),
    ("server_to_client", b"350 ok\r\n"),
    ("client_to_server", b"QUIT\r\n"),
    ("server_to_client", b"221 bye\r\n"),
]


def tokenize(body: bytes):
    """Independent re-statement of the span rules: split on runs of 0x20,
    classify sign+digits as integer."""
    spans = []
    i = 0
    idx = 0
    while i < len(body):
        if body[i] == 0x20:
            i += 1
            continue
        j = i
        while j < len(body) and body[j] != 0x20:
            j += 1
        tok = body[i:j]
        core = tok[1:] if tok[:1] in (b"+", b"-") else tok
        is_int = len(core) > 0 and all(0x30 <= c <= 0x39 for c in core)
        spans.append({"field_index": idx, "start": i, "end": j,
                      "type": "integer" if is_int else "string",
                      "original": tok.decode("ascii")})
        idx += 1
        i = j
    return spans


def transcript_json(transcript):
    out = []
    for i, (direction, payload) in enumerate(transcript):
        body = payload
        if body.endswith(b"\r\n"):
            body = body[:-2]
        elif body.endswith(b"\n"):
            body = body[:-1]
        msg = {"message_index": i, "direction": direction,
               "bytes": preview(payload), "length": len(payload)}
        if direction == "client_to_server":
            msg["fields"] = tokenize(body)
        out.append(msg)
    return out


def fixture_session(name, transcript, client, server, big_endian_twin=False):
    sess = Session(*client, *server)
    sess.handshake()
    for direction, payload in transcript:
        if direction == "client_to_server":
            sess.client(payload)
        else:
            sess.server(payload)
    sess.fin()
    frames = sess.timed_frames()
    write_pcap(OUT / f"{name}.pcap", frames)
    if big_endian_twin:
        write_pcap(OUT / f"{name}_be.pcap", frames, big_endian=True)
    expected = {
        "flow": {"client_ip": client[0], "client_port": client[1],
                 "server_ip": server[0], "server_port": server[1], "protocol": "tcp"},
        "packet_count": len(frames),
        "handshake_seen": True,
        "messages": transcript_json(transcript),
    }
    (OUT / f"{name}.expected.json").write_text(json.dumps(expected, indent=1))


def fixture_multiflow():
    """Six sessions interleaved round-robin, one with a retransmitted segment
    and one with two same-direction data segments swapped out of order.
    Expected per-flow streams are the conversation-order concatenation, which
    seq-ordered, first-writer-wins reassembly must reproduce."""
    rng = random.Random(20260810)
    sessions = []
    for i in range(6):
        client = (f"10.0.{i}.1", 40100 + i)
        server = (f"10.0.{i}.2", [21, 80, 2121][i % 3])
        s = Session(*client, *server, client_isn=1000 * (i + 1), server_isn=9000 + i)
        s.handshake()
        sessions.append((client, server, s))

    chunks = {}  # session idx -> list of (direction, payload)
    for i, (_, _, s) in enumerate(sessions):
        convo = []
        for r in range(3):
            req = f"CMD{r} arg{rng.randrange(100)}\r\n".encode()
            rep = f"2{r}0 reply-{i}-{r}\r\n".encode()
            convo.append(("c", req))
            convo.append(("s", rep))
        chunks[i] = convo

    # Emit data frames round-robin across sessions so segments interleave.
    for r in range(6):
        for i, (_, _, s) in enumerate(sessions):
            direction, payload = chunks[i][r]
            if direction == "c":
                s.client(payload)
            else:
                s.server(payload)

    # Interleaved frame order: handshakes first (in session order), then the
    # data frames round-robin across sessions.
    frames = []
    hs = [s.frames[:3] for _, _, s in sessions]
    data = [s.frames[3:] for _, _, s in sessions]
    for h in hs:
        frames.extend(h)
    for r in range(6):
        for i in range(6):
            frames.append(data[i][r])

    # Session 2: retransmit its first data frame (exact duplicate).
    frames.append(data[2][0])
    # Session 4: swap two of its client-direction frames in capture order; the
    # reassembler has to restore them by sequence number.
    a, b = frames.index(data[4][2]), frames.index(data[4][4])
    frames[a], frames[b] = frames[b], frames[a]

    timed = [(1_700_100_000 + i, (i * 313) % 1_000_000, f) for i, f in enumerate(frames)]
    write_pcap(OUT / "multiflow.pcap", timed)

    expected_flows = []
    for i, (client, server, s) in enumerate(sessions):
        cstream = b"".join(p for d, p in chunks[i] if d == "c")
        sstream = b"".join(p for d, p in chunks[i] if d == "s")
        expected_flows.append({
            "client_ip": client[0], "client_port": client[1],
            "server_ip": server[0], "server_port": server[1],
            "client_stream_hex": cstream.hex(), "server_stream_hex": sstream.hex(),
        })
    (OUT / "multiflow.expected.json").write_text(
        json.dumps({"flows": expected_flows}, indent=1))


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    fixture_three_packets()
    fixture_session("ftp_session", FIXTURE_A, ("10.0.0.1", 1010), ("10.0.0.2", 21),
                    big_endian_twin=True)
    fixture_session("campaign_session", FIXTURE_B, ("10.0.0.1", 1057), ("10.0.0.2", 2121))
    fixture_multiflow()
    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()
