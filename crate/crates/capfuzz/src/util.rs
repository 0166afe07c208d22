//! Small helpers shared across modules.

use std::io::{self, BufRead};

/// Escape arbitrary bytes into printable ASCII. Non-printable bytes become
/// `\xNN`, backslash doubles, CR/LF show as `\r`/`\n`. The encoding is
/// deterministic so previews can be compared byte-for-byte across runs.
pub fn printable(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'\r' => out.push_str("\\r"),
            b'\n' => out.push_str("\\n"),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out
}

/// `printable` truncated to roughly `max` source bytes, with an ellipsis.
pub fn preview(bytes: &[u8], max: usize) -> String {
    if bytes.len() <= max {
        printable(bytes)
    } else {
        format!("{}...", printable(&bytes[..max]))
    }
}

/// Result of reading one line from a byte stream.
pub enum Line {
    /// A complete line, including its LF terminator.
    Complete(Vec<u8>),
    /// The line exceeded `cap` bytes before an LF showed up; the stream has
    /// been drained up to and including the next LF (or EOF).
    TooLong,
    /// EOF with no pending bytes.
    Eof,
}

/// Read one LF-terminated line, bounding memory at `cap` bytes. Trailing
/// bytes at EOF without a terminator are returned as a final line.
pub fn read_line_bounded<R: BufRead>(reader: &mut R, cap: usize) -> io::Result<Line> {
    let mut line = Vec::new();
    loop {
        let buf = reader.fill_buf()?;
        if buf.is_empty() {
            return Ok(if line.is_empty() {
                Line::Eof
            } else {
                Line::Complete(line)
            });
        }
        if let Some(pos) = buf.iter().position(|&b| b == b'\n') {
            if line.len() + pos + 1 > cap {
                reader.consume(pos + 1);
                return Ok(Line::TooLong);
            }
            line.extend_from_slice(&buf[..=pos]);
            reader.consume(pos + 1);
            return Ok(Line::Complete(line));
        }
        let n = buf.len();
        if line.len() + n > cap {
            reader.consume(n);
            drain_to_lf(reader)?;
            return Ok(Line::TooLong);
        }
        line.extend_from_slice(buf);
        reader.consume(n);
    }
}

fn drain_to_lf<R: BufRead>(reader: &mut R) -> io::Result<()> {
    loop {
        let buf = reader.fill_buf()?;
        if buf.is_empty() {
            return Ok(());
        }
        if let Some(pos) = buf.iter().position(|&b| b == b'\n') {
            reader.consume(pos + 1);
            return Ok(());
        }
        let n = buf.len();
        reader.consume(n);
    }
}

/// Milliseconds since the Unix epoch.
pub fn unix_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
