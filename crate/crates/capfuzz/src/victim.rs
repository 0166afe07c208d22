//! Seeded-fault FTP-subset server: the ground-truth target for end-to-end
//! runs.
//!
//! One connection at a time, a fixed reply table, and three independently
//! toggleable faults checked against every space-separated argument before
//! normal handling: abort on an over-long argument, spin forever on `%x`/`%n`,
//! abort on a digits-only argument at or past 2^31. With all faults off the
//! server answers anything within the reply table (or `502 no`).

use std::io::{BufReader, Write};
use std::net::{TcpListener, TcpStream};

use crate::util::{read_line_bounded, Line};

/// Commands longer than this get `500` instead of a reply from the table;
/// keeps memory bounded under garbage input.
const MAX_LINE: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct FaultConfig {
    /// Abort when any argument is at least `overflow_threshold` bytes.
    pub fault_overflow: bool,
    pub overflow_threshold: usize,
    /// Spin forever (no reply) when any argument contains `%x` or `%n`.
    pub fault_format: bool,
    /// Abort when any digits-only argument is >= 2^31.
    pub fault_integer: bool,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            fault_overflow: false,
            overflow_threshold: 256,
            fault_format: false,
            fault_integer: false,
        }
    }
}

/// What one command line leads to. Faults decide first; only then does the
/// reply table speak.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineAction {
    Reply(&'static [u8]),
    ReplyThenClose(&'static [u8]),
    /// Abnormal termination, as a buffer smash would end the process.
    Abort,
    /// Busy loop, never replying.
    Hang,
}

const INT_FAULT_MIN: u128 = 1 << 31;

fn tokens(body: &[u8]) -> Vec<&[u8]> {
    body.split(|&b| b == b' ')
        .filter(|t| !t.is_empty())
        .collect()
}

fn digits_only_value(arg: &[u8]) -> Option<u128> {
    if arg.is_empty() || !arg.iter().all(u8::is_ascii_digit) {
        return None;
    }
    let mut v: u128 = 0;
    for &d in arg {
        v = match v
            .checked_mul(10)
            .and_then(|v| v.checked_add((d - b'0') as u128))
        {
            Some(v) => v,
            // Longer than u128: certainly past the fault threshold.
            None => return Some(u128::MAX),
        };
    }
    Some(v)
}

/// Decide the fate of one command line (terminator already stripped).
pub fn plan_action(body: &[u8], faults: &FaultConfig) -> LineAction {
    let toks = tokens(body);
    let args = if toks.is_empty() { &[][..] } else { &toks[1..] };

    if faults.fault_overflow && args.iter().any(|a| a.len() >= faults.overflow_threshold) {
        return LineAction::Abort;
    }
    if faults.fault_format
        && args
            .iter()
            .any(|a| a.windows(2).any(|w| w == b"%x" || w == b"%n"))
    {
        return LineAction::Hang;
    }
    if faults.fault_integer
        && args
            .iter()
            .any(|a| digits_only_value(a).is_some_and(|v| v >= INT_FAULT_MIN))
    {
        return LineAction::Abort;
    }

    match toks.first().copied() {
        Some(b"USER") => LineAction::Reply(b"331 ok\r\n"),
        Some(b"PASS") => LineAction::Reply(b"230 ok\r\n"),
        Some(b"CWD") => LineAction::Reply(b"250 ok\r\n"),
        Some(b"RETR") => LineAction::Reply(b"550 not found\r\n"),
        Some(b"REST") => LineAction::Reply(b"350 ok\r\n"),
        Some(b"QUIT") => LineAction::ReplyThenClose(b"221 bye\r\n"),
        _ => LineAction::Reply(b"502 no\r\n"),
    }
}

fn strip_terminator(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

fn handle_connection(stream: TcpStream, faults: &FaultConfig) {
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    if writer.write_all(b"220 harness ready\r\n").is_err() {
        return;
    }
    let mut reader = BufReader::new(stream);
    loop {
        match read_line_bounded(&mut reader, MAX_LINE) {
            Ok(Line::Complete(line)) => {
                match plan_action(strip_terminator(&line), faults) {
                    LineAction::Reply(r) => {
                        if writer.write_all(r).is_err() {
                            return;
                        }
                    }
                    LineAction::ReplyThenClose(r) => {
                        let _ = writer.write_all(r);
                        return;
                    }
                    LineAction::Abort => {
                        // Dies by SIGABRT: the monitor sees a signaled exit.
                        std::process::abort();
                    }
                    LineAction::Hang => loop {
                        std::hint::spin_loop();
                    },
                }
            }
            Ok(Line::TooLong) => {
                if writer.write_all(b"500 line too long\r\n").is_err() {
                    return;
                }
            }
            Ok(Line::Eof) | Err(_) => return,
        }
    }
}

/// Serve until killed. Accepts one connection at a time.
pub fn serve_ftp_subset(bind: &str, port: u16, faults: &FaultConfig) -> std::io::Result<()> {
    let listener = TcpListener::bind((bind, port))?;
    eprintln!(
        "victim listening on {} (overflow={} threshold={} format={} integer={})",
        listener.local_addr()?,
        faults.fault_overflow,
        faults.overflow_threshold,
        faults.fault_format,
        faults.fault_integer
    );
    for stream in listener.incoming() {
        match stream {
            Ok(stream) => handle_connection(stream, faults),
            Err(_) => continue,
        }
    }
    Ok(())
}
