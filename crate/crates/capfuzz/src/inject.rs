//! Attack injection: execute test cases one after the other against the live
//! target, consult the monitor, classify verdicts, and keep the append-only
//! status file that makes campaigns resumable.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TargetConfig;
use crate::testcase::{ScheduleConfig, TestCase, TestPlan};
use crate::util::{preview, unix_millis};

/// Control-channel roundtrips get a generous fixed budget; RESTART has to
/// cover the kill grace period plus a relaunch.
const CONTROL_TIMEOUT: Duration = Duration::from_secs(15);
/// A reply this large without a terminator still counts as the target
/// talking; it also bounds memory against a babbling server.
const REPLY_CAP: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("monitor unreachable: {0}")]
    MonitorUnreachable(String),
    #[error("target never came up (status {0} after one restart attempt)")]
    TargetNeverUp(String),
    #[error("status file i/o: {0}")]
    Io(#[from] io::Error),
    #[error("status file line {0}: {1}")]
    Parse(usize, serde_json::Error),
    #[error("status file has no header line")]
    MissingHeader,
    #[error(
        "status file was recorded against manifest {recorded} but the current manifest hashes to {current}"
    )]
    ResumeManifestMismatch { recorded: String, current: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Ok,
    Crash,
    Hang,
    Refused,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MonitorStatus {
    Running,
    Down,
    Unknown,
}

/// Result of the post-send probe connect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreshConnect {
    Ok,
    Refused,
    Timeout,
}

/// Per-test verdict and supporting evidence.
#[derive(Debug, Clone)]
pub struct InjectionOutcome {
    pub test_id: usize,
    pub verdict: Verdict,
    /// First bytes of the target's reply, when there was one.
    pub response_excerpt: Vec<u8>,
    pub monitor_status: MonitorStatus,
    pub elapsed_ms: u64,
    pub detail: String,
    pub started_ms: u64,
    pub ended_ms: u64,
}

/// The verdict rule: the monitor is the authority on death, a refused probe
/// equals death, silence from a running target is a hang, and everything
/// that does not add up cleanly is an error to be triaged by hand.
pub fn classify_verdict(
    reply_received: bool,
    fresh_connect: FreshConnect,
    monitor_status: MonitorStatus,
) -> Verdict {
    if monitor_status == MonitorStatus::Down || fresh_connect == FreshConnect::Refused {
        Verdict::Crash
    } else if !reply_received && monitor_status == MonitorStatus::Running {
        Verdict::Hang
    } else if reply_received && fresh_connect == FreshConnect::Ok {
        Verdict::Ok
    } else {
        Verdict::Error
    }
}

fn resolve(host: &str, port: u16) -> io::Result<SocketAddr> {
    (host, port).to_socket_addrs()?.next().ok_or_else(|| {
        io::Error::new(
            io::ErrorKind::NotFound,
            format!("{host}:{port} did not resolve"),
        )
    })
}

/// Persistent connection to the monitor agent's control port.
#[derive(Debug)]
pub struct MonitorClient {
    addr: SocketAddr,
    stream: Option<TcpStream>,
}

impl MonitorClient {
    pub fn connect(host: &str, port: u16) -> Result<MonitorClient, InjectError> {
        let addr = resolve(host, port)
            .map_err(|e| InjectError::MonitorUnreachable(format!("{host}:{port}: {e}")))?;
        let stream = TcpStream::connect_timeout(&addr, CONTROL_TIMEOUT)
            .map_err(|e| InjectError::MonitorUnreachable(format!("{addr}: {e}")))?;
        stream.set_read_timeout(Some(CONTROL_TIMEOUT)).ok();
        Ok(MonitorClient {
            addr,
            stream: Some(stream),
        })
    }

    fn roundtrip(&mut self, verb: &str) -> io::Result<String> {
        // One transparent reconnect: the control link may have idled out.
        for attempt in 0..2 {
            if self.stream.is_none() {
                let stream = TcpStream::connect_timeout(&self.addr, CONTROL_TIMEOUT)?;
                stream.set_read_timeout(Some(CONTROL_TIMEOUT)).ok();
                self.stream = Some(stream);
            }
            let stream = self.stream.as_mut().unwrap();
            let result = stream
                .write_all(format!("{verb}\n").as_bytes())
                .and_then(|_| {
                    let mut reply = Vec::new();
                    let mut byte = [0u8; 1];
                    loop {
                        match stream.read(&mut byte)? {
                            0 => {
                                return Err(io::Error::new(
                                    io::ErrorKind::UnexpectedEof,
                                    "control connection closed",
                                ))
                            }
                            _ => {
                                if byte[0] == b'\n' {
                                    return Ok(reply);
                                }
                                reply.push(byte[0]);
                                if reply.len() > 1024 {
                                    return Err(io::Error::new(
                                        io::ErrorKind::InvalidData,
                                        "oversized control reply",
                                    ));
                                }
                            }
                        }
                    }
                });
            match result {
                Ok(reply) => return Ok(String::from_utf8_lossy(&reply).into_owned()),
                Err(e) => {
                    self.stream = None;
                    if attempt == 1 {
                        return Err(e);
                    }
                }
            }
        }
        unreachable!()
    }

    /// Liveness query; failures degrade to UNKNOWN rather than aborting.
    pub fn status(&mut self) -> MonitorStatus {
        match self.roundtrip("STATUS") {
            Ok(reply) if reply == "OK RUNNING" => MonitorStatus::Running,
            Ok(reply) if reply.starts_with("OK DOWN") => MonitorStatus::Down,
            _ => MonitorStatus::Unknown,
        }
    }

    /// RESTART must succeed for the campaign to continue.
    pub fn restart(&mut self) -> Result<(), InjectError> {
        match self.roundtrip("RESTART") {
            Ok(reply) if reply.starts_with("OK RESTARTED") => Ok(()),
            Ok(reply) => Err(InjectError::MonitorUnreachable(format!(
                "RESTART answered {reply:?}"
            ))),
            Err(e) => Err(InjectError::MonitorUnreachable(e.to_string())),
        }
    }

    pub fn kill(&mut self) -> Result<(), InjectError> {
        match self.roundtrip("KILL") {
            Ok(reply) if reply.starts_with("OK KILLED") => Ok(()),
            Ok(reply) => Err(InjectError::MonitorUnreachable(format!(
                "KILL answered {reply:?}"
            ))),
            Err(e) => Err(InjectError::MonitorUnreachable(e.to_string())),
        }
    }
}

enum LineRead {
    Line(Vec<u8>),
    Closed,
    TimedOut,
}

/// Reads LF-terminated lines off a stream under a wall-clock deadline,
/// carrying leftover bytes between calls.
struct DeadlineReader {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl DeadlineReader {
    fn new(stream: TcpStream) -> DeadlineReader {
        DeadlineReader {
            stream,
            buf: Vec::new(),
        }
    }

    fn take_line(&mut self) -> Option<Vec<u8>> {
        let pos = self.buf.iter().position(|&b| b == b'\n')?;
        let rest = self.buf.split_off(pos + 1);
        Some(std::mem::replace(&mut self.buf, rest))
    }

    fn read_line_within(&mut self, budget: Duration) -> LineRead {
        let deadline = Instant::now() + budget;
        loop {
            if let Some(line) = self.take_line() {
                return LineRead::Line(line);
            }
            if self.buf.len() >= REPLY_CAP {
                // Endless unterminated chatter: the target is alive and
                // replying, which is all the caller needs to know.
                return LineRead::Line(std::mem::take(&mut self.buf));
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return LineRead::TimedOut;
            }
            self.stream
                .set_read_timeout(Some(remaining.max(Duration::from_millis(1))))
                .ok();
            let mut chunk = [0u8; 1024];
            match self.stream.read(&mut chunk) {
                Ok(0) => return LineRead::Closed,
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e)
                    if e.kind() == io::ErrorKind::WouldBlock
                        || e.kind() == io::ErrorKind::TimedOut => {}
                Err(_) => return LineRead::Closed,
            }
        }
    }
}

fn probe_connect(addr: SocketAddr, timeout: Duration) -> FreshConnect {
    match TcpStream::connect_timeout(&addr, timeout) {
        Ok(_) => FreshConnect::Ok,
        Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => FreshConnect::Refused,
        Err(_) => FreshConnect::Timeout,
    }
}

/// Run one test case: connect, swallow the banner, replay the flow prefix,
/// send the mutated message, wait out the hang budget, probe with a fresh
/// connect, ask the monitor, classify.
pub fn execute_testcase(
    plan: &TestPlan,
    tc: &TestCase,
    target: &TargetConfig,
    monitor: &mut MonitorClient,
) -> InjectionOutcome {
    let started_ms = unix_millis();
    let t0 = Instant::now();
    let response = Duration::from_millis(target.response_timeout_ms);
    let hang = Duration::from_millis(target.hang_timeout_ms);

    let finish = |verdict: Verdict,
                  monitor_status: MonitorStatus,
                  response_excerpt: Vec<u8>,
                  detail: String| InjectionOutcome {
        test_id: tc.test_id,
        verdict,
        response_excerpt,
        monitor_status,
        elapsed_ms: t0.elapsed().as_millis() as u64,
        detail,
        started_ms,
        ended_ms: unix_millis(),
    };

    let addr = match resolve(&target.host, target.port) {
        Ok(addr) => addr,
        Err(e) => {
            let ms = monitor.status();
            return finish(
                Verdict::Error,
                ms,
                Vec::new(),
                format!("resolve target: {e}"),
            );
        }
    };

    let stream = match TcpStream::connect_timeout(&addr, response) {
        Ok(s) => s,
        Err(e) => {
            let ms = monitor.status();
            return finish(
                Verdict::Refused,
                ms,
                Vec::new(),
                format!("connection refused before send: {e}"),
            );
        }
    };
    stream.set_nodelay(true).ok();
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(e) => {
            let ms = monitor.status();
            return finish(Verdict::Error, ms, Vec::new(), format!("socket clone: {e}"));
        }
    };
    let mut reader = DeadlineReader::new(stream);

    // Servers that speak first get their banner swallowed here; quiet ones
    // cost one response timeout.
    let _banner = reader.read_line_within(response);

    let mut send_failure: Option<String> = None;
    for (i, message) in plan.prefix_messages(tc).iter().enumerate() {
        if let Err(e) = writer.write_all(&message.bytes) {
            send_failure = Some(format!("send failed at prefix message {i}: {e}"));
            break;
        }
        // Lockstep replay: wait for one reply line, tolerate silence.
        let _ = reader.read_line_within(response);
    }

    let mutated = match plan.render(tc) {
        Ok(m) => m,
        Err(e) => {
            let ms = monitor.status();
            return finish(Verdict::Error, ms, Vec::new(), e.to_string());
        }
    };

    let mut reply = LineRead::TimedOut;
    if send_failure.is_none() {
        match writer.write_all(&mutated) {
            Ok(()) => reply = reader.read_line_within(hang),
            Err(e) => send_failure = Some(format!("send failed on mutated message: {e}")),
        }
    }

    let (reply_received, excerpt, reply_note) = match &reply {
        LineRead::Line(line) => {
            let excerpt = line[..line.len().min(256)].to_vec();
            let note = format!("reply \"{}\"", preview(line, 32));
            (true, excerpt, note)
        }
        LineRead::Closed => (
            false,
            Vec::new(),
            "connection closed without reply".to_string(),
        ),
        LineRead::TimedOut => (
            false,
            Vec::new(),
            format!("no reply within {} ms", target.hang_timeout_ms),
        ),
    };

    let fresh = probe_connect(addr, response);
    let monitor_status = monitor.status();
    let verdict = classify_verdict(reply_received, fresh, monitor_status);

    let mut detail = String::new();
    if let Some(f) = &send_failure {
        detail.push_str(f);
        detail.push_str("; ");
    }
    detail.push_str(&reply_note);
    detail.push_str(match fresh {
        FreshConnect::Ok => "; probe=ok",
        FreshConnect::Refused => "; probe=refused",
        FreshConnect::Timeout => "; probe=timeout",
    });

    finish(verdict, monitor_status, excerpt, detail)
}

/// Status file header: first line of the JSON Lines status file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusHeader {
    pub campaign_id: String,
    pub pcap: String,
    pub target: TargetConfig,
    pub schedules: ScheduleConfig,
    pub started_at: u64,
    pub testcase_count: usize,
    pub manifest_sha256: String,
    /// Reassembly observations worth carrying into the report: sequence
    /// gaps, clipped retransmissions.
    #[serde(default)]
    pub corpus_notes: Vec<String>,
}

/// One outcome line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusLine {
    pub test_id: usize,
    pub verdict: Verdict,
    pub monitor_status: MonitorStatus,
    pub elapsed_ms: u64,
    pub detail: String,
    pub started_ms: u64,
    pub ended_ms: u64,
}

impl From<&InjectionOutcome> for StatusLine {
    fn from(o: &InjectionOutcome) -> StatusLine {
        StatusLine {
            test_id: o.test_id,
            verdict: o.verdict,
            monitor_status: o.monitor_status,
            elapsed_ms: o.elapsed_ms,
            detail: o.detail.clone(),
            started_ms: o.started_ms,
            ended_ms: o.ended_ms,
        }
    }
}

/// Deterministic campaign identity: same pcap, schedules and target endpoint
/// mean the same id, so reruns are comparable.
pub fn campaign_id(manifest_sha256: &str, target: &TargetConfig) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(manifest_sha256.as_bytes());
    hasher.update(target.host.as_bytes());
    hasher.update(target.port.to_le_bytes());
    format!("{:x}", hasher.finalize())[..12].to_string()
}

/// Append-only writer for the status file. Every outcome is flushed as soon
/// as it is classified so an interrupted campaign loses nothing.
pub struct StatusAppender {
    file: File,
}

impl StatusAppender {
    /// Start a fresh status file with its header line.
    pub fn create(path: &Path, header: &StatusHeader) -> Result<StatusAppender, InjectError> {
        let mut file = File::create(path)?;
        let mut line = serde_json::to_vec(header).map_err(io::Error::from)?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.flush()?;
        Ok(StatusAppender { file })
    }

    /// Reopen an existing status file for appending (resume).
    pub fn append_to(path: &Path) -> Result<StatusAppender, InjectError> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(StatusAppender { file })
    }

    /// Whole lines only: each outcome goes out as one write so a killed
    /// campaign cannot tear a record in half.
    pub fn append(&mut self, outcome: &InjectionOutcome) -> Result<(), InjectError> {
        let mut line = serde_json::to_vec(&StatusLine::from(outcome)).map_err(io::Error::from)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}

/// Parse a status file back into its header and outcome lines. A trailing
/// fragment without a line terminator (campaign killed mid-write) is
/// dropped; corruption anywhere else is an error.
pub fn read_status(path: &Path) -> Result<(StatusHeader, Vec<StatusLine>), InjectError> {
    let text = std::fs::read_to_string(path)?;
    let ends_terminated = text.ends_with('\n');
    let lines: Vec<&str> = text.split('\n').filter(|l| !l.trim().is_empty()).collect();
    let header_line = lines.first().ok_or(InjectError::MissingHeader)?;
    let header: StatusHeader =
        serde_json::from_str(header_line).map_err(|e| InjectError::Parse(1, e))?;
    let mut outcomes = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        match serde_json::from_str(line) {
            Ok(parsed) => outcomes.push(parsed),
            Err(e) => {
                if i == lines.len() - 1 && !ends_terminated {
                    break;
                }
                return Err(InjectError::Parse(i + 1, e));
            }
        }
    }
    Ok((header, outcomes))
}

/// Campaign execution knobs beyond the target config.
#[derive(Debug, Default)]
pub struct CampaignOptions {
    pub restart_every_case: bool,
    /// Outcomes already recorded (resume): their test ids are skipped.
    pub already_done: BTreeSet<usize>,
    /// Optional filter: run only these test ids.
    pub test_ids: Option<BTreeSet<usize>>,
    pub verbose: bool,
}

fn settle(target: &TargetConfig) {
    std::thread::sleep(Duration::from_millis(target.settle_delay_ms));
}

fn ensure_target_up(monitor: &mut MonitorClient, target: &TargetConfig) -> Result<(), InjectError> {
    if monitor.status() == MonitorStatus::Running {
        return Ok(());
    }
    monitor.restart()?;
    settle(target);
    match monitor.status() {
        MonitorStatus::Running => Ok(()),
        other => Err(InjectError::TargetNeverUp(format!("{other:?}"))),
    }
}

/// Execute the plan strictly in test-id order, one case at a time. Non-OK
/// verdicts trigger a restart (hangs get a kill first); a refused connect
/// before the send restarts the target and retries that case once.
pub fn run_campaign(
    plan: &TestPlan,
    target: &TargetConfig,
    monitor: &mut MonitorClient,
    status: &mut StatusAppender,
    opts: &CampaignOptions,
) -> Result<Vec<InjectionOutcome>, InjectError> {
    ensure_target_up(monitor, target)?;

    let mut outcomes = Vec::new();
    for tc in &plan.cases {
        if opts.already_done.contains(&tc.test_id) {
            continue;
        }
        if let Some(filter) = &opts.test_ids {
            if !filter.contains(&tc.test_id) {
                continue;
            }
        }

        let mut outcome = execute_testcase(plan, tc, target, monitor);
        if outcome.verdict == Verdict::Refused {
            // The target was down before this test; restart, retry once and
            // record the second attempt whatever it says.
            monitor.restart()?;
            settle(target);
            outcome = execute_testcase(plan, tc, target, monitor);
        }

        if opts.verbose {
            eprintln!(
                "test {:>5} {:<7} {:>6} ms  {}",
                outcome.test_id,
                format!("{:?}", outcome.verdict).to_uppercase(),
                outcome.elapsed_ms,
                outcome.detail
            );
        }
        status.append(&outcome)?;
        let verdict = outcome.verdict;
        outcomes.push(outcome);

        if verdict != Verdict::Ok {
            if verdict == Verdict::Hang {
                // A hung server never exits on its own; put it down first.
                monitor.kill()?;
            }
            monitor.restart()?;
            settle(target);
        } else if opts.restart_every_case {
            monitor.restart()?;
            settle(target);
        }
    }
    Ok(outcomes)
}
