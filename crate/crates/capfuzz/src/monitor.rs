//! Monitor agent: supervises the target process next to it and answers a
//! three-verb control protocol over TCP.
//!
//! Wire format: ASCII lines terminated by a single LF. Verbs `STATUS`,
//! `RESTART`, `KILL`; replies start `OK ` or `ERR `. Liveness is read from
//! the real process state on every query, never cached while the child runs.

use std::io::{BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::util::{read_line_bounded, Line};

/// Grace period between SIGTERM and SIGKILL.
const KILL_GRACE: Duration = Duration::from_millis(1000);
const KILL_POLL: Duration = Duration::from_millis(20);
const MAX_CONTROL_LINE: usize = 8192;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("failed to bind control port: {0}")]
    BindFailure(std::io::Error),
    #[error("failed to launch target `{command}`: {source}")]
    SpawnFailure {
        command: String,
        source: std::io::Error,
    },
    #[error("target command is empty")]
    EmptyCommand,
}

/// Owns the supervised child. The control loop is a thin wrapper over
/// [`Supervisor::handle_command`].
pub struct Supervisor {
    argv: Vec<String>,
    child: Option<Child>,
    last_exit: Option<ExitStatus>,
    restarts: u64,
}

impl Supervisor {
    /// Split the command line on whitespace (no shell involved) and launch
    /// the target as a supervised child.
    pub fn launch(command_line: &str) -> Result<Supervisor, MonitorError> {
        let argv: Vec<String> = command_line.split_whitespace().map(String::from).collect();
        if argv.is_empty() {
            return Err(MonitorError::EmptyCommand);
        }
        let mut sup = Supervisor {
            argv,
            child: None,
            last_exit: None,
            restarts: 0,
        };
        sup.spawn_child()?;
        Ok(sup)
    }

    fn spawn_child(&mut self) -> Result<(), MonitorError> {
        let child = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .stdin(Stdio::null())
            .spawn()
            .map_err(|source| MonitorError::SpawnFailure {
                command: self.argv.join(" "),
                source,
            })?;
        self.child = Some(child);
        self.last_exit = None;
        Ok(())
    }

    /// Ground truth at call time: reap the child if it has exited.
    fn poll_exit(&mut self) -> Option<ExitStatus> {
        if let Some(child) = self.child.as_mut() {
            match child.try_wait() {
                Ok(Some(status)) => {
                    self.last_exit = Some(status);
                    self.child = None;
                }
                Ok(None) => return None,
                Err(_) => return None,
            }
        }
        self.last_exit
    }

    pub fn child_running(&mut self) -> bool {
        self.child.is_some() && self.poll_exit().is_none()
    }

    fn down_reply(status: ExitStatus) -> String {
        match status.code() {
            Some(code) => format!("OK DOWN {code}"),
            // Killed by a signal: there is no exit code to report.
            None => "OK DOWN signaled".to_string(),
        }
    }

    fn status_reply(&mut self) -> String {
        match self.poll_exit() {
            None if self.child.is_some() => "OK RUNNING".to_string(),
            Some(status) => Self::down_reply(status),
            // Child consumed earlier (killed) without a recorded status.
            None => "OK DOWN signaled".to_string(),
        }
    }

    /// SIGTERM, wait up to the grace period, then SIGKILL. Reaps the child
    /// and records how it died.
    fn kill_child(&mut self) {
        if self.poll_exit().is_some() || self.child.is_none() {
            return;
        }
        let child = self.child.as_mut().unwrap();
        let pid = child.id() as libc::pid_t;
        unsafe {
            libc::kill(pid, libc::SIGTERM);
        }
        let deadline = Instant::now() + KILL_GRACE;
        loop {
            match child.try_wait() {
                Ok(Some(status)) => {
                    self.last_exit = Some(status);
                    self.child = None;
                    return;
                }
                Ok(None) => {}
                Err(_) => break,
            }
            if Instant::now() >= deadline {
                break;
            }
            std::thread::sleep(KILL_POLL);
        }
        // Still alive (or unknowable): force it.
        let _ = child.kill();
        if let Ok(status) = child.wait() {
            self.last_exit = Some(status);
        }
        self.child = None;
    }

    /// Process one control line (terminator optional) and produce the reply
    /// text, without the trailing LF.
    pub fn handle_command(&mut self, line: &[u8]) -> String {
        let line = line.strip_suffix(b"\n").unwrap_or(line);
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        match line {
            b"STATUS" => self.status_reply(),
            b"RESTART" => {
                self.kill_child();
                match self.spawn_child() {
                    Ok(()) => {
                        self.restarts += 1;
                        format!("OK RESTARTED {}", self.restarts)
                    }
                    Err(e) => format!("ERR restart failed: {e}"),
                }
            }
            b"KILL" => {
                self.kill_child();
                "OK KILLED".to_string()
            }
            _ => "ERR unknown command".to_string(),
        }
    }

    pub fn restarts(&self) -> u64 {
        self.restarts
    }
}

impl Drop for Supervisor {
    fn drop(&mut self) {
        self.kill_child();
    }
}

/// Launch the target, then serve control connections one at a time until the
/// process is terminated. A spawn failure is fatal before the port is bound.
pub fn serve_control(bind: &str, port: u16, command_line: &str) -> Result<(), MonitorError> {
    let mut supervisor = Supervisor::launch(command_line)?;
    let listener = TcpListener::bind((bind, port)).map_err(MonitorError::BindFailure)?;
    eprintln!(
        "monitor listening on {}, supervising `{command_line}`",
        listener.local_addr().map_err(MonitorError::BindFailure)?
    );
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(_) => continue,
        };
        serve_connection(stream, &mut supervisor);
    }
    Ok(())
}

fn serve_connection(stream: TcpStream, supervisor: &mut Supervisor) {
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let mut reader = BufReader::new(stream);
    loop {
        let reply = match read_line_bounded(&mut reader, MAX_CONTROL_LINE) {
            Ok(Line::Complete(line)) => supervisor.handle_command(&line),
            Ok(Line::TooLong) => "ERR line too long".to_string(),
            Ok(Line::Eof) | Err(_) => return,
        };
        if writer
            .write_all(format!("{reply}\n").as_bytes())
            .and_then(|_| writer.flush())
            .is_err()
        {
            return;
        }
    }
}
