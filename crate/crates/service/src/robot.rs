//! Stand-in robot endpoint: validates and acknowledges deploy frames and logs
//! what it received.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::deploy::DeployFrame;

#[derive(Debug, Clone)]
pub struct MockRobotConfig {
    /// Expected length of `q`.
    pub dof: usize,
    /// JSON-lines log of every connection's frames and outcome.
    pub log_path: Option<PathBuf>,
    /// Fault injection: drop the connection after this many acks.
    pub max_acks: Option<usize>,
}

impl Default for MockRobotConfig {
    fn default() -> Self {
        MockRobotConfig {
            dof: 6,
            log_path: None,
            max_acks: None,
        }
    }
}

/// One line of the robot log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Frame { conn: u64, frame: DeployFrame },
    End { conn: u64, frames: usize },
    Nak { conn: u64, reason: String },
    Dropped { conn: u64, frames: usize },
}

impl LogEntry {
    pub fn conn(&self) -> u64 {
        match self {
            LogEntry::Frame { conn, .. }
            | LogEntry::End { conn, .. }
            | LogEntry::Nak { conn, .. }
            | LogEntry::Dropped { conn, .. } => *conn,
        }
    }
}

/// Reads a robot log written by [`MockRobot`].
pub fn read_log(path: impl AsRef<Path>) -> io::Result<Vec<LogEntry>> {
    let file = File::open(path)?;
    BufReader::new(file)
        .lines()
        .map(|l| {
            l.and_then(|l| {
                serde_json::from_str(&l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
            })
        })
        .collect()
}

pub struct MockRobot {
    listener: TcpListener,
    cfg: MockRobotConfig,
    log: Option<BufWriter<File>>,
    conn: u64,
}

impl MockRobot {
    pub fn bind(addr: &str, cfg: MockRobotConfig) -> io::Result<Self> {
        let log = match &cfg.log_path {
            Some(p) => Some(BufWriter::new(
                OpenOptions::new().create(true).append(true).open(p)?,
            )),
            None => None,
        };
        Ok(MockRobot {
            listener: TcpListener::bind(addr)?,
            cfg,
            log,
            conn: 0,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves connections one at a time until the process ends.
    pub fn run(mut self) -> io::Result<()> {
        loop {
            self.serve_next()?;
        }
    }

    /// Accepts one connection and handles it to completion. Returns the
    /// connection's final log entry.
    pub fn serve_next(&mut self) -> io::Result<LogEntry> {
        let (stream, peer) = self.listener.accept()?;
        self.conn += 1;
        tracing::debug!(%peer, conn = self.conn, "robot connection");
        let outcome = self.handle(stream);
        self.flush()?;
        outcome
    }

    /// Runs the robot on a background thread.
    pub fn spawn(mut self) -> io::Result<MockRobotHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                if let Err(e) = self.serve_next() {
                    tracing::warn!(error = %e, "robot connection failed");
                }
            }
        });
        Ok(MockRobotHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    fn record(&mut self, entry: &LogEntry) -> io::Result<()> {
        if let Some(w) = &mut self.log {
            serde_json::to_writer(&mut *w, entry)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        match &mut self.log {
            Some(w) => w.flush(),
            None => Ok(()),
        }
    }

    fn handle(&mut self, stream: TcpStream) -> io::Result<LogEntry> {
        let conn = self.conn;
        stream.set_nodelay(true)?;
        let mut out = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut last_t: Option<u64> = None;
        let mut frames = 0;
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                // Peer vanished without `end`.
                let entry = LogEntry::Dropped { conn, frames };
                self.record(&entry)?;
                return Ok(entry);
            }
            let text = line.trim_end();
            if text == "end" {
                let entry = LogEntry::End { conn, frames };
                self.record(&entry)?;
                return Ok(entry);
            }
            let reason = match serde_json::from_str::<DeployFrame>(text) {
                Err(e) => Some(format!("malformed frame: {e}")),
                Ok(f) if f.q.len() != self.cfg.dof => Some(format!(
                    "q has {} values, expected {}",
                    f.q.len(),
                    self.cfg.dof
                )),
                Ok(f) if last_t.is_some_and(|t| f.t_ms <= t) => Some(format!(
                    "t_ms {} does not follow {}",
                    f.t_ms,
                    last_t.unwrap_or_default()
                )),
                Ok(f) => {
                    self.record(&LogEntry::Frame {
                        conn,
                        frame: f.clone(),
                    })?;
                    out.write_all(format!("ack {}\n", f.t_ms).as_bytes())?;
                    last_t = Some(f.t_ms);
                    frames += 1;
                    None
                }
            };
            if let Some(reason) = reason {
                // Best effort: the peer may already be gone.
                let _ = out.write_all(format!("nak {reason}\n").as_bytes());
                let entry = LogEntry::Nak { conn, reason };
                self.record(&entry)?;
                return Ok(entry);
            }
            if self.cfg.max_acks.is_some_and(|n| frames >= n) {
                let entry = LogEntry::Dropped { conn, frames };
                self.record(&entry)?;
                return Ok(entry);
            }
        }
    }
}

/// Background robot; stops when dropped.
pub struct MockRobotHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl MockRobotHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for MockRobotHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept so the loop sees the flag.
        if let Ok(mut s) = TcpStream::connect(self.addr) {
            let _ = s.write_all(b"end\n");
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exchange(robot: &mut MockRobot, lines: &[&str]) -> (Vec<String>, LogEntry) {
        let addr = robot.local_addr().unwrap();
        let payload: String = lines.iter().map(|l| format!("{l}\n")).collect();
        let client = std::thread::spawn(move || {
            let mut s = TcpStream::connect(addr).unwrap();
            s.write_all(payload.as_bytes()).unwrap();
            s.shutdown(std::net::Shutdown::Write).unwrap();
            BufReader::new(s)
                .lines()
                .map_while(Result::ok)
                .collect::<Vec<_>>()
        });
        let entry = robot.serve_next().unwrap();
        (client.join().unwrap(), entry)
    }

    fn robot(dof: usize) -> MockRobot {
        MockRobot::bind(
            "127.0.0.1:0",
            MockRobotConfig {
                dof,
                ..MockRobotConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn valid_stream_is_acked() {
        let mut r = robot(2);
        let (replies, entry) = exchange(
            &mut r,
            &[
                r#"{"t_ms":0,"q":[0,0],"gripper_open":true}"#,
                r#"{"t_ms":50,"q":[0,1],"gripper_open":false}"#,
                "end",
            ],
        );
        assert_eq!(replies, ["ack 0", "ack 50"]);
        assert_eq!(entry, LogEntry::End { conn: 1, frames: 2 });
    }

    #[test]
    fn repeated_timestamp_is_rejected() {
        let mut r = robot(1);
        let (replies, entry) = exchange(
            &mut r,
            &[
                r#"{"t_ms":50,"q":[0],"gripper_open":true}"#,
                r#"{"t_ms":50,"q":[0],"gripper_open":true}"#,
            ],
        );
        assert_eq!(replies[0], "ack 50");
        assert!(replies[1].starts_with("nak "));
        assert!(matches!(entry, LogEntry::Nak { .. }));
    }

    #[test]
    fn wrong_arity_is_rejected() {
        let mut r = robot(6);
        let (replies, _) = exchange(&mut r, &[r#"{"t_ms":0,"q":[0,0],"gripper_open":true}"#]);
        assert_eq!(replies, ["nak q has 2 values, expected 6"]);
    }

    #[test]
    fn garbage_is_rejected() {
        let mut r = robot(6);
        let (replies, _) = exchange(&mut r, &["hello"]);
        assert!(replies[0].starts_with("nak malformed frame"));
    }
}
