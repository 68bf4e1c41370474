//! Streaming verified trajectories to a robot over a line-framed TCP socket.
//!
//! Each frame is one JSON object per line. The robot answers every frame with
//! `ack <t_ms>` before the next one is sent; the stream closes with `end`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use robocheck_core::critics::{CriticReport, Flag};
use robocheck_core::program::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployFrame {
    pub t_ms: u64,
    pub q: Vec<f64>,
    pub gripper_open: bool,
}

impl DeployFrame {
    pub fn from_trajectory(traj: &Trajectory) -> Vec<DeployFrame> {
        traj.states
            .iter()
            .map(|s| DeployFrame {
                t_ms: s.t_ms,
                q: s.q.0.clone(),
                gripper_open: s.gripper_open,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployOutcome {
    pub frames_sent: usize,
    pub last_t_ms: Option<u64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeployError {
    #[error("deployment refused: {} reported an Error", critics.join(", "))]
    Refused { critics: Vec<String> },
    #[error("trajectory has no states")]
    Empty,
    #[error("frame timestamps must increase strictly (state {index})")]
    NotMonotone { index: usize },
    #[error("cannot connect to {addr}: {message}")]
    Connect { addr: String, message: String },
    #[error("connection lost after {} frames ({message})", acked)]
    ConnectionLost {
        acked: usize,
        last_acked_t_ms: Option<u64>,
        message: String,
    },
    #[error("robot rejected frame t_ms={t_ms}: {reason}")]
    Nak { t_ms: u64, reason: String },
    #[error("unexpected reply to frame t_ms={t_ms}: {reply:?}")]
    Protocol { t_ms: u64, reply: String },
}

#[derive(Debug, Clone, Copy)]
pub struct DeployOptions {
    pub connect_timeout: Duration,
    /// How long to wait for each acknowledgement.
    pub ack_timeout: Duration,
}

impl Default for DeployOptions {
    fn default() -> Self {
        DeployOptions {
            connect_timeout: Duration::from_secs(5),
            ack_timeout: Duration::from_secs(5),
        }
    }
}

/// The safety gate: every Error-flagged report blocks deployment.
pub fn check_gate(reports: &[CriticReport]) -> Result<(), DeployError> {
    let critics: Vec<String> = reports
        .iter()
        .filter(|r| r.flag == Flag::Error)
        .map(|r| r.critic.clone())
        .collect();
    if critics.is_empty() {
        Ok(())
    } else {
        Err(DeployError::Refused { critics })
    }
}

/// Gates on `reports`, then streams the trajectory to `addr`.
pub fn deploy(
    traj: &Trajectory,
    reports: &[CriticReport],
    addr: &str,
    opts: &DeployOptions,
) -> Result<DeployOutcome, DeployError> {
    check_gate(reports)?;
    let warned: Vec<&str> = reports
        .iter()
        .filter(|r| r.flag == Flag::Warning)
        .map(|r| r.critic.as_str())
        .collect();
    if !warned.is_empty() {
        tracing::warn!(critics = ?warned, "deploying a trajectory with warnings");
    }
    send_frames(&DeployFrame::from_trajectory(traj), addr, opts)
}

/// Streams frames without any gating. Callers are expected to have run
/// [`check_gate`].
pub fn send_frames(
    frames: &[DeployFrame],
    addr: &str,
    opts: &DeployOptions,
) -> Result<DeployOutcome, DeployError> {
    if frames.is_empty() {
        return Err(DeployError::Empty);
    }
    if let Some(i) = frames.windows(2).position(|w| w[1].t_ms <= w[0].t_ms) {
        return Err(DeployError::NotMonotone { index: i + 1 });
    }
    let connect_err = |message: String| DeployError::Connect {
        addr: addr.to_owned(),
        message,
    };
    let sock = addr
        .to_socket_addrs()
        .map_err(|e| connect_err(e.to_string()))?
        .next()
        .ok_or_else(|| connect_err("address did not resolve".into()))?;
    let mut stream = TcpStream::connect_timeout(&sock, opts.connect_timeout)
        .map_err(|e| connect_err(e.to_string()))?;
    stream
        .set_read_timeout(Some(opts.ack_timeout))
        .and_then(|_| stream.set_nodelay(true))
        .map_err(|e| connect_err(e.to_string()))?;
    let mut reader = BufReader::new(stream.try_clone().map_err(|e| connect_err(e.to_string()))?);

    let mut acked = 0;
    let mut last = None;
    let lost = |acked: usize, last: Option<u64>, message: String| DeployError::ConnectionLost {
        acked,
        last_acked_t_ms: last,
        message,
    };
    let mut line = String::new();
    for frame in frames {
        let mut text = serde_json::to_string(frame).expect("frame serializes");
        text.push('\n');
        stream
            .write_all(text.as_bytes())
            .map_err(|e| lost(acked, last, e.to_string()))?;
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => return Err(lost(acked, last, "robot closed the connection".into())),
            Ok(_) => {}
            Err(e) => return Err(lost(acked, last, e.to_string())),
        }
        let reply = line.trim_end();
        if let Some(reason) = reply.strip_prefix("nak") {
            return Err(DeployError::Nak {
                t_ms: frame.t_ms,
                reason: reason.trim().to_owned(),
            });
        }
        match reply.strip_prefix("ack ").map(|t| t.trim().parse::<u64>()) {
            Some(Ok(t)) if t == frame.t_ms => {
                acked += 1;
                last = Some(t);
            }
            _ => {
                return Err(DeployError::Protocol {
                    t_ms: frame.t_ms,
                    reply: reply.to_owned(),
                })
            }
        }
    }
    stream
        .write_all(b"end\n")
        .and_then(|_| stream.flush())
        .map_err(|e| lost(acked, last, e.to_string()))?;
    Ok(DeployOutcome {
        frames_sent: acked,
        last_t_ms: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(flag: Flag) -> CriticReport {
        CriticReport {
            flag,
            ..CriticReport::ok("collision", "")
        }
    }

    #[test]
    fn gate_blocks_errors_only() {
        assert!(check_gate(&[report(Flag::Ok), report(Flag::Warning)]).is_ok());
        assert!(check_gate(&[]).is_ok());
        assert_eq!(
            check_gate(&[report(Flag::Error)]),
            Err(DeployError::Refused {
                critics: vec!["collision".into()]
            })
        );
    }

    #[test]
    fn frames_must_increase() {
        let f = |t| DeployFrame {
            t_ms: t,
            q: vec![0.0],
            gripper_open: true,
        };
        let err = send_frames(
            &[f(0), f(50), f(50)],
            "127.0.0.1:1",
            &DeployOptions::default(),
        );
        assert_eq!(err, Err(DeployError::NotMonotone { index: 2 }));
        assert_eq!(
            send_frames(&[], "127.0.0.1:1", &DeployOptions::default()),
            Err(DeployError::Empty)
        );
    }

    #[test]
    fn frame_wire_format() {
        let f = DeployFrame {
            t_ms: 1234,
            q: vec![0.5, -1.0],
            gripper_open: false,
        };
        assert_eq!(
            serde_json::to_string(&f).unwrap(),
            r#"{"t_ms":1234,"q":[0.5,-1.0],"gripper_open":false}"#
        );
    }
}
