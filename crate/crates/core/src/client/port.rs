//! Client-side view of the server: the same operations over an in-process
//! hub handle or a real TCP connection. Both paths funnel into identical hub
//! code, so transcripts come out the same either way.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::Duration;

use crate::protocol::{encode_message, AgentMessage};
use crate::registry::AgentProfile;
use crate::server::{ConnectError, Hub, SetupError};
use crate::wire::{parse_line, ControlFrame, ScoredProfile, WireLine};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("server rejected request: {code}: {detail}")]
    Rejected { code: String, detail: String },
    #[error("connect failed: {0}")]
    Connect(String),
}

/// One inbound line, already demultiplexed.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Frame(AgentMessage),
    Reject { code: String, detail: String, comm_id: Option<String> },
    Shutdown,
}

pub trait ServerPort: Send {
    fn connect(
        &mut self,
        name: &str,
        token: &str,
        profile: Option<AgentProfile>,
    ) -> Result<(), ClientError>;
    fn send_frame(&mut self, msg: &AgentMessage) -> Result<(), ClientError>;
    fn search(
        &mut self,
        characteristics: Vec<String>,
        limit: usize,
    ) -> Result<Vec<(AgentProfile, f64)>, ClientError>;
    fn setup_group(
        &mut self,
        team_members: Vec<String>,
        goal: &str,
        team_up_depth: u32,
        max_turns: Option<u32>,
        parent: Option<(String, String)>,
    ) -> Result<String, ClientError>;
    fn fetch_backlog(
        &mut self,
        comm_id: &str,
        from_seq: u64,
    ) -> Result<Vec<AgentMessage>, ClientError>;
    /// Next inbound line; `Ok(None)` on timeout.
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Inbound>, ClientError>;
    fn disconnect(&mut self);
}

fn classify(line: &str) -> Option<Inbound> {
    match parse_line(line.trim_end()) {
        Ok(WireLine::Message(msg)) => Some(Inbound::Frame(msg)),
        Ok(WireLine::Control(ControlFrame::Reject { code, detail, comm_id })) => {
            Some(Inbound::Reject { code, detail, comm_id })
        }
        Ok(WireLine::Control(ControlFrame::Shutdown)) => Some(Inbound::Shutdown),
        _ => None,
    }
}

/// Direct handle on an in-process [`Hub`].
pub struct InProcPort {
    hub: Arc<Hub>,
    name: String,
    rx: Option<Receiver<String>>,
}

impl InProcPort {
    pub fn new(hub: Arc<Hub>) -> Self {
        InProcPort { hub, name: String::new(), rx: None }
    }
}

impl ServerPort for InProcPort {
    fn connect(
        &mut self,
        name: &str,
        token: &str,
        profile: Option<AgentProfile>,
    ) -> Result<(), ClientError> {
        let (tx, rx) = mpsc::channel();
        self.hub
            .connect(name, token, profile, tx)
            .map_err(|e: ConnectError| ClientError::Connect(e.to_string()))?;
        self.name = name.to_string();
        self.rx = Some(rx);
        Ok(())
    }

    fn send_frame(&mut self, msg: &AgentMessage) -> Result<(), ClientError> {
        let line = encode_message(msg).map_err(|e| ClientError::Transport(e.to_string()))?;
        self.hub.ingest_line(&self.name, &line);
        Ok(())
    }

    fn search(
        &mut self,
        characteristics: Vec<String>,
        limit: usize,
    ) -> Result<Vec<(AgentProfile, f64)>, ClientError> {
        Ok(self
            .hub
            .search_agents(&crate::registry::SearchQuery { characteristics, limit }))
    }

    fn setup_group(
        &mut self,
        team_members: Vec<String>,
        goal: &str,
        team_up_depth: u32,
        max_turns: Option<u32>,
        parent: Option<(String, String)>,
    ) -> Result<String, ClientError> {
        self.hub
            .setup_group(&self.name, &team_members, goal, team_up_depth, max_turns, parent)
            .map_err(|e: SetupError| ClientError::Rejected {
                code: match e {
                    SetupError::UnknownMember(_) => "unknown_member".into(),
                    SetupError::DepthExceeded { .. } => "depth_exceeded".into(),
                    SetupError::UnknownParent(_) => "unknown_parent".into(),
                    SetupError::EmptyGroup => "empty_group".into(),
                },
                detail: e.to_string(),
            })
    }

    fn fetch_backlog(
        &mut self,
        comm_id: &str,
        from_seq: u64,
    ) -> Result<Vec<AgentMessage>, ClientError> {
        let snapshot = self
            .hub
            .group_snapshot(comm_id)
            .ok_or_else(|| ClientError::Rejected {
                code: "unknown_group".into(),
                detail: comm_id.to_string(),
            })?;
        Ok(snapshot
            .transcript
            .into_iter()
            .filter(|m| m.seq.unwrap_or(0) >= from_seq)
            .collect())
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Inbound>, ClientError> {
        let Some(rx) = self.rx.as_ref() else {
            return Err(ClientError::Transport("not connected".into()));
        };
        loop {
            match rx.recv_timeout(timeout) {
                Ok(line) => {
                    if let Some(inbound) = classify(&line) {
                        return Ok(Some(inbound));
                    }
                    // Unknown control chatter; skip and keep waiting.
                }
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ClientError::Transport("session closed".into()))
                }
            }
        }
    }

    fn disconnect(&mut self) {
        let _ = self.hub.disconnect(&self.name);
        self.rx = None;
    }
}

/// NDJSON over a real socket; a reader thread feeds inbound lines into a
/// channel, responses are correlated by rid, everything else is buffered
/// for `recv_timeout`.
pub struct TcpPort {
    addr: String,
    stream: Option<TcpStream>,
    rx: Option<Receiver<String>>,
    buffered: VecDeque<Inbound>,
    next_rid: u64,
}

impl TcpPort {
    pub fn new(addr: impl Into<String>) -> Self {
        TcpPort {
            addr: addr.into(),
            stream: None,
            rx: None,
            buffered: VecDeque::new(),
            next_rid: 1,
        }
    }

    fn write_line(&mut self, line: &str) -> Result<(), ClientError> {
        let stream = self
            .stream
            .as_mut()
            .ok_or_else(|| ClientError::Transport("not connected".into()))?;
        stream
            .write_all(line.as_bytes())
            .map_err(|e| ClientError::Transport(e.to_string()))
    }

    /// Sends a request and blocks until the matching `resp` arrives,
    /// buffering any interleaved frames.
    fn request(&mut self, frame: ControlFrame, rid: u64) -> Result<serde_json::Value, ClientError> {
        self.write_line(&frame.encode())?;
        let deadline = std::time::Instant::now() + Duration::from_secs(30);
        loop {
            let line = {
                let rx = self
                    .rx
                    .as_ref()
                    .ok_or_else(|| ClientError::Transport("not connected".into()))?;
                match rx.recv_timeout(Duration::from_millis(50)) {
                    Ok(line) => line,
                    Err(RecvTimeoutError::Timeout) => {
                        if std::time::Instant::now() > deadline {
                            return Err(ClientError::Transport("request timed out".into()));
                        }
                        continue;
                    }
                    Err(RecvTimeoutError::Disconnected) => {
                        return Err(ClientError::Transport("connection closed".into()))
                    }
                }
            };
            match parse_line(line.trim_end()) {
                Ok(WireLine::Control(ControlFrame::Resp { rid: got, ok, err })) if got == rid => {
                    return match (ok, err) {
                        (Some(value), _) => Ok(value),
                        (None, Some(e)) => {
                            Err(ClientError::Rejected { code: e.code, detail: e.detail })
                        }
                        (None, None) => Ok(serde_json::Value::Null),
                    };
                }
                _ => {
                    if let Some(inbound) = classify(&line) {
                        self.buffered.push_back(inbound);
                    }
                }
            }
        }
    }

    fn rid(&mut self) -> u64 {
        let rid = self.next_rid;
        self.next_rid += 1;
        rid
    }
}

impl ServerPort for TcpPort {
    fn connect(
        &mut self,
        name: &str,
        token: &str,
        profile: Option<AgentProfile>,
    ) -> Result<(), ClientError> {
        let stream = TcpStream::connect(&self.addr)
            .map_err(|e| ClientError::Connect(e.to_string()))?;
        stream.set_nodelay(true).ok();
        let read_half = stream
            .try_clone()
            .map_err(|e| ClientError::Connect(e.to_string()))?;
        self.stream = Some(stream);
        let envelope = ControlFrame::Connect {
            agent_name: name.to_string(),
            auth_token: token.to_string(),
            profile,
        };
        self.write_line(&envelope.encode())?;

        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(read_half);
            let mut buf = String::new();
            loop {
                buf.clear();
                match reader.read_line(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        if tx.send(buf.clone()).is_err() {
                            break;
                        }
                    }
                }
            }
        });

        // First line must be the connect ack.
        let first = rx
            .recv_timeout(Duration::from_secs(10))
            .map_err(|_| ClientError::Connect("no response to connect".into()))?;
        match parse_line(first.trim_end()) {
            Ok(WireLine::Control(ControlFrame::Connected { .. })) => {
                self.rx = Some(rx);
                Ok(())
            }
            Ok(WireLine::Control(ControlFrame::Error { code, detail })) => {
                Err(ClientError::Connect(format!("{code}: {detail}")))
            }
            other => Err(ClientError::Connect(format!("unexpected reply: {other:?}"))),
        }
    }

    fn send_frame(&mut self, msg: &AgentMessage) -> Result<(), ClientError> {
        let line = encode_message(msg).map_err(|e| ClientError::Transport(e.to_string()))?;
        self.write_line(&line)
    }

    fn search(
        &mut self,
        characteristics: Vec<String>,
        limit: usize,
    ) -> Result<Vec<(AgentProfile, f64)>, ClientError> {
        let rid = self.rid();
        let value = self.request(ControlFrame::Search { rid, characteristics, limit }, rid)?;
        let results: Vec<ScoredProfile> =
            serde_json::from_value(value.get("results").cloned().unwrap_or_default())
                .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(results.into_iter().map(|s| (s.profile, s.score)).collect())
    }

    fn setup_group(
        &mut self,
        team_members: Vec<String>,
        goal: &str,
        team_up_depth: u32,
        max_turns: Option<u32>,
        parent: Option<(String, String)>,
    ) -> Result<String, ClientError> {
        let rid = self.rid();
        let (parent_comm_id, parent_task_id) = match parent {
            Some((c, t)) => (Some(c), Some(t)),
            None => (None, None),
        };
        let value = self.request(
            ControlFrame::SetupGroup {
                rid,
                team_members,
                goal: goal.to_string(),
                team_up_depth,
                max_turns,
                parent_comm_id,
                parent_task_id,
            },
            rid,
        )?;
        value
            .get("comm_id")
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| ClientError::Transport("missing comm_id in response".into()))
    }

    fn fetch_backlog(
        &mut self,
        comm_id: &str,
        from_seq: u64,
    ) -> Result<Vec<AgentMessage>, ClientError> {
        let rid = self.rid();
        let value = self.request(
            ControlFrame::FetchBacklog { rid, comm_id: comm_id.to_string(), from_seq },
            rid,
        )?;
        serde_json::from_value(value.get("frames").cloned().unwrap_or_default())
            .map_err(|e| ClientError::Transport(e.to_string()))
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Inbound>, ClientError> {
        if let Some(inbound) = self.buffered.pop_front() {
            return Ok(Some(inbound));
        }
        let Some(rx) = self.rx.as_ref() else {
            return Err(ClientError::Transport("not connected".into()));
        };
        loop {
            match rx.recv_timeout(timeout) {
                Ok(line) => {
                    if let Some(inbound) = classify(&line) {
                        return Ok(Some(inbound));
                    }
                }
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ClientError::Transport("connection closed".into()))
                }
            }
        }
    }

    fn disconnect(&mut self) {
        if self.stream.is_some() {
            let _ = self.write_line(&ControlFrame::Disconnect.encode());
        }
        self.stream = None;
        self.rx = None;
    }
}
