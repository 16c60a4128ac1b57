//! The central hub: session management, group-chat setup, and per-group
//! ordered message routing with sequential-speaking enforcement.
//!
//! All shared state sits behind one mutex, so routing within a group is
//! serialized: seq assignment, machine updates, and delivery happen
//! atomically per frame.

pub mod tcp;

use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::mpsc::Sender;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::fsm::{ChatMachine, ConversationState, FsmError, MachineEvent};
use crate::protocol::{
    encode_message, AgentMessage, MessageKind, MessagePayload, NOTICE_CONCLUSION_REQUIRED,
    NOTICE_GROUP_CREATED, SERVER_SENDER,
};
use crate::registry::{AgentProfile, Registry, RegistryError, SearchQuery};
use crate::teaming::TeamTree;
use crate::wire::{ControlFrame, ScoredProfile, WireError, WireLine, WireParseError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    pub auth_token: String,
    pub max_team_up_depth: u32,
    pub default_max_turns: u32,
    pub offline_queue_cap: usize,
    pub data_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: "127.0.0.1:0".into(),
            auth_token: "open-sesame".into(),
            max_team_up_depth: 2,
            default_max_turns: 20,
            offline_queue_cap: 1024,
            data_dir: None,
        }
    }
}

impl ServerConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStatus {
    Online,
    Offline,
}

struct Session {
    status: SessionStatus,
    sink: Option<Sender<String>>,
    pending: VecDeque<String>,
    /// Frames dropped from the pending queue due to overflow.
    lost: u64,
}

struct Group {
    machine: ChatMachine,
    next_seq: u64,
    parent: Option<(String, String)>,
    transcript: Vec<AgentMessage>,
    conclusion: Option<String>,
    log: Option<File>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConnectError {
    #[error("authentication failed")]
    AuthFailed,
    #[error("agent {0} is not registered")]
    UnknownAgent(String),
    #[error("agent {0} is already connected")]
    AlreadyConnected(String),
    #[error("invalid profile: {0}")]
    BadProfile(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SetupError {
    #[error("member {0} is not registered")]
    UnknownMember(String),
    #[error("team_up_depth {depth} exceeds the configured maximum {max}")]
    DepthExceeded { depth: u32, max: u32 },
    #[error("parent group {0} not found")]
    UnknownParent(String),
    #[error("group must have at least one member")]
    EmptyGroup,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouteError {
    #[error("unknown group {0}")]
    UnknownGroup(String),
    #[error("sender {0} is not connected")]
    NotConnected(String),
    #[error("sender {sender} does not own this session ({session})")]
    SenderMismatch { sender: String, session: String },
    #[error("{0}")]
    Fsm(#[from] FsmError),
}

impl RouteError {
    pub fn code(&self) -> &'static str {
        match self {
            RouteError::UnknownGroup(_) => "unknown_group",
            RouteError::NotConnected(_) => "not_connected",
            RouteError::SenderMismatch { .. } => "sender_mismatch",
            RouteError::Fsm(FsmError::GroupConcluded) => "group_concluded",
            RouteError::Fsm(FsmError::NotMember(_)) => "not_member",
            RouteError::Fsm(FsmError::NotYourTurn(_)) => "not_your_turn",
            RouteError::Fsm(FsmError::TurnBudgetExhausted) => "turn_budget_exhausted",
            RouteError::Fsm(FsmError::IllegalTransition { .. }) => "illegal_transition",
            RouteError::Fsm(FsmError::UnknownTrigger(_)) => "unknown_trigger",
            RouteError::Fsm(FsmError::DuplicateTaskResult(_)) => "duplicate_task_result",
        }
    }
}

/// Where each recipient's copy of a routed frame went.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeliveryReport {
    pub seq: u64,
    pub delivered: Vec<String>,
    pub deferred: Vec<String>,
    /// Recipients whose offline queue overflowed while enqueueing this
    /// frame (their oldest pending frame was dropped).
    pub lost: Vec<String>,
}

/// Point-in-time view of one group, for harness reports and tests.
#[derive(Debug, Clone)]
pub struct GroupSnapshot {
    pub comm_id: String,
    pub goal: String,
    pub members: Vec<String>,
    pub initiator: String,
    pub state: ConversationState,
    pub turn_count: u32,
    pub max_turns: u32,
    pub team_up_depth: u32,
    pub parent: Option<(String, String)>,
    pub conclusion: Option<String>,
    pub quiescent: bool,
    pub transcript: Vec<AgentMessage>,
}

struct HubState {
    registry: Registry,
    sessions: BTreeMap<String, Session>,
    groups: BTreeMap<String, Group>,
    group_order: Vec<String>,
}

/// The server. Cheap to share behind an `Arc`; every operation locks the
/// single state mutex.
pub struct Hub {
    config: ServerConfig,
    state: Mutex<HubState>,
}

impl Hub {
    pub fn new(config: ServerConfig) -> std::io::Result<Self> {
        let registry = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir.join("groups"))?;
                Registry::open(&dir.join("registry.ndjson"))?
            }
            None => Registry::new(),
        };
        Ok(Hub {
            config,
            state: Mutex::new(HubState {
                registry,
                sessions: BTreeMap::new(),
                groups: BTreeMap::new(),
                group_order: Vec::new(),
            }),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn register_agent(&self, profile: AgentProfile) -> Result<(), RegistryError> {
        let mut state = self.state.lock().unwrap();
        state.registry.register_agent(profile)?;
        Ok(())
    }

    pub fn deregister_agent(&self, name: &str) -> Result<(), RegistryError> {
        self.state.lock().unwrap().registry.deregister_agent(name)
    }

    pub fn get_profile(&self, name: &str) -> Result<AgentProfile, RegistryError> {
        self.state.lock().unwrap().registry.get_profile(name).cloned()
    }

    pub fn search_agents(&self, query: &SearchQuery) -> Vec<(AgentProfile, f64)> {
        self.state.lock().unwrap().registry.search_agents(query)
    }

    /// Opens a session. Names starting with `@` are operator sessions:
    /// token-checked but exempt from registration (they cannot join groups).
    /// Providing a profile registers a first-time agent in the same step.
    pub fn connect(
        &self,
        agent_name: &str,
        auth_token: &str,
        profile: Option<AgentProfile>,
        sink: Sender<String>,
    ) -> Result<(), ConnectError> {
        if auth_token != self.config.auth_token {
            return Err(ConnectError::AuthFailed);
        }
        let operator = agent_name.starts_with('@');
        let mut state = self.state.lock().unwrap();
        if !operator {
            if !state.registry.contains(agent_name) {
                match profile {
                    Some(p) => {
                        if p.agent_name != agent_name {
                            return Err(ConnectError::BadProfile(
                                "profile name does not match connect name".into(),
                            ));
                        }
                        state
                            .registry
                            .register_agent(p)
                            .map_err(|e| ConnectError::BadProfile(e.to_string()))?;
                    }
                    None => return Err(ConnectError::UnknownAgent(agent_name.to_string())),
                }
            }
        }
        let session = state.sessions.entry(agent_name.to_string()).or_insert(Session {
            status: SessionStatus::Offline,
            sink: None,
            pending: VecDeque::new(),
            lost: 0,
        });
        if session.status == SessionStatus::Online {
            return Err(ConnectError::AlreadyConnected(agent_name.to_string()));
        }
        session.status = SessionStatus::Online;
        session.sink = Some(sink.clone());
        // Flush anything queued while offline, in original seq order.
        while let Some(line) = session.pending.pop_front() {
            let _ = sink.send(line);
        }
        Ok(())
    }

    pub fn disconnect(&self, agent_name: &str) -> Result<(), RouteError> {
        let mut state = self.state.lock().unwrap();
        match state.sessions.get_mut(agent_name) {
            Some(s) if s.status == SessionStatus::Online => {
                s.status = SessionStatus::Offline;
                s.sink = None;
                Ok(())
            }
            _ => Err(RouteError::NotConnected(agent_name.to_string())),
        }
    }

    pub fn is_online(&self, agent_name: &str) -> bool {
        self.state
            .lock()
            .unwrap()
            .sessions
            .get(agent_name)
            .map(|s| s.status == SessionStatus::Online)
            .unwrap_or(false)
    }

    /// Creates a group, announces it to every member with a `system_notice`
    /// at seq 0, and returns the fresh comm_id.
    pub fn setup_group(
        &self,
        initiator: &str,
        team_members: &[String],
        goal: &str,
        team_up_depth: u32,
        max_turns: Option<u32>,
        parent: Option<(String, String)>,
    ) -> Result<String, SetupError> {
        let mut state = self.state.lock().unwrap();
        if team_up_depth > self.config.max_team_up_depth {
            return Err(SetupError::DepthExceeded {
                depth: team_up_depth,
                max: self.config.max_team_up_depth,
            });
        }
        let mut members: Vec<String> = Vec::new();
        for name in std::iter::once(&initiator.to_string()).chain(team_members.iter()) {
            if !state.registry.contains(name) {
                return Err(SetupError::UnknownMember(name.clone()));
            }
            if !members.contains(name) {
                members.push(name.clone());
            }
        }
        if members.is_empty() {
            return Err(SetupError::EmptyGroup);
        }
        if let Some((parent_comm, _)) = &parent {
            if !state.groups.contains_key(parent_comm) {
                return Err(SetupError::UnknownParent(parent_comm.clone()));
            }
        }
        let comm_id = Uuid::new_v4().to_string();
        let max_turns = max_turns.unwrap_or(self.config.default_max_turns);
        let machine = ChatMachine::new(
            comm_id.clone(),
            goal,
            members.clone(),
            initiator,
            max_turns,
            team_up_depth,
        );
        let log = self.config.data_dir.as_ref().and_then(|dir| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("groups").join(format!("{comm_id}.ndjson")))
                .ok()
        });
        state.groups.insert(
            comm_id.clone(),
            Group {
                machine,
                next_seq: 0,
                parent,
                transcript: Vec::new(),
                conclusion: None,
                log,
            },
        );
        state.group_order.push(comm_id.clone());

        let notice = AgentMessage::new(
            SERVER_SENDER,
            &comm_id,
            MessagePayload {
                kind: MessageKind::SystemNotice,
                content: Some(NOTICE_GROUP_CREATED.into()),
                goal: Some(goal.to_string()),
                team_members: Some(members),
                team_up_depth: Some(team_up_depth),
                max_turns: Some(max_turns),
                next_speaker: vec![initiator.to_string()],
                ..Default::default()
            },
        );
        Self::deliver(&self.config, &mut state, &comm_id, notice)
            .expect("setup notice is always routable");
        Ok(comm_id)
    }

    /// Routes one frame: assigns the next seq, advances the group machine,
    /// delivers to every member (the sender included), and emits the
    /// forced-conclusion notice when the budget runs out.
    pub fn route(&self, msg: AgentMessage) -> Result<DeliveryReport, RouteError> {
        let sender = msg.header.sender.clone();
        let mut state = self.state.lock().unwrap();
        match state.sessions.get(&sender) {
            Some(s) if s.status == SessionStatus::Online => {}
            _ => return Err(RouteError::NotConnected(sender)),
        }
        let comm_id = msg.header.comm_id.clone();
        if !state.groups.contains_key(&comm_id) {
            return Err(RouteError::UnknownGroup(comm_id));
        }
        let (report, events) = Self::advance_and_deliver(&self.config, &mut state, &comm_id, msg)?;
        for event in events {
            if let MachineEvent::ConclusionDue = event {
                let notice = AgentMessage::new(
                    SERVER_SENDER,
                    &comm_id,
                    MessagePayload {
                        kind: MessageKind::SystemNotice,
                        content: Some(NOTICE_CONCLUSION_REQUIRED.into()),
                        ..Default::default()
                    },
                );
                Self::deliver(&self.config, &mut state, &comm_id, notice)
                    .expect("conclusion notice is always routable");
            }
        }
        Ok(report)
    }

    fn advance_and_deliver(
        config: &ServerConfig,
        state: &mut HubState,
        comm_id: &str,
        msg: AgentMessage,
    ) -> Result<(DeliveryReport, Vec<MachineEvent>), RouteError> {
        let group = state.groups.get_mut(comm_id).expect("checked by caller");
        let events = group.machine.advance(&msg)?;
        let mut stamped = msg;
        stamped.seq = Some(group.next_seq);
        group.next_seq += 1;
        if stamped.kind() == MessageKind::Conclusion {
            group.conclusion = stamped.payload.content.clone();
        }
        group.transcript.push(stamped.clone());
        let line = encode_message(&stamped).expect("routed frames are valid");
        if let Some(log) = group.log.as_mut() {
            let _ = log.write_all(line.as_bytes());
        }
        let members = group.machine.members().to_vec();
        let seq = stamped.seq.unwrap();

        let mut report = DeliveryReport { seq, ..Default::default() };
        for member in members {
            match state.sessions.get_mut(&member) {
                Some(session) if session.status == SessionStatus::Online => {
                    let alive = session
                        .sink
                        .as_ref()
                        .map(|s| s.send(line.clone()).is_ok())
                        .unwrap_or(false);
                    if alive {
                        report.delivered.push(member);
                    } else {
                        session.status = SessionStatus::Offline;
                        session.sink = None;
                        Self::enqueue_offline(config, session, &line, &member, &mut report);
                    }
                }
                Some(session) => {
                    Self::enqueue_offline(config, session, &line, &member, &mut report);
                }
                None => {
                    // Member never connected; queue from scratch.
                    let mut session = Session {
                        status: SessionStatus::Offline,
                        sink: None,
                        pending: VecDeque::new(),
                        lost: 0,
                    };
                    Self::enqueue_offline(config, &mut session, &line, &member, &mut report);
                    state.sessions.insert(member, session);
                }
            }
        }
        Ok((report, events))
    }

    fn enqueue_offline(
        config: &ServerConfig,
        session: &mut Session,
        line: &str,
        member: &str,
        report: &mut DeliveryReport,
    ) {
        if session.pending.len() >= config.offline_queue_cap {
            session.pending.pop_front();
            session.lost += 1;
            report.lost.push(member.to_string());
        }
        session.pending.push_back(line.to_string());
        report.deferred.push(member.to_string());
    }

    fn deliver(
        config: &ServerConfig,
        state: &mut HubState,
        comm_id: &str,
        msg: AgentMessage,
    ) -> Result<DeliveryReport, RouteError> {
        Self::advance_and_deliver(config, state, comm_id, msg).map(|(report, _)| report)
    }

    /// Number of frames ever dropped from an agent's offline queue.
    pub fn lost_frames(&self, agent_name: &str) -> u64 {
        self.state
            .lock()
            .unwrap()
            .sessions
            .get(agent_name)
            .map(|s| s.lost)
            .unwrap_or(0)
    }

    pub fn pending_frames(&self, agent_name: &str) -> usize {
        self.state
            .lock()
            .unwrap()
            .sessions
            .get(agent_name)
            .map(|s| s.pending.len())
            .unwrap_or(0)
    }

    pub fn group_snapshot(&self, comm_id: &str) -> Option<GroupSnapshot> {
        let state = self.state.lock().unwrap();
        state.groups.get(comm_id).map(|g| Self::snapshot(comm_id, g))
    }

    /// Snapshots of every group in creation order.
    pub fn group_snapshots(&self) -> Vec<GroupSnapshot> {
        let state = self.state.lock().unwrap();
        state
            .group_order
            .iter()
            .filter_map(|id| state.groups.get(id).map(|g| Self::snapshot(id, g)))
            .collect()
    }

    fn snapshot(comm_id: &str, group: &Group) -> GroupSnapshot {
        GroupSnapshot {
            comm_id: comm_id.to_string(),
            goal: group.machine.goal().to_string(),
            members: group.machine.members().to_vec(),
            initiator: group.machine.initiator().to_string(),
            state: group.machine.state(),
            turn_count: group.machine.turn_count(),
            max_turns: group.machine.max_turns(),
            team_up_depth: group.machine.team_up_depth(),
            parent: group.parent.clone(),
            conclusion: group.conclusion.clone(),
            quiescent: group.machine.is_quiescent(),
            transcript: group.transcript.clone(),
        }
    }

    /// True once every group has concluded and owes nothing further.
    pub fn all_quiescent(&self) -> bool {
        let state = self.state.lock().unwrap();
        !state.groups.is_empty() && state.groups.values().all(|g| g.machine.is_quiescent())
    }

    /// The team trees rooted at groups without a parent, in creation order.
    pub fn team_trees(&self) -> Vec<TeamTree> {
        let state = self.state.lock().unwrap();
        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for id in &state.group_order {
            if let Some((parent_comm, _)) = &state.groups[id].parent {
                children.entry(parent_comm.clone()).or_default().push(id.clone());
            }
        }
        fn build(
            id: &str,
            state: &HubState,
            children: &BTreeMap<String, Vec<String>>,
        ) -> TeamTree {
            let group = &state.groups[id];
            TeamTree {
                comm_id: id.to_string(),
                members: group.machine.members().to_vec(),
                depth: group.machine.team_up_depth(),
                children: children
                    .get(id)
                    .map(|kids| kids.iter().map(|k| build(k, state, children)).collect())
                    .unwrap_or_default(),
            }
        }
        state
            .group_order
            .iter()
            .filter(|id| state.groups[id.as_str()].parent.is_none())
            .map(|id| build(id, &state, &children))
            .collect()
    }

    pub fn broadcast_shutdown(&self) {
        let state = self.state.lock().unwrap();
        let line = ControlFrame::Shutdown.encode();
        for session in state.sessions.values() {
            if let Some(sink) = &session.sink {
                let _ = sink.send(line.clone());
            }
        }
    }

    /// Entry point for one inbound line from an established session. Routing
    /// errors come back to the offending session as a `reject` control line
    /// instead of tearing the connection down.
    pub fn ingest_line(&self, session_name: &str, line: &str) {
        match crate::wire::parse_line(line.trim_end_matches('\n')) {
            Ok(WireLine::Message(msg)) => {
                if msg.header.sender != session_name {
                    self.send_to(
                        session_name,
                        ControlFrame::Reject {
                            code: "sender_mismatch".into(),
                            detail: format!(
                                "session {} cannot send as {}",
                                session_name, msg.header.sender
                            ),
                            comm_id: Some(msg.header.comm_id.clone()),
                        },
                    );
                    return;
                }
                let comm_id = msg.header.comm_id.clone();
                if let Err(e) = self.route(msg) {
                    self.send_to(
                        session_name,
                        ControlFrame::Reject {
                            code: e.code().into(),
                            detail: e.to_string(),
                            comm_id: Some(comm_id),
                        },
                    );
                }
            }
            Ok(WireLine::Control(frame)) => {
                if let Some(resp) = self.handle_control(session_name, frame) {
                    self.send_to(session_name, resp);
                }
            }
            Err(e) => {
                let code = match e {
                    WireParseError::BadControl(_) => "bad_control",
                    WireParseError::BadMessage(_) => "bad_message",
                };
                self.send_to(
                    session_name,
                    ControlFrame::Reject { code: code.into(), detail: e.to_string(), comm_id: None },
                );
            }
        }
    }

    /// Request/response control handling for an established session.
    pub fn handle_control(&self, session_name: &str, frame: ControlFrame) -> Option<ControlFrame> {
        match frame {
            ControlFrame::Search { rid, characteristics, limit } => {
                let results = self.search_agents(&SearchQuery { characteristics, limit });
                let scored: Vec<ScoredProfile> = results
                    .into_iter()
                    .map(|(profile, score)| ScoredProfile { profile, score })
                    .collect();
                Some(ControlFrame::Resp {
                    rid,
                    ok: Some(serde_json::json!({ "results": scored })),
                    err: None,
                })
            }
            ControlFrame::SetupGroup {
                rid,
                team_members,
                goal,
                team_up_depth,
                max_turns,
                parent_comm_id,
                parent_task_id,
            } => {
                let parent = match (parent_comm_id, parent_task_id) {
                    (Some(c), Some(t)) => Some((c, t)),
                    _ => None,
                };
                let result = self.setup_group(
                    session_name,
                    &team_members,
                    &goal,
                    team_up_depth,
                    max_turns,
                    parent,
                );
                Some(match result {
                    Ok(comm_id) => ControlFrame::Resp {
                        rid,
                        ok: Some(serde_json::json!({ "comm_id": comm_id })),
                        err: None,
                    },
                    Err(e) => ControlFrame::Resp {
                        rid,
                        ok: None,
                        err: Some(WireError::new(setup_error_code(&e), e.to_string())),
                    },
                })
            }
            ControlFrame::FetchBacklog { rid, comm_id, from_seq } => {
                let state = self.state.lock().unwrap();
                match state.groups.get(&comm_id) {
                    Some(group)
                        if group.machine.members().iter().any(|m| m == session_name) =>
                    {
                        let frames: Vec<serde_json::Value> = group
                            .transcript
                            .iter()
                            .filter(|m| m.seq.unwrap_or(0) >= from_seq)
                            .map(|m| serde_json::to_value(m).expect("frames serialize"))
                            .collect();
                        Some(ControlFrame::Resp {
                            rid,
                            ok: Some(serde_json::json!({ "frames": frames })),
                            err: None,
                        })
                    }
                    Some(_) => Some(ControlFrame::Resp {
                        rid,
                        ok: None,
                        err: Some(WireError::new("not_member", "not a member of this group")),
                    }),
                    None => Some(ControlFrame::Resp {
                        rid,
                        ok: None,
                        err: Some(WireError::new("unknown_group", comm_id)),
                    }),
                }
            }
            ControlFrame::Disconnect => {
                let _ = self.disconnect(session_name);
                None
            }
            _ => Some(ControlFrame::Reject {
                code: "unexpected_control".into(),
                detail: "frame not valid in this direction".into(),
                comm_id: None,
            }),
        }
    }

    fn send_to(&self, agent_name: &str, frame: ControlFrame) {
        let state = self.state.lock().unwrap();
        if let Some(sink) = state.sessions.get(agent_name).and_then(|s| s.sink.as_ref()) {
            let _ = sink.send(frame.encode());
        }
    }
}

fn setup_error_code(e: &SetupError) -> &'static str {
    match e {
        SetupError::UnknownMember(_) => "unknown_member",
        SetupError::DepthExceeded { .. } => "depth_exceeded",
        SetupError::UnknownParent(_) => "unknown_parent",
        SetupError::EmptyGroup => "empty_group",
    }
}
