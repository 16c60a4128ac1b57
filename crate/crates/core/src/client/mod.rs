//! The client wrapper around one integrated agent: local data blocks
//! (contacts, group info, tasks), the inbound dispatch loop, task execution
//! over the integrated-agent bridge, and nested sub-group spawning.
//!
//! One dispatch loop per client processes frames strictly in seq order per
//! group. Task execution runs on worker threads; finished results are
//! funneled back through the dispatch loop so outbound frames never
//! interleave mid-write.

pub mod agents;
pub mod port;
pub mod store;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use uuid::Uuid;

use crate::fsm::{ConversationState, MachineEvent, TaskMode};
use crate::fsm::{allowed, ChatMachine, FsmInput};
use crate::policy::{Policy, TaskContext, TaskHandling, UtteranceContext, UtteranceDecision};
use crate::protocol::{
    AgentMessage, MessageKind, MessagePayload, NOTICE_CONCLUSION_REQUIRED, NOTICE_TASK_STARTED,
};
use crate::registry::AgentProfile;
use crate::teaming::{self, TeamFormationError, TeamFormationReport, TeamFormationTools};

use agents::{IntegratedAgent, MemoryKind};
use port::{ClientError, Inbound, ServerPort};
use store::{ClientPersistence, ContactEntry, GroupInfo, TaskRecord, TaskStatus, TaskStore};

/// Task abstracts keep this many characters of the conclusion.
pub const ABSTRACT_CHARS: usize = 200;
const DEFAULT_SEARCH_LIMIT: usize = 10;

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub name: String,
    pub auth_token: String,
    /// read_memory poll cadence.
    pub poll_interval: Duration,
    pub task_timeout: Duration,
    pub max_team_up_depth: u32,
    pub data_dir: Option<PathBuf>,
}

impl ClientConfig {
    pub fn new(name: impl Into<String>, auth_token: impl Into<String>) -> Self {
        ClientConfig {
            name: name.into(),
            auth_token: auth_token.into(),
            poll_interval: Duration::from_millis(50),
            task_timeout: Duration::from_secs(60),
            max_team_up_depth: 2,
            data_dir: None,
        }
    }
}

/// The root task handed to the initiating client.
#[derive(Debug, Clone)]
pub struct RootTask {
    pub goal: String,
    pub max_turns: Option<u32>,
}

struct WorkerDone {
    comm_id: String,
    task_id: String,
    conclusion: String,
}

/// Single-line abstract: first [`ABSTRACT_CHARS`] characters of the text.
pub fn abstract_of(text: &str) -> String {
    text.replace(['\n', '\r'], " ").chars().take(ABSTRACT_CHARS).collect()
}

pub struct ClientRuntime {
    cfg: ClientConfig,
    profile: AgentProfile,
    policy: Box<dyn Policy>,
    agent: Option<Arc<dyn IntegratedAgent>>,
    port: Box<dyn ServerPort>,
    groups: BTreeMap<String, GroupInfo>,
    tasks: TaskStore,
    contacts: BTreeMap<String, ContactEntry>,
    /// child comm_id -> (parent comm_id, parent task_id); only the spawner
    /// holds the link and propagates the child conclusion upward.
    parent_links: BTreeMap<String, (String, String)>,
    worker_tx: Sender<WorkerDone>,
    worker_rx: Receiver<WorkerDone>,
    violations: Vec<String>,
    desc_cache: BTreeMap<String, String>,
    utterance_counts: BTreeMap<String, u32>,
    persist: Option<ClientPersistence>,
    team_reports: Vec<TeamFormationReport>,
}

impl ClientRuntime {
    pub fn new(
        cfg: ClientConfig,
        profile: AgentProfile,
        policy: Box<dyn Policy>,
        agent: Option<Box<dyn IntegratedAgent>>,
        port: Box<dyn ServerPort>,
    ) -> Self {
        let (worker_tx, worker_rx) = mpsc::channel();
        let persist = cfg
            .data_dir
            .as_ref()
            .and_then(|dir| ClientPersistence::open(&dir.join(&cfg.name)).ok());
        ClientRuntime {
            cfg,
            profile,
            policy,
            agent: agent.map(Arc::from),
            port,
            groups: BTreeMap::new(),
            tasks: TaskStore::default(),
            contacts: BTreeMap::new(),
            parent_links: BTreeMap::new(),
            worker_tx,
            worker_rx,
            violations: Vec::new(),
            desc_cache: BTreeMap::new(),
            utterance_counts: BTreeMap::new(),
            persist,
            team_reports: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.cfg.name
    }
    pub fn violations(&self) -> &[String] {
        &self.violations
    }
    pub fn tasks(&self) -> &TaskStore {
        &self.tasks
    }
    pub fn contacts(&self) -> &BTreeMap<String, ContactEntry> {
        &self.contacts
    }
    pub fn groups(&self) -> &BTreeMap<String, GroupInfo> {
        &self.groups
    }
    pub fn team_reports(&self) -> &[TeamFormationReport] {
        &self.team_reports
    }

    /// Connects, optionally forms the root team for `root`, then dispatches
    /// frames until the server broadcasts shutdown.
    pub fn run(&mut self, root: Option<RootTask>) -> Result<(), ClientError> {
        self.port
            .connect(&self.cfg.name, &self.cfg.auth_token, Some(self.profile.clone()))?;
        if let Some(root) = root {
            if let Err(e) = self.form_root_team(&root) {
                self.violations.push(format!("team formation failed: {e}"));
            }
        }
        loop {
            self.pump_workers();
            match self.port.recv_timeout(Duration::from_millis(5))? {
                Some(Inbound::Frame(msg)) => self.handle_incoming(msg),
                Some(Inbound::Reject { code, detail, comm_id }) => {
                    self.violations.push(format!(
                        "server rejected frame ({}): {} [{}]",
                        code,
                        detail,
                        comm_id.unwrap_or_default()
                    ));
                }
                Some(Inbound::Shutdown) => break,
                None => {}
            }
        }
        self.port.disconnect();
        Ok(())
    }

    fn form_root_team(&mut self, root: &RootTask) -> Result<(), TeamFormationError> {
        let contacts: Vec<String> = self.contacts.keys().cloned().collect();
        let mut tools = PortTools {
            port: self.port.as_mut(),
            depth: 0,
            max_turns: root.max_turns,
            parent: None,
            desc_cache: &mut self.desc_cache,
        };
        let report = teaming::form_team(
            &self.cfg.name,
            &root.goal,
            &contacts,
            self.policy.as_mut(),
            &mut tools,
        )?;
        self.team_reports.push(report);
        Ok(())
    }

    /// Processes one routed frame: transcript append, mirror-machine
    /// advance, store updates, the speak phase, and task handling.
    fn handle_incoming(&mut self, msg: AgentMessage) {
        let comm_id = msg.header.comm_id.clone();
        if !self.groups.contains_key(&comm_id) {
            match ChatMachine::from_setup_notice(&msg) {
                Some(machine) => {
                    let info = GroupInfo {
                        comm_id: comm_id.clone(),
                        goal: machine.goal().to_string(),
                        machine,
                        transcript: vec![msg],
                        conclusion: None,
                    };
                    if let Some(p) = self.persist.as_mut() {
                        p.record_group(&comm_id, &info.goal, None);
                    }
                    self.groups.insert(comm_id.clone(), info);
                    self.maybe_speak(&comm_id, true);
                }
                None => {
                    self.violations
                        .push(format!("frame for unknown group {comm_id} dropped"));
                }
            }
            return;
        }

        // Seq discipline: fill gaps from the server before going on.
        let expected = self.groups[&comm_id].next_seq();
        let got = msg.seq.unwrap_or(expected);
        if got < expected {
            return; // duplicate of an already-processed frame
        }
        if got > expected {
            self.violations.push(format!(
                "stale seq in {comm_id}: expected {expected}, got {got}; resyncing"
            ));
            match self.port.fetch_backlog(&comm_id, expected) {
                Ok(frames) => {
                    for frame in frames {
                        if frame.seq.unwrap_or(0) >= self.groups[&comm_id].next_seq() {
                            self.process_group_frame(&comm_id, frame);
                        }
                    }
                }
                Err(e) => self.violations.push(format!("resync failed for {comm_id}: {e}")),
            }
            return;
        }
        self.process_group_frame(&comm_id, msg);
    }

    fn process_group_frame(&mut self, comm_id: &str, msg: AgentMessage) {
        let events = {
            let group = self.groups.get_mut(comm_id).expect("caller checked");
            let events = match group.machine.advance(&msg) {
                Ok(events) => events,
                Err(e) => {
                    self.violations
                        .push(format!("mirror rejected frame seq {:?}: {e}", msg.seq));
                    Vec::new()
                }
            };
            group.transcript.push(msg.clone());
            events
        };

        // Task extraction (record + announce) happens before the speak
        // phase so an assignee may immediately pause on its own task;
        // execution starts only after the utterance is out.
        let mut extracted: Vec<(String, String)> = Vec::new();
        match msg.kind() {
            MessageKind::SystemNotice => self.on_system_notice(comm_id, &msg),
            MessageKind::TaskResult => self.on_task_result(&msg),
            MessageKind::Conclusion => self.on_conclusion(comm_id, &msg),
            MessageKind::PauseAndTrigger => {
                for id in msg.payload.triggers.as_deref().unwrap_or_default() {
                    self.tasks.mark_trigger(id);
                }
            }
            MessageKind::SyncTaskAssignment | MessageKind::AsyncTaskAssignment => {
                if msg.payload.next_speaker.iter().any(|n| n == &self.cfg.name) {
                    extracted.extend(self.extract_task(comm_id, &msg));
                }
            }
            MessageKind::Discussion => {}
        }

        // Speak when the floor is ours: on conversation frames and on gate
        // releases that name us. Forced conclusions are driven by the
        // server's notice instead.
        let resumed_to_self = events.iter().any(
            |e| matches!(e, MachineEvent::Resumed { speaker } if speaker == &self.cfg.name),
        );
        if msg.kind().is_conversation() || resumed_to_self {
            self.maybe_speak(comm_id, false);
        }

        for (task_id, desc) in extracted {
            self.handle_extracted_task(comm_id, &task_id, &desc, &msg);
        }
    }

    fn on_system_notice(&mut self, comm_id: &str, msg: &AgentMessage) {
        let content = msg.payload.content.as_deref().unwrap_or_default();
        if let Some(mode) = content
            .strip_prefix(NOTICE_TASK_STARTED)
            .and_then(|rest| rest.strip_prefix(':'))
        {
            let mode = match mode {
                "sync" => TaskMode::Sync,
                "async" => TaskMode::Async,
                _ => return,
            };
            let Some(task_id) = msg.payload.task_id.clone() else { return };
            if !self.tasks.contains(&task_id) {
                let desc = msg.payload.task_desc.clone().unwrap_or_default();
                let record = TaskRecord {
                    task_id,
                    comm_id: comm_id.to_string(),
                    task_abstract: abstract_of(&desc),
                    task_desc: desc,
                    assignee: msg.header.sender.clone(),
                    mode,
                    status: TaskStatus::InProgress,
                    conclusion: None,
                    is_trigger: false,
                };
                if let Some(p) = self.persist.as_mut() {
                    p.record_task(&record);
                }
                self.tasks.upsert(record);
            }
            return;
        }
        if content == NOTICE_CONCLUSION_REQUIRED {
            let (initiator, state, goal, transcript_len) = {
                let g = &self.groups[comm_id];
                (
                    g.machine.initiator().to_string(),
                    g.machine.state(),
                    g.goal.clone(),
                    g.transcript.len(),
                )
            };
            let _ = transcript_len;
            if initiator == self.cfg.name && state != ConversationState::Conclusion {
                let transcript = self.groups[comm_id].transcript.clone();
                let text = match self.policy.conclude(&goal, &transcript) {
                    Ok(text) if !text.is_empty() => text,
                    Ok(_) | Err(_) => {
                        // Keep the group live even on a policy failure; the
                        // violation is still surfaced.
                        self.violations.push(format!(
                            "policy failed to produce a forced conclusion for {comm_id}"
                        ));
                        "NO RESULT".to_string()
                    }
                };
                self.send_conclusion(comm_id, &text);
            }
        }
    }

    fn on_task_result(&mut self, msg: &AgentMessage) {
        let Some(task_id) = msg.payload.task_id.as_deref() else { return };
        let conclusion = msg.payload.task_conclusion.as_deref().unwrap_or_default();
        let abstract_text = msg.payload.task_abstract.as_deref().unwrap_or_default();
        if self.tasks.complete(task_id, conclusion, abstract_text) {
            if let Some(record) = self.tasks.get(task_id).cloned() {
                if let Some(p) = self.persist.as_mut() {
                    p.record_task(&record);
                }
            }
        }
    }

    fn on_conclusion(&mut self, comm_id: &str, msg: &AgentMessage) {
        let content = msg.payload.content.clone().unwrap_or_default();
        if let Some(group) = self.groups.get_mut(comm_id) {
            group.conclusion = Some(content.clone());
        }
        let goal = self.groups[comm_id].goal.clone();
        if let Some(p) = self.persist.as_mut() {
            p.record_group(comm_id, &goal, Some(&content));
        }
        self.update_contacts(comm_id);
        // Nested propagation: the spawner reports the child conclusion as
        // the parent task's result.
        if let Some((parent_comm, parent_task)) = self.parent_links.remove(comm_id) {
            self.send_task_result(&parent_comm, &parent_task, &content);
        }
    }

    /// One contact entry per teammate after a concluded collaboration;
    /// repeat collaborations overwrite the notes.
    fn update_contacts(&mut self, comm_id: &str) {
        let (members, goal) = {
            let g = &self.groups[comm_id];
            (g.machine.members().to_vec(), g.goal.clone())
        };
        for member in members {
            if member == self.cfg.name {
                continue;
            }
            let entry = ContactEntry {
                description: self.desc_cache.get(&member).cloned().unwrap_or_default(),
                notes: self.policy.collaboration_note(&goal, &member),
                agent_name: member.clone(),
            };
            if let Some(p) = self.persist.as_mut() {
                p.record_contact(&entry);
            }
            self.contacts.insert(member, entry);
        }
    }

    /// Asks the policy for an utterance if this client holds the floor.
    /// Decisions pass a legality firewall before anything reaches the wire.
    fn maybe_speak(&mut self, comm_id: &str, on_setup: bool) {
        let _ = on_setup;
        let (state, expected_self, demanded) = {
            let m = &self.groups[comm_id].machine;
            (
                m.state(),
                m.expected_speakers().contains(&self.cfg.name),
                m.conclusion_demanded(),
            )
        };
        if state != ConversationState::Discussion || !expected_self || demanded {
            return;
        }
        let decision = {
            let group = &self.groups[comm_id];
            let open_async: Vec<(String, String)> = self
                .tasks
                .all()
                .iter()
                .filter(|t| {
                    t.comm_id == comm_id
                        && t.mode == TaskMode::Async
                        && t.status != TaskStatus::Completed
                })
                .map(|t| (t.task_id.clone(), t.assignee.clone()))
                .collect();
            let ctx = UtteranceContext {
                self_name: &self.cfg.name,
                goal: &group.goal,
                state,
                members: group.machine.members(),
                transcript: &group.transcript,
                open_async: &open_async,
            };
            self.policy.decide_utterance(&ctx)
        };
        let step = self.utterance_counts.entry(comm_id.to_string()).or_insert(0);
        *step += 1;
        let step = *step;
        match decision {
            Ok(Some(decision)) => {
                if let Err(reason) = self.check_decision(comm_id, &decision) {
                    self.violations.push(format!(
                        "IllegalDecision@{comm_id}#{step}: {reason} ({:?} by {})",
                        decision.kind, self.cfg.name
                    ));
                    return;
                }
                self.send_decision(comm_id, decision);
            }
            Ok(None) => {}
            Err(e) => {
                self.violations.push(format!("policy error@{comm_id}#{step}: {e}"));
            }
        }
    }

    /// The legality firewall: no frame built from a policy decision reaches
    /// the server unless the kind is legal from the current state, the
    /// speakers are members, and the protocol invariants hold.
    fn check_decision(&self, comm_id: &str, decision: &UtteranceDecision) -> Result<(), String> {
        let group = &self.groups[comm_id];
        let machine = &group.machine;
        if !decision.kind.is_conversation() {
            return Err(format!("{:?} is not a conversation kind", decision.kind));
        }
        for speaker in &decision.next_speakers {
            if !machine.members().iter().any(|m| m == speaker) {
                return Err(format!("next speaker {speaker} is not a member"));
            }
        }
        if allowed(machine.state(), FsmInput::Kind(decision.kind)).is_err() {
            return Err(format!(
                "{} is illegal from state {}",
                decision.kind.as_str(),
                machine.state().as_str()
            ));
        }
        if machine.turn_count() >= machine.max_turns() && decision.kind != MessageKind::Conclusion {
            return Err("turn budget exhausted; only a conclusion may be sent".into());
        }
        if decision.kind == MessageKind::PauseAndTrigger {
            let triggers = decision.triggers.as_deref().unwrap_or_default();
            if triggers.is_empty() {
                return Err("pause requires at least one trigger".into());
            }
            for id in triggers {
                match self.tasks.get(id) {
                    Some(t) if t.comm_id == *comm_id => {}
                    _ => return Err(format!("trigger {id} does not reference a known task")),
                }
            }
        }
        let frame = self.build_frame(comm_id, decision);
        let violations = crate::protocol::validate_message(&frame);
        if !violations.is_empty() {
            return Err(violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; "));
        }
        Ok(())
    }

    fn build_frame(&self, comm_id: &str, decision: &UtteranceDecision) -> AgentMessage {
        AgentMessage::new(
            &self.cfg.name,
            comm_id,
            MessagePayload {
                kind: decision.kind,
                content: if decision.content.is_empty() {
                    None
                } else {
                    Some(decision.content.clone())
                },
                next_speaker: decision.next_speakers.clone(),
                triggers: decision.triggers.clone(),
                ..Default::default()
            },
        )
    }

    fn send_decision(&mut self, comm_id: &str, decision: UtteranceDecision) {
        let frame = self.build_frame(comm_id, &decision);
        if let Err(e) = self.port.send_frame(&frame) {
            self.violations.push(format!("send failed in {comm_id}: {e}"));
        }
    }

    fn send_conclusion(&mut self, comm_id: &str, text: &str) {
        let decision = UtteranceDecision {
            kind: MessageKind::Conclusion,
            content: text.to_string(),
            next_speakers: Vec::new(),
            triggers: None,
        };
        self.send_decision(comm_id, decision);
    }

    fn send_task_result(&mut self, comm_id: &str, task_id: &str, conclusion: &str) {
        let frame = AgentMessage::new(
            &self.cfg.name,
            comm_id,
            MessagePayload {
                kind: MessageKind::TaskResult,
                task_id: Some(task_id.to_string()),
                task_conclusion: Some(conclusion.to_string()),
                task_abstract: Some(abstract_of(conclusion)),
                ..Default::default()
            },
        );
        if let Err(e) = self.port.send_frame(&frame) {
            self.violations.push(format!("task result send failed: {e}"));
        }
    }

    /// Extracts the task addressed to this client from an assignment frame:
    /// policy summary (falling back to the assignment content), fresh task
    /// id, announce notice. Returns the (task_id, desc) to handle after the
    /// speak phase; an unusable extraction reports an error result at once.
    fn extract_task(&mut self, comm_id: &str, assignment: &AgentMessage) -> Option<(String, String)> {
        let mode = match assignment.kind() {
            MessageKind::SyncTaskAssignment => TaskMode::Sync,
            MessageKind::AsyncTaskAssignment => TaskMode::Async,
            _ => return None,
        };
        let goal = self.groups[comm_id].goal.clone();
        let desc = {
            let group = &self.groups[comm_id];
            let ctx = TaskContext {
                self_name: &self.cfg.name,
                goal: &goal,
                transcript: &group.transcript,
                assignment,
            };
            match self.policy.summarize_task(&ctx) {
                Ok(text) if !text.is_empty() => text,
                Ok(_) => assignment.payload.content.clone().unwrap_or_default(),
                Err(e) => {
                    self.violations.push(format!("task summary failed in {comm_id}: {e}"));
                    assignment.payload.content.clone().unwrap_or_default()
                }
            }
        };
        if desc.is_empty() {
            // Nothing to work from; still report so sync gates release.
            self.violations
                .push(format!("empty task description in {comm_id}; reporting failure"));
            let task_id = Uuid::new_v4().to_string();
            self.start_task_record(comm_id, &task_id, "(unspecified task)", mode);
            self.send_task_result(comm_id, &task_id, "ERROR: empty task description");
            return None;
        }
        let task_id = Uuid::new_v4().to_string();
        self.start_task_record(comm_id, &task_id, &desc, mode);
        Some((task_id, desc))
    }

    fn handle_extracted_task(
        &mut self,
        comm_id: &str,
        task_id: &str,
        desc: &str,
        assignment: &AgentMessage,
    ) {
        let goal = self.groups[comm_id].goal.clone();
        let handling = {
            let group = &self.groups[comm_id];
            let ctx = TaskContext {
                self_name: &self.cfg.name,
                goal: &goal,
                transcript: &group.transcript,
                assignment,
            };
            match self.policy.decide_task_handling(&ctx) {
                Ok(h) => h,
                Err(e) => {
                    self.violations.push(format!("task handling decision failed: {e}"));
                    TaskHandling::Execute
                }
            }
        };
        match handling {
            TaskHandling::Execute => self.execute_assigned_task(comm_id, task_id, desc),
            TaskHandling::Spawn { goal: subgoal } => self.spawn_subgroup(comm_id, task_id, &subgoal),
        }
    }

    /// Records the task and announces its start to the group so every
    /// member (and the group machine) learns the id before the result.
    fn start_task_record(&mut self, comm_id: &str, task_id: &str, desc: &str, mode: TaskMode) {
        let record = TaskRecord {
            task_id: task_id.to_string(),
            comm_id: comm_id.to_string(),
            task_desc: desc.to_string(),
            task_abstract: abstract_of(desc),
            assignee: self.cfg.name.clone(),
            mode,
            status: TaskStatus::Pending,
            conclusion: None,
            is_trigger: false,
        };
        if let Some(p) = self.persist.as_mut() {
            p.record_task(&record);
        }
        self.tasks.upsert(record);
        let notice = AgentMessage::new(
            &self.cfg.name,
            comm_id,
            MessagePayload {
                kind: MessageKind::SystemNotice,
                content: Some(format!("{}:{}", NOTICE_TASK_STARTED, mode.as_str())),
                task_id: Some(task_id.to_string()),
                task_desc: Some(desc.to_string()),
                ..Default::default()
            },
        );
        if let Err(e) = self.port.send_frame(&notice) {
            self.violations.push(format!("task announce failed: {e}"));
        }
    }

    /// Runs the integrated agent on a worker thread: run(), poll
    /// read_memory until a completion record, time out after the configured
    /// budget. Failures still complete the task with an `ERROR:` conclusion
    /// so sync and pause gates always release.
    fn execute_assigned_task(&mut self, comm_id: &str, task_id: &str, desc: &str) {
        if let Some(t) = self.tasks.get_mut(task_id) {
            t.status = TaskStatus::InProgress;
        }
        let Some(agent) = self.agent.clone() else {
            self.worker_tx
                .send(WorkerDone {
                    comm_id: comm_id.to_string(),
                    task_id: task_id.to_string(),
                    conclusion: "ERROR: no integrated agent".into(),
                })
                .ok();
            return;
        };
        let tx = self.worker_tx.clone();
        let comm_id = comm_id.to_string();
        let task_id = task_id.to_string();
        let desc = desc.to_string();
        let poll = self.cfg.poll_interval;
        let timeout = self.cfg.task_timeout;
        std::thread::spawn(move || {
            let conclusion = run_to_completion(agent.as_ref(), &desc, poll, timeout);
            tx.send(WorkerDone { comm_id, task_id, conclusion }).ok();
        });
    }

    /// Drains finished workers, emitting their task results in completion
    /// order through this (single) outbound sender.
    fn pump_workers(&mut self) {
        while let Ok(done) = self.worker_rx.try_recv() {
            self.finish_task(done);
        }
    }

    fn finish_task(&mut self, done: WorkerDone) {
        if let Some(t) = self.tasks.get_mut(&done.task_id) {
            t.status = TaskStatus::Completed;
        }
        self.send_task_result(&done.comm_id, &done.task_id, &done.conclusion);
    }

    /// Forms a child group for a subtask at depth + 1; the child's
    /// conclusion will flow back as this task's result.
    fn spawn_subgroup(&mut self, parent_comm: &str, task_id: &str, subgoal: &str) {
        let parent_depth = self.groups[parent_comm].machine.team_up_depth();
        if parent_depth + 1 > self.cfg.max_team_up_depth {
            self.violations.push(format!(
                "depth exceeded spawning sub-group for task {task_id} (parent depth {parent_depth})"
            ));
            self.send_task_result(
                parent_comm,
                task_id,
                "ERROR: maximum team-up depth reached",
            );
            return;
        }
        if let Some(t) = self.tasks.get_mut(task_id) {
            t.status = TaskStatus::InProgress;
        }
        let contacts: Vec<String> = self.contacts.keys().cloned().collect();
        let result = {
            let mut tools = PortTools {
                port: self.port.as_mut(),
                depth: parent_depth + 1,
                max_turns: None,
                parent: Some((parent_comm.to_string(), task_id.to_string())),
                desc_cache: &mut self.desc_cache,
            };
            teaming::form_team(&self.cfg.name, subgoal, &contacts, self.policy.as_mut(), &mut tools)
        };
        match result {
            Ok(report) => {
                self.parent_links.insert(
                    report.comm_id.clone(),
                    (parent_comm.to_string(), task_id.to_string()),
                );
                self.team_reports.push(report);
            }
            Err(e) => {
                self.violations.push(format!("sub-group formation failed: {e}"));
                self.send_task_result(parent_comm, task_id, &format!("ERROR: {e}"));
            }
        }
    }
}

fn run_to_completion(
    agent: &dyn IntegratedAgent,
    desc: &str,
    poll: Duration,
    timeout: Duration,
) -> String {
    let started = Instant::now();
    let attempt = || -> Result<String, String> {
        let exec_id = agent.run(desc).map_err(|e| e.to_string())?;
        loop {
            let memory = agent.read_memory(&exec_id).map_err(|e| e.to_string())?;
            if let Some(record) = memory.iter().rev().find(|r| r.kind == MemoryKind::Completion) {
                return Ok(record.text.clone());
            }
            if started.elapsed() >= timeout {
                return Err(format!("timeout after {}ms", timeout.as_millis()));
            }
            std::thread::sleep(poll);
        }
    };
    match attempt() {
        Ok(text) => text,
        Err(e) => format!("ERROR: {e}"),
    }
}

/// Team-formation tools backed by the server port.
struct PortTools<'a> {
    port: &'a mut dyn ServerPort,
    depth: u32,
    max_turns: Option<u32>,
    parent: Option<(String, String)>,
    desc_cache: &'a mut BTreeMap<String, String>,
}

impl TeamFormationTools for PortTools<'_> {
    fn search_agents(
        &mut self,
        characteristics: &[String],
    ) -> Result<Vec<(AgentProfile, f64)>, TeamFormationError> {
        let results = self
            .port
            .search(characteristics.to_vec(), DEFAULT_SEARCH_LIMIT)
            .map_err(|e| TeamFormationError::ServerUnreachable(e.to_string()))?;
        for (profile, _) in &results {
            self.desc_cache
                .insert(profile.agent_name.clone(), profile.agent_description.clone());
        }
        Ok(results)
    }

    fn launch_group_chat(
        &mut self,
        team_members: Vec<String>,
        goal: &str,
    ) -> Result<String, TeamFormationError> {
        self.port
            .setup_group(team_members, goal, self.depth, self.max_turns, self.parent.clone())
            .map_err(|e| match e {
                ClientError::Rejected { code, detail } => {
                    TeamFormationError::LaunchRejected(format!("{code}: {detail}"))
                }
                other => TeamFormationError::ServerUnreachable(other.to_string()),
            })
    }
}
