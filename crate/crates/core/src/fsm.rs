//! Group-chat finite state machine: legal-transition checking, turn
//! accounting, and pause/sync gate bookkeeping.
//!
//! One [`ChatMachine`] instance exists per group on the server; clients fold
//! an identical machine over their local transcripts, and transcript replay
//! folds one over a log file. All three stay in lock-step because the frames
//! are totally ordered per group.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    AgentMessage, MessageKind, NOTICE_TASK_STARTED, SERVER_SENDER,
};

/// Conversation phase of a group chat. `conclusion` is terminal; the initial
/// state is `discussion`. `async_assignment` exists as a transition label
/// only: an async assignment is recorded and the chat continues in
/// `discussion` without interruption, so the machine never rests there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversationState {
    Discussion,
    SyncAssignment,
    AsyncAssignment,
    PauseTrigger,
    Conclusion,
}

impl ConversationState {
    pub fn as_str(self) -> &'static str {
        match self {
            ConversationState::Discussion => "discussion",
            ConversationState::SyncAssignment => "sync_assignment",
            ConversationState::AsyncAssignment => "async_assignment",
            ConversationState::PauseTrigger => "pause_trigger",
            ConversationState::Conclusion => "conclusion",
        }
    }
}

/// Input alphabet of the machine: a conversation move proposed on the wire,
/// or a completion event synthesized when the last gating task reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsmInput {
    Kind(MessageKind),
    AllSyncTasksComplete,
    AllTriggersComplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FsmError {
    #[error("group already concluded")]
    GroupConcluded,
    #[error("sender {0} is not a member of this group")]
    NotMember(String),
    #[error("sender {0} is not an expected speaker")]
    NotYourTurn(String),
    #[error("turn budget exhausted: only a conclusion is acceptable")]
    TurnBudgetExhausted,
    #[error("illegal transition: {kind} in state {state}")]
    IllegalTransition { state: &'static str, kind: &'static str },
    #[error("trigger references unknown task {0}")]
    UnknownTrigger(String),
    #[error("duplicate task_result for task {0}")]
    DuplicateTaskResult(String),
}

/// The transition table. Anything not listed is illegal.
pub fn allowed(state: ConversationState, input: FsmInput) -> Result<ConversationState, FsmError> {
    use ConversationState::*;
    match (state, input) {
        (Discussion, FsmInput::Kind(MessageKind::Discussion)) => Ok(Discussion),
        (Discussion, FsmInput::Kind(MessageKind::SyncTaskAssignment)) => Ok(SyncAssignment),
        (Discussion, FsmInput::Kind(MessageKind::AsyncTaskAssignment)) => Ok(Discussion),
        (Discussion, FsmInput::Kind(MessageKind::PauseAndTrigger)) => Ok(PauseTrigger),
        (Discussion, FsmInput::Kind(MessageKind::Conclusion)) => Ok(Conclusion),
        (SyncAssignment, FsmInput::AllSyncTasksComplete) => Ok(Discussion),
        (PauseTrigger, FsmInput::AllTriggersComplete) => Ok(Discussion),
        (s, input) => Err(FsmError::IllegalTransition {
            state: s.as_str(),
            kind: match input {
                FsmInput::Kind(k) => k.as_str(),
                FsmInput::AllSyncTasksComplete => "all_sync_tasks_complete",
                FsmInput::AllTriggersComplete => "all_triggers_complete",
            },
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    Sync,
    Async,
}

impl TaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskMode::Sync => "sync",
            TaskMode::Async => "async",
        }
    }
}

/// What the machine knows about one announced task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskMeta {
    pub assignee: String,
    pub mode: TaskMode,
    pub completed: bool,
    /// Announce order, for deterministic iteration.
    pub order: usize,
}

/// Side effects of an [`ChatMachine::advance`] call that the surrounding
/// layer must act on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MachineEvent {
    /// A sync or pause gate released; `speaker` is now the sole expected
    /// speaker.
    Resumed { speaker: String },
    /// The turn budget is spent and the floor is open: the initiator must
    /// send a conclusion next.
    ConclusionDue,
}

/// Full per-group conversation bookkeeping, advanced one frame at a time in
/// seq order. Pure value semantics: no I/O, no clocks, deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMachine {
    comm_id: String,
    goal: String,
    members: Vec<String>,
    initiator: String,
    max_turns: u32,
    team_up_depth: u32,
    state: ConversationState,
    turn_count: u32,
    expected_speakers: BTreeSet<String>,
    open_sync_assignees: BTreeSet<String>,
    open_triggers: BTreeSet<String>,
    known_tasks: BTreeMap<String, TaskMeta>,
    resume_speaker: Option<String>,
    forced_conclusion: bool,
    conclusion_demanded: bool,
}

impl ChatMachine {
    pub fn new(
        comm_id: impl Into<String>,
        goal: impl Into<String>,
        members: Vec<String>,
        initiator: impl Into<String>,
        max_turns: u32,
        team_up_depth: u32,
    ) -> Self {
        let initiator = initiator.into();
        let mut expected = BTreeSet::new();
        expected.insert(initiator.clone());
        ChatMachine {
            comm_id: comm_id.into(),
            goal: goal.into(),
            members,
            initiator,
            max_turns,
            team_up_depth,
            state: ConversationState::Discussion,
            turn_count: 0,
            expected_speakers: expected,
            open_sync_assignees: BTreeSet::new(),
            open_triggers: BTreeSet::new(),
            known_tasks: BTreeMap::new(),
            resume_speaker: None,
            forced_conclusion: false,
            conclusion_demanded: false,
        }
    }

    /// Builds a machine from the group-setup notice that opens every
    /// transcript (sender `@server`, goal/members/max_turns/depth fields,
    /// next_speaker = [initiator]).
    pub fn from_setup_notice(msg: &AgentMessage) -> Option<Self> {
        if msg.kind() != MessageKind::SystemNotice || msg.header.sender != SERVER_SENDER {
            return None;
        }
        let p = &msg.payload;
        let members = p.team_members.clone()?;
        let initiator = p.next_speaker.first()?.clone();
        Some(ChatMachine::new(
            msg.header.comm_id.clone(),
            p.goal.clone().unwrap_or_default(),
            members,
            initiator,
            p.max_turns?,
            p.team_up_depth.unwrap_or(0),
        ))
    }

    pub fn comm_id(&self) -> &str {
        &self.comm_id
    }
    pub fn goal(&self) -> &str {
        &self.goal
    }
    pub fn members(&self) -> &[String] {
        &self.members
    }
    pub fn initiator(&self) -> &str {
        &self.initiator
    }
    pub fn state(&self) -> ConversationState {
        self.state
    }
    pub fn turn_count(&self) -> u32 {
        self.turn_count
    }
    pub fn max_turns(&self) -> u32 {
        self.max_turns
    }
    pub fn team_up_depth(&self) -> u32 {
        self.team_up_depth
    }
    pub fn expected_speakers(&self) -> &BTreeSet<String> {
        &self.expected_speakers
    }
    pub fn open_sync_assignees(&self) -> &BTreeSet<String> {
        &self.open_sync_assignees
    }
    pub fn open_triggers(&self) -> &BTreeSet<String> {
        &self.open_triggers
    }
    pub fn conclusion_demanded(&self) -> bool {
        self.conclusion_demanded
    }
    pub fn task_meta(&self, task_id: &str) -> Option<&TaskMeta> {
        self.known_tasks.get(task_id)
    }

    /// Announced-but-incomplete async task ids, in announce order.
    pub fn open_async_tasks(&self) -> Vec<String> {
        let mut open: Vec<(&usize, &String)> = self
            .known_tasks
            .iter()
            .filter(|(_, m)| m.mode == TaskMode::Async && !m.completed)
            .map(|(id, m)| (&m.order, id))
            .collect();
        open.sort();
        open.into_iter().map(|(_, id)| id.clone()).collect()
    }

    /// True once the conversation has concluded and no task result is still
    /// owed to the transcript.
    pub fn is_quiescent(&self) -> bool {
        self.state == ConversationState::Conclusion
            && self.open_sync_assignees.is_empty()
            && self.open_triggers.is_empty()
            && self.known_tasks.values().all(|m| m.completed)
    }

    fn is_member(&self, name: &str) -> bool {
        self.members.iter().any(|m| m == name)
    }

    /// Applies one frame. Conversation kinds are checked against sequential
    /// speaking, the turn budget, and the transition table; plumbing kinds
    /// update task bookkeeping and may release a gate.
    pub fn advance(&mut self, msg: &AgentMessage) -> Result<Vec<MachineEvent>, FsmError> {
        let kind = msg.kind();
        if kind.is_conversation() {
            self.advance_conversation(msg, kind)
        } else {
            self.advance_plumbing(msg, kind)
        }
    }

    fn advance_conversation(
        &mut self,
        msg: &AgentMessage,
        kind: MessageKind,
    ) -> Result<Vec<MachineEvent>, FsmError> {
        let sender = &msg.header.sender;
        if self.state == ConversationState::Conclusion {
            return Err(FsmError::GroupConcluded);
        }
        if !self.is_member(sender) {
            return Err(FsmError::NotMember(sender.clone()));
        }
        if !self.expected_speakers.contains(sender) {
            return Err(FsmError::NotYourTurn(sender.clone()));
        }
        if self.turn_count >= self.max_turns && kind != MessageKind::Conclusion {
            return Err(FsmError::TurnBudgetExhausted);
        }
        let next = allowed(self.state, FsmInput::Kind(kind))?;

        // Validate pause triggers before mutating anything.
        if kind == MessageKind::PauseAndTrigger {
            for id in msg.payload.triggers.as_deref().unwrap_or_default() {
                if !self.known_tasks.contains_key(id) {
                    return Err(FsmError::UnknownTrigger(id.clone()));
                }
            }
        }

        self.turn_count += 1;
        self.state = next;
        let mut events = Vec::new();
        match kind {
            MessageKind::Discussion => {
                self.set_expected(&msg.payload.next_speaker);
            }
            MessageKind::SyncTaskAssignment => {
                for assignee in &msg.payload.next_speaker {
                    self.open_sync_assignees.insert(assignee.clone());
                }
                self.resume_speaker = Some(sender.clone());
                self.set_expected(&msg.payload.next_speaker);
            }
            MessageKind::AsyncTaskAssignment => {
                self.set_expected(&msg.payload.next_speaker);
            }
            MessageKind::PauseAndTrigger => {
                let still_open: BTreeSet<String> = msg
                    .payload
                    .triggers
                    .as_deref()
                    .unwrap_or_default()
                    .iter()
                    .filter(|id| !self.known_tasks[id.as_str()].completed)
                    .cloned()
                    .collect();
                if still_open.is_empty() {
                    // Everything already reported: the pause resolves on the
                    // spot and the floor returns to the sender.
                    self.state = ConversationState::Discussion;
                    self.set_expected(std::slice::from_ref(sender));
                } else {
                    self.open_triggers = still_open;
                    self.resume_speaker = Some(sender.clone());
                    self.expected_speakers.clear();
                }
            }
            MessageKind::Conclusion => {
                self.expected_speakers.clear();
            }
            MessageKind::TaskResult | MessageKind::SystemNotice => unreachable!(),
        }

        if self.turn_count >= self.max_turns {
            match self.state {
                ConversationState::Discussion => {
                    self.forced_conclusion = true;
                    let initiator = self.initiator.clone();
                    self.set_expected(std::slice::from_ref(&initiator));
                    if !self.conclusion_demanded {
                        self.conclusion_demanded = true;
                        events.push(MachineEvent::ConclusionDue);
                    }
                }
                ConversationState::SyncAssignment | ConversationState::PauseTrigger => {
                    // Gate still open; the demand is issued on resume.
                    self.forced_conclusion = true;
                }
                _ => {}
            }
        }
        Ok(events)
    }

    fn advance_plumbing(
        &mut self,
        msg: &AgentMessage,
        kind: MessageKind,
    ) -> Result<Vec<MachineEvent>, FsmError> {
        let sender = &msg.header.sender;
        if sender != SERVER_SENDER && !self.is_member(sender) {
            return Err(FsmError::NotMember(sender.clone()));
        }
        match kind {
            MessageKind::SystemNotice => {
                self.register_task_notice(msg);
                Ok(Vec::new())
            }
            MessageKind::TaskResult => self.apply_task_result(msg),
            _ => unreachable!(),
        }
    }

    fn register_task_notice(&mut self, msg: &AgentMessage) {
        let Some(content) = msg.payload.content.as_deref() else {
            return;
        };
        let Some(mode_str) = content
            .strip_prefix(NOTICE_TASK_STARTED)
            .and_then(|rest| rest.strip_prefix(':'))
        else {
            return;
        };
        let mode = match mode_str {
            "sync" => TaskMode::Sync,
            "async" => TaskMode::Async,
            _ => return,
        };
        let Some(task_id) = msg.payload.task_id.clone() else {
            return;
        };
        let order = self.known_tasks.len();
        self.known_tasks.entry(task_id).or_insert(TaskMeta {
            assignee: msg.header.sender.clone(),
            mode,
            completed: false,
            order,
        });
    }

    fn apply_task_result(&mut self, msg: &AgentMessage) -> Result<Vec<MachineEvent>, FsmError> {
        let sender = msg.header.sender.clone();
        let task_id = msg
            .payload
            .task_id
            .clone()
            .expect("validated by protocol: task_result carries task_id");

        match self.known_tasks.get_mut(&task_id) {
            Some(meta) => {
                if meta.completed {
                    return Err(FsmError::DuplicateTaskResult(task_id));
                }
                meta.completed = true;
                if meta.mode == TaskMode::Sync {
                    let assignee = meta.assignee.clone();
                    self.open_sync_assignees.remove(&assignee);
                }
            }
            None => {
                // Result for a task that was never announced (hand-written
                // logs). Attribute it to the sender's open sync slot if one
                // exists, otherwise record it as an ad-hoc async completion.
                let mode = if self.open_sync_assignees.remove(&sender) {
                    TaskMode::Sync
                } else {
                    TaskMode::Async
                };
                let order = self.known_tasks.len();
                self.known_tasks.insert(
                    task_id.clone(),
                    TaskMeta { assignee: sender, mode, completed: true, order },
                );
            }
        }
        self.open_triggers.remove(&task_id);

        let released = match self.state {
            ConversationState::SyncAssignment if self.open_sync_assignees.is_empty() => {
                self.state = allowed(self.state, FsmInput::AllSyncTasksComplete)?;
                true
            }
            ConversationState::PauseTrigger if self.open_triggers.is_empty() => {
                self.state = allowed(self.state, FsmInput::AllTriggersComplete)?;
                true
            }
            _ => false,
        };

        let mut events = Vec::new();
        if released {
            if self.forced_conclusion {
                let speaker = self.initiator.clone();
                self.set_expected(std::slice::from_ref(&speaker));
                events.push(MachineEvent::Resumed { speaker });
                if !self.conclusion_demanded {
                    self.conclusion_demanded = true;
                    events.push(MachineEvent::ConclusionDue);
                }
            } else {
                let speaker = self
                    .resume_speaker
                    .clone()
                    .unwrap_or_else(|| self.initiator.clone());
                self.set_expected(std::slice::from_ref(&speaker));
                events.push(MachineEvent::Resumed { speaker });
            }
        }
        Ok(events)
    }

    fn set_expected(&mut self, speakers: &[String]) {
        self.expected_speakers = speakers.iter().cloned().collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{AgentMessage, MessagePayload};

    fn machine() -> ChatMachine {
        ChatMachine::new(
            "g0",
            "test goal",
            vec!["A".into(), "B".into(), "C".into()],
            "A",
            20,
            0,
        )
    }

    fn frame(sender: &str, kind: MessageKind, next: &[&str]) -> AgentMessage {
        let mut payload = MessagePayload {
            kind,
            next_speaker: next.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        };
        if kind == MessageKind::Conclusion {
            payload.content = Some("done".into());
        } else if kind.is_conversation() {
            payload.content = Some("msg".into());
        }
        AgentMessage::new(sender, "g0", payload)
    }

    fn announce(sender: &str, task_id: &str, mode: TaskMode) -> AgentMessage {
        AgentMessage::new(
            sender,
            "g0",
            MessagePayload {
                kind: MessageKind::SystemNotice,
                content: Some(format!("{}:{}", NOTICE_TASK_STARTED, mode.as_str())),
                task_id: Some(task_id.into()),
                ..Default::default()
            },
        )
    }

    fn result(sender: &str, task_id: &str) -> AgentMessage {
        AgentMessage::new(
            sender,
            "g0",
            MessagePayload {
                kind: MessageKind::TaskResult,
                task_id: Some(task_id.into()),
                task_conclusion: Some("out".into()),
                task_abstract: Some("out".into()),
                ..Default::default()
            },
        )
    }

    #[test]
    fn transition_table_examples() {
        use ConversationState::*;
        assert_eq!(allowed(Discussion, FsmInput::Kind(MessageKind::Conclusion)).unwrap(), Conclusion);
        assert!(allowed(Conclusion, FsmInput::Kind(MessageKind::Discussion)).is_err());
        assert_eq!(allowed(SyncAssignment, FsmInput::AllSyncTasksComplete).unwrap(), Discussion);
        assert_eq!(allowed(PauseTrigger, FsmInput::AllTriggersComplete).unwrap(), Discussion);
        assert!(allowed(PauseTrigger, FsmInput::Kind(MessageKind::Discussion)).is_err());
    }

    #[test]
    fn async_assignment_keeps_discussion_and_registers_on_announce() {
        let mut m = machine();
        m.advance(&frame("A", MessageKind::AsyncTaskAssignment, &["B"])).unwrap();
        assert_eq!(m.state(), ConversationState::Discussion);
        assert_eq!(m.turn_count(), 1);
        m.advance(&announce("B", "t1", TaskMode::Async)).unwrap();
        assert_eq!(m.open_async_tasks(), vec!["t1".to_string()]);
        assert_eq!(m.turn_count(), 1, "plumbing never consumes a turn");
    }

    #[test]
    fn sync_gate_releases_when_last_result_arrives() {
        let mut m = machine();
        m.advance(&frame("A", MessageKind::SyncTaskAssignment, &["B", "C"])).unwrap();
        assert_eq!(m.state(), ConversationState::SyncAssignment);
        m.advance(&announce("B", "t1", TaskMode::Sync)).unwrap();
        m.advance(&announce("C", "t2", TaskMode::Sync)).unwrap();
        assert!(m.advance(&result("B", "t1")).unwrap().is_empty());
        assert_eq!(m.state(), ConversationState::SyncAssignment);
        let events = m.advance(&result("C", "t2")).unwrap();
        assert_eq!(m.state(), ConversationState::Discussion);
        assert_eq!(events, vec![MachineEvent::Resumed { speaker: "A".into() }]);
        assert_eq!(m.expected_speakers().iter().collect::<Vec<_>>(), vec!["A"]);
    }

    #[test]
    fn trigger_release_returns_floor_to_pause_issuer() {
        let mut m = machine();
        m.advance(&frame("A", MessageKind::AsyncTaskAssignment, &["B"])).unwrap();
        m.advance(&announce("B", "t1", TaskMode::Async)).unwrap();
        // B hands the floor back, then A pauses on t1.
        m.advance(&frame("B", MessageKind::Discussion, &["A"])).unwrap();
        let mut pause = frame("A", MessageKind::PauseAndTrigger, &[]);
        pause.payload.triggers = Some(vec!["t1".into()]);
        m.advance(&pause).unwrap();
        assert_eq!(m.state(), ConversationState::PauseTrigger);
        assert!(m.expected_speakers().is_empty());
        assert!(m.advance(&frame("B", MessageKind::Discussion, &["A"])).is_err());
        let events = m.advance(&result("B", "t1")).unwrap();
        assert_eq!(m.state(), ConversationState::Discussion);
        assert_eq!(events, vec![MachineEvent::Resumed { speaker: "A".into() }]);
    }

    #[test]
    fn pause_on_completed_tasks_resolves_immediately() {
        let mut m = machine();
        m.advance(&frame("A", MessageKind::AsyncTaskAssignment, &["B"])).unwrap();
        m.advance(&announce("B", "t1", TaskMode::Async)).unwrap();
        m.advance(&result("B", "t1")).unwrap();
        m.advance(&frame("B", MessageKind::Discussion, &["A"])).unwrap();
        let mut pause = frame("A", MessageKind::PauseAndTrigger, &[]);
        pause.payload.triggers = Some(vec!["t1".into()]);
        m.advance(&pause).unwrap();
        assert_eq!(m.state(), ConversationState::Discussion);
        assert_eq!(m.expected_speakers().iter().collect::<Vec<_>>(), vec!["A"]);
    }

    #[test]
    fn unknown_trigger_is_rejected() {
        let mut m = machine();
        let mut pause = frame("A", MessageKind::PauseAndTrigger, &[]);
        pause.payload.triggers = Some(vec!["ghost".into()]);
        assert_eq!(
            m.advance(&pause).unwrap_err(),
            FsmError::UnknownTrigger("ghost".into())
        );
        assert_eq!(m.turn_count(), 0, "rejected frames leave the machine untouched");
    }

    #[test]
    fn turn_budget_forces_conclusion() {
        let mut m = ChatMachine::new("g0", "goal", vec!["A".into(), "B".into()], "A", 2, 0);
        m.advance(&frame("A", MessageKind::Discussion, &["B"])).unwrap();
        let events = m.advance(&frame("B", MessageKind::Discussion, &["B"])).unwrap();
        assert_eq!(events, vec![MachineEvent::ConclusionDue]);
        assert_eq!(m.expected_speakers().iter().collect::<Vec<_>>(), vec!["A"]);
        // Initiator may only conclude now.
        assert_eq!(
            m.advance(&frame("A", MessageKind::Discussion, &["B"])).unwrap_err(),
            FsmError::TurnBudgetExhausted
        );
        m.advance(&frame("A", MessageKind::Conclusion, &[])).unwrap();
        assert_eq!(m.turn_count(), 3); // max_turns + 1
        assert_eq!(m.state(), ConversationState::Conclusion);
    }

    #[test]
    fn no_escape_from_conclusion() {
        let mut m = machine();
        m.advance(&frame("A", MessageKind::Conclusion, &[])).unwrap();
        for kind in MessageKind::ALL {
            if !kind.is_conversation() {
                continue;
            }
            let mut f = frame("A", kind, &["B"]);
            if kind == MessageKind::PauseAndTrigger {
                f.payload.triggers = Some(vec!["t".into()]);
            }
            if kind == MessageKind::Conclusion {
                f.payload.next_speaker.clear();
            }
            assert_eq!(m.advance(&f).unwrap_err(), FsmError::GroupConcluded);
        }
        assert_eq!(m.state(), ConversationState::Conclusion);
    }

    #[test]
    fn quiescence_requires_all_results_in() {
        let mut m = machine();
        assert!(!m.is_quiescent());
        m.advance(&frame("A", MessageKind::AsyncTaskAssignment, &["B"])).unwrap();
        m.advance(&announce("B", "t1", TaskMode::Async)).unwrap();
        m.advance(&frame("B", MessageKind::Discussion, &["A"])).unwrap();
        m.advance(&frame("A", MessageKind::Conclusion, &[])).unwrap();
        assert!(!m.is_quiescent(), "async result still owed");
        m.advance(&result("B", "t1")).unwrap();
        assert!(m.is_quiescent());
    }

    #[test]
    fn out_of_turn_speaker_is_rejected() {
        let mut m = machine();
        assert_eq!(
            m.advance(&frame("B", MessageKind::Discussion, &["A"])).unwrap_err(),
            FsmError::NotYourTurn("B".into())
        );
        assert_eq!(
            m.advance(&frame("Z", MessageKind::Discussion, &["A"])).unwrap_err(),
            FsmError::NotMember("Z".into())
        );
    }

    #[test]
    fn duplicate_result_is_rejected() {
        let mut m = machine();
        m.advance(&frame("A", MessageKind::AsyncTaskAssignment, &["B"])).unwrap();
        m.advance(&announce("B", "t1", TaskMode::Async)).unwrap();
        m.advance(&result("B", "t1")).unwrap();
        assert_eq!(
            m.advance(&result("B", "t1")).unwrap_err(),
            FsmError::DuplicateTaskResult("t1".into())
        );
    }
}
