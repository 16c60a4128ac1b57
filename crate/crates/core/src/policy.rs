//! The pluggable decision seam. Every point where the surrounding system
//! would consult a model — tool choice during team formation, the next
//! utterance and speaker, task summarization, trigger selection, conclusions
//! — goes through [`Policy`]. The scripted implementation makes whole runs
//! deterministic; the remote adapter forwards the same decisions to an HTTP
//! endpoint and is never required by any test.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsm::ConversationState;
use crate::protocol::{AgentMessage, MessageKind};
use crate::registry::AgentProfile;
use crate::teaming::ToolCall;

/// A proposed conversation move: the next state is implied by `kind`, the
/// next speaker(s) ride alongside, mirroring the protocol's kind/field
/// coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceDecision {
    pub kind: MessageKind,
    pub content: String,
    pub next_speakers: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triggers: Option<Vec<String>>,
}

/// How an assigned task should be handled: run the integrated agent, or
/// spawn a sub-group for it.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskHandling {
    Execute,
    Spawn { goal: String },
}

pub struct TeamContext<'a> {
    pub self_name: &'a str,
    pub task: &'a str,
    pub search_results: &'a [AgentProfile],
    pub contacts: &'a [String],
    pub calls_so_far: u32,
}

pub struct UtteranceContext<'a> {
    pub self_name: &'a str,
    pub goal: &'a str,
    pub state: ConversationState,
    pub members: &'a [String],
    pub transcript: &'a [AgentMessage],
    /// Announced, not-yet-completed async tasks in announce order:
    /// `(task_id, assignee)`.
    pub open_async: &'a [(String, String)],
}

pub struct TaskContext<'a> {
    pub self_name: &'a str,
    pub goal: &'a str,
    pub transcript: &'a [AgentMessage],
    pub assignment: &'a AgentMessage,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("script exhausted for goal {goal} ({method})")]
    ScriptExhausted { goal: String, method: &'static str },
    #[error("script record mismatch for goal {goal}: {method} got {got}")]
    WrongRecord { goal: String, method: &'static str, got: String },
    #[error("remote policy adapter unreachable: {0}")]
    AdapterUnreachable(String),
    #[error("remote policy returned malformed decision: {0}")]
    MalformedDecision(String),
}

/// Decisions the framework delegates. Implementations are per-client and
/// only ever called from that client's dispatch loop.
pub trait Policy: Send {
    fn decide_team_action(&mut self, ctx: &TeamContext<'_>) -> Result<ToolCall, PolicyError>;

    /// `None` means stay silent (used when several agents share the floor
    /// after a multi-assignee assignment and only one is meant to speak).
    fn decide_utterance(
        &mut self,
        ctx: &UtteranceContext<'_>,
    ) -> Result<Option<UtteranceDecision>, PolicyError>;

    fn summarize_task(&mut self, ctx: &TaskContext<'_>) -> Result<String, PolicyError>;

    /// Whether an assigned task runs on the integrated agent or spawns a
    /// sub-group. Defaults to local execution.
    fn decide_task_handling(&mut self, ctx: &TaskContext<'_>) -> Result<TaskHandling, PolicyError> {
        let _ = ctx;
        Ok(TaskHandling::Execute)
    }

    /// Final answer for the group goal, consulted when the turn budget
    /// forces a conclusion.
    fn conclude(&mut self, goal: &str, transcript: &[AgentMessage]) -> Result<String, PolicyError>;

    /// Post-collaboration note stored in the contact book.
    fn collaboration_note(&mut self, goal: &str, teammate: &str) -> String {
        let _ = teammate;
        format!("collaborated on: {goal}")
    }
}

pub mod script {
    //! Scripted decision records, the unit both [`super::ScriptedPolicy`]
    //! and scenario files share.

    use super::*;

    /// Which open async tasks a scripted pause waits on; resolved to task
    /// ids at decision time from the client's local task view.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(rename_all = "snake_case")]
    pub enum TriggerSelector {
        AllOpen,
        Assignees(Vec<String>),
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(rename_all = "snake_case")]
    pub enum SpawnSpec {
        Spawn { goal: String },
    }

    /// One scripted decision. Records are consumed strictly in order per
    /// group goal; a consumed record must match the decision being asked
    /// for.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(rename_all = "snake_case")]
    pub enum Record {
        Search { characteristics: Vec<String> },
        Launch { team_members: Option<Vec<String>> },
        Say { kind: MessageKind, content: String, next_speaker: Vec<String> },
        Pause { content: String, triggers: TriggerSelector },
        Silent,
        Summarize(String),
        HandleTask(SpawnSpec),
        Conclude(String),
    }

    impl Record {
        pub fn label(&self) -> &'static str {
            match self {
                Record::Search { .. } => "search",
                Record::Launch { .. } => "launch",
                Record::Say { .. } => "say",
                Record::Pause { .. } => "pause",
                Record::Silent => "silent",
                Record::Summarize(_) => "summarize",
                Record::HandleTask(_) => "handle_task",
                Record::Conclude(_) => "conclude",
            }
        }
    }
}

use script::{Record, TriggerSelector};

/// Deterministic test double for the in-client model: an ordered script of
/// decision records per group goal. Consuming past the end is an error.
/// Decisions never inspect clocks or generated ids, so replays of the same
/// scenario produce identical decision sequences.
#[derive(Debug, Default)]
pub struct ScriptedPolicy {
    scripts: BTreeMap<String, VecDeque<Record>>,
}

impl ScriptedPolicy {
    pub fn new() -> Self {
        ScriptedPolicy::default()
    }

    pub fn load(&mut self, goal: impl Into<String>, records: Vec<Record>) {
        self.scripts.insert(goal.into(), records.into());
    }

    pub fn remaining(&self, goal: &str) -> usize {
        self.scripts.get(goal).map_or(0, |q| q.len())
    }

    fn pop(&mut self, goal: &str, method: &'static str) -> Result<Record, PolicyError> {
        self.scripts
            .get_mut(goal)
            .and_then(|q| q.pop_front())
            .ok_or(PolicyError::ScriptExhausted { goal: goal.to_string(), method })
    }

    fn peek_label(&self, goal: &str) -> Option<&'static str> {
        self.scripts.get(goal).and_then(|q| q.front()).map(|r| r.label())
    }

    fn resolve_triggers(
        selector: &TriggerSelector,
        open_async: &[(String, String)],
    ) -> Vec<String> {
        match selector {
            TriggerSelector::AllOpen => open_async.iter().map(|(id, _)| id.clone()).collect(),
            TriggerSelector::Assignees(names) => open_async
                .iter()
                .filter(|(_, assignee)| names.contains(assignee))
                .map(|(id, _)| id.clone())
                .collect(),
        }
    }
}

impl Policy for ScriptedPolicy {
    fn decide_team_action(&mut self, ctx: &TeamContext<'_>) -> Result<ToolCall, PolicyError> {
        match self.pop(ctx.task, "decide_team_action")? {
            Record::Search { characteristics } => Ok(ToolCall::Search { characteristics }),
            Record::Launch { team_members } => Ok(ToolCall::Launch { team_members }),
            other => Err(PolicyError::WrongRecord {
                goal: ctx.task.to_string(),
                method: "decide_team_action",
                got: other.label().to_string(),
            }),
        }
    }

    fn decide_utterance(
        &mut self,
        ctx: &UtteranceContext<'_>,
    ) -> Result<Option<UtteranceDecision>, PolicyError> {
        match self.pop(ctx.goal, "decide_utterance")? {
            Record::Say { kind, content, next_speaker } => Ok(Some(UtteranceDecision {
                kind,
                content,
                next_speakers: next_speaker,
                triggers: None,
            })),
            Record::Pause { content, triggers } => Ok(Some(UtteranceDecision {
                kind: MessageKind::PauseAndTrigger,
                content,
                next_speakers: Vec::new(),
                triggers: Some(Self::resolve_triggers(&triggers, ctx.open_async)),
            })),
            Record::Silent => Ok(None),
            other => Err(PolicyError::WrongRecord {
                goal: ctx.goal.to_string(),
                method: "decide_utterance",
                got: other.label().to_string(),
            }),
        }
    }

    fn summarize_task(&mut self, ctx: &TaskContext<'_>) -> Result<String, PolicyError> {
        match self.pop(ctx.goal, "summarize_task")? {
            Record::Summarize(text) => Ok(text),
            other => Err(PolicyError::WrongRecord {
                goal: ctx.goal.to_string(),
                method: "summarize_task",
                got: other.label().to_string(),
            }),
        }
    }

    fn decide_task_handling(&mut self, ctx: &TaskContext<'_>) -> Result<TaskHandling, PolicyError> {
        // Spawning is opt-in: only an explicit handle_task record diverts a
        // task away from the integrated agent.
        if self.peek_label(ctx.goal) != Some("handle_task") {
            return Ok(TaskHandling::Execute);
        }
        match self.pop(ctx.goal, "decide_task_handling")? {
            Record::HandleTask(script::SpawnSpec::Spawn { goal }) => Ok(TaskHandling::Spawn { goal }),
            _ => unreachable!("peeked handle_task"),
        }
    }

    fn conclude(&mut self, goal: &str, _transcript: &[AgentMessage]) -> Result<String, PolicyError> {
        match self.pop(goal, "conclude")? {
            Record::Conclude(text) => Ok(text),
            other => Err(PolicyError::WrongRecord {
                goal: goal.to_string(),
                method: "conclude",
                got: other.label().to_string(),
            }),
        }
    }
}

pub mod remote {
    //! Minimal HTTP JSON adapter: every decision is a POST of
    //! `{system_prompt, messages, expected_schema}` to one endpoint, and the
    //! response body is the decision JSON. HTTP/1.1 with Content-Length
    //! framing only; no TLS. Strictly optional and excluded from acceptance.

    use std::io::{Read, Write};
    use std::net::TcpStream;
    use std::time::Duration;

    use super::*;

    #[derive(Debug, Serialize)]
    struct AdapterRequest<'a> {
        system_prompt: &'a str,
        messages: Vec<serde_json::Value>,
        expected_schema: &'a str,
    }

    #[derive(Debug, Deserialize)]
    struct TextResponse {
        text: String,
    }

    pub struct RemotePolicy {
        /// host:port of the adapter endpoint.
        authority: String,
        path: String,
        system_prompt: String,
        timeout: Duration,
    }

    impl RemotePolicy {
        /// `endpoint` looks like `http://127.0.0.1:9000/decide`.
        pub fn new(endpoint: &str, system_prompt: impl Into<String>) -> Result<Self, PolicyError> {
            let rest = endpoint
                .strip_prefix("http://")
                .ok_or_else(|| PolicyError::AdapterUnreachable("only http:// endpoints".into()))?;
            let (authority, path) = match rest.find('/') {
                Some(i) => (rest[..i].to_string(), rest[i..].to_string()),
                None => (rest.to_string(), "/".to_string()),
            };
            Ok(RemotePolicy {
                authority,
                path,
                system_prompt: system_prompt.into(),
                timeout: Duration::from_secs(30),
            })
        }

        fn post(&self, schema: &str, messages: Vec<serde_json::Value>) -> Result<String, PolicyError> {
            let body = serde_json::to_string(&AdapterRequest {
                system_prompt: &self.system_prompt,
                messages,
                expected_schema: schema,
            })
            .expect("request serializes");
            let mut stream = TcpStream::connect(&self.authority)
                .map_err(|e| PolicyError::AdapterUnreachable(e.to_string()))?;
            stream.set_read_timeout(Some(self.timeout)).ok();
            stream.set_write_timeout(Some(self.timeout)).ok();
            let request = format!(
                "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                self.path,
                self.authority,
                body.len(),
                body
            );
            stream
                .write_all(request.as_bytes())
                .map_err(|e| PolicyError::AdapterUnreachable(e.to_string()))?;
            let mut raw = String::new();
            stream
                .read_to_string(&mut raw)
                .map_err(|e| PolicyError::AdapterUnreachable(e.to_string()))?;
            let (head, response_body) = raw
                .split_once("\r\n\r\n")
                .ok_or_else(|| PolicyError::MalformedDecision("no header/body split".into()))?;
            let status = head.lines().next().unwrap_or_default();
            if !status.contains(" 200") {
                return Err(PolicyError::AdapterUnreachable(format!("status: {status}")));
            }
            Ok(response_body.to_string())
        }

        fn transcript_json(transcript: &[AgentMessage]) -> Vec<serde_json::Value> {
            transcript
                .iter()
                .map(|m| serde_json::to_value(m).expect("messages serialize"))
                .collect()
        }
    }

    impl Policy for RemotePolicy {
        fn decide_team_action(&mut self, ctx: &TeamContext<'_>) -> Result<ToolCall, PolicyError> {
            let messages = vec![serde_json::json!({
                "task": ctx.task,
                "search_results": ctx.search_results,
                "contacts": ctx.contacts,
                "calls_so_far": ctx.calls_so_far,
            })];
            let body = self.post("tool_call", messages)?;
            serde_json::from_str(&body).map_err(|e| PolicyError::MalformedDecision(e.to_string()))
        }

        fn decide_utterance(
            &mut self,
            ctx: &UtteranceContext<'_>,
        ) -> Result<Option<UtteranceDecision>, PolicyError> {
            let mut messages = Self::transcript_json(ctx.transcript);
            messages.push(serde_json::json!({
                "state": ctx.state.as_str(),
                "members": ctx.members,
                "self": ctx.self_name,
            }));
            let body = self.post("utterance_decision", messages)?;
            let decision: UtteranceDecision = serde_json::from_str(&body)
                .map_err(|e| PolicyError::MalformedDecision(e.to_string()))?;
            Ok(Some(decision))
        }

        fn summarize_task(&mut self, ctx: &TaskContext<'_>) -> Result<String, PolicyError> {
            let mut messages = Self::transcript_json(ctx.transcript);
            messages.push(serde_json::json!({"assignment": ctx.assignment, "self": ctx.self_name}));
            let body = self.post("text", messages)?;
            let resp: TextResponse = serde_json::from_str(&body)
                .map_err(|e| PolicyError::MalformedDecision(e.to_string()))?;
            Ok(resp.text)
        }

        fn conclude(
            &mut self,
            goal: &str,
            transcript: &[AgentMessage],
        ) -> Result<String, PolicyError> {
            let mut messages = Self::transcript_json(transcript);
            messages.push(serde_json::json!({"goal": goal}));
            let body = self.post("text", messages)?;
            let resp: TextResponse = serde_json::from_str(&body)
                .map_err(|e| PolicyError::MalformedDecision(e.to_string()))?;
            Ok(resp.text)
        }
    }
}
