//! Agent message schema, canonical byte encoding, and per-kind validation.
//!
//! Every client and the server speak this one frame type. A frame is a single
//! UTF-8 JSON object terminated by a newline, with lexicographically ordered
//! keys and absent optionals omitted, so that encoding is byte-deterministic
//! and transcripts can be compared byte-for-byte.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved sender name for frames originated by the server itself
/// (group-setup announcements, forced-conclusion notices). Agent names
/// starting with `@` cannot be registered.
pub const SERVER_SENDER: &str = "@server";

/// Content marker for the setup notice routed when a group is created.
pub const NOTICE_GROUP_CREATED: &str = "group_created";
/// Content marker for the notice demanding conclusion once the turn budget
/// is exhausted.
pub const NOTICE_CONCLUSION_REQUIRED: &str = "conclusion_required";
/// Content prefix for a task-start notice: `task_started:sync` or
/// `task_started:async`, emitted by an assignee before it begins execution
/// so every member (and the group machine) learns the task id.
pub const NOTICE_TASK_STARTED: &str = "task_started";

/// The purpose of a message. Five conversation kinds advance the group
/// state machine and consume a turn; `task_result` and `system_notice`
/// are plumbing and never advance the turn counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    #[default]
    Discussion,
    SyncTaskAssignment,
    AsyncTaskAssignment,
    PauseAndTrigger,
    Conclusion,
    TaskResult,
    SystemNotice,
}

impl MessageKind {
    /// True for kinds that constitute a dialogue move (and thus consume a
    /// turn and are subject to sequential speaking).
    pub fn is_conversation(self) -> bool {
        !matches!(self, MessageKind::TaskResult | MessageKind::SystemNotice)
    }

    pub const ALL: [MessageKind; 7] = [
        MessageKind::Discussion,
        MessageKind::SyncTaskAssignment,
        MessageKind::AsyncTaskAssignment,
        MessageKind::PauseAndTrigger,
        MessageKind::Conclusion,
        MessageKind::TaskResult,
        MessageKind::SystemNotice,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Discussion => "discussion",
            MessageKind::SyncTaskAssignment => "sync_task_assignment",
            MessageKind::AsyncTaskAssignment => "async_task_assignment",
            MessageKind::PauseAndTrigger => "pause_and_trigger",
            MessageKind::Conclusion => "conclusion",
            MessageKind::TaskResult => "task_result",
            MessageKind::SystemNotice => "system_notice",
        }
    }
}

/// Lifecycle phase the message belongs to. Team-formation traffic runs on
/// the control plane, so routed frames are `communication` in practice, but
/// the header keeps the distinction on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderState {
    TeamFormation,
    Communication,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageHeader {
    /// Name of the sending agent (or [`SERVER_SENDER`]).
    pub sender: String,
    pub state: HeaderState,
    /// Group chat this frame belongs to.
    pub comm_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MessagePayload {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub team_members: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub team_up_depth: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_turns: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    pub kind: MessageKind,
    /// Agents expected to speak next; for assignment kinds these are the
    /// assignees (one task per listed agent).
    pub next_speaker: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_desc: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_conclusion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_abstract: Option<String>,
    /// Task ids a pause waits on; required for `pause_and_trigger`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triggers: Option<Vec<String>>,
}

/// One wire unit: header plus payload, with a server-assigned sequence
/// number once routed. `seq` is strictly increasing and gapless per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentMessage {
    pub header: MessageHeader,
    pub payload: MessagePayload,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
}

/// A single violated invariant, suitable for error reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.detail)
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    /// Frame is not one newline-terminated line of valid UTF-8 JSON.
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    /// Valid JSON but does not match the schema (missing/extra/ill-typed fields).
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    /// Schema-valid but breaks a message invariant.
    #[error("validation failed: {}", format_violations(.0))]
    ValidationFailed(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Returns every invariant the message breaks; encode/decode succeed iff
/// the list is empty.
pub fn validate_message(msg: &AgentMessage) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &'static str, detail: String| out.push(Violation { field, detail });

    if msg.header.sender.is_empty() {
        push("header.sender", "must be non-empty".into());
    }
    if msg.header.state == HeaderState::Communication && msg.header.comm_id.is_empty() {
        push("header.comm_id", "must be non-empty for communication state".into());
    }
    let p = &msg.payload;
    match p.kind {
        MessageKind::Discussion => {
            if p.next_speaker.len() > 1 {
                push(
                    "payload.next_speaker",
                    format!("discussion is limited to a single next speaker, got {}", p.next_speaker.len()),
                );
            }
        }
        MessageKind::SyncTaskAssignment | MessageKind::AsyncTaskAssignment => {
            if p.next_speaker.is_empty() {
                push("payload.next_speaker", "task assignment requires at least one assignee".into());
            }
        }
        MessageKind::PauseAndTrigger => match &p.triggers {
            Some(t) if !t.is_empty() => {}
            _ => push("payload.triggers", "pause_and_trigger requires a non-empty trigger list".into()),
        },
        MessageKind::Conclusion => {
            if !p.next_speaker.is_empty() {
                push("payload.next_speaker", "conclusion must not name a next speaker".into());
            }
            match &p.content {
                Some(c) if !c.is_empty() => {}
                _ => push("payload.content", "conclusion requires non-empty content".into()),
            }
        }
        MessageKind::TaskResult => {
            if p.task_id.is_none() {
                push("payload.task_id", "task_result requires task_id".into());
            }
            if p.task_conclusion.is_none() {
                push("payload.task_conclusion", "task_result requires task_conclusion".into());
            }
            if p.task_abstract.is_none() {
                push("payload.task_abstract", "task_result requires task_abstract".into());
            }
        }
        MessageKind::SystemNotice => {}
    }
    if let Some(m) = p.max_turns {
        if m == 0 {
            push("payload.max_turns", "must be positive".into());
        }
    }
    out
}

/// Encodes a valid message as one canonical JSON line: keys sorted
/// lexicographically, absent optionals omitted, single trailing newline.
pub fn encode_message(msg: &AgentMessage) -> Result<String, CodecError> {
    let violations = validate_message(msg);
    if !violations.is_empty() {
        return Err(CodecError::ValidationFailed(violations));
    }
    // Round-tripping through Value sorts object keys: serde_json's map is a
    // BTreeMap unless the preserve_order feature is enabled.
    let value = serde_json::to_value(msg)
        .map_err(|e| CodecError::SchemaViolation(e.to_string()))?;
    let mut line = value.to_string();
    line.push('\n');
    Ok(line)
}

/// Parses one newline-terminated frame, enforcing the strict schema
/// (unknown keys rejected) and all message invariants.
pub fn decode_message(frame: &str) -> Result<AgentMessage, CodecError> {
    let Some(body) = frame.strip_suffix('\n') else {
        return Err(CodecError::MalformedFrame("missing trailing newline".into()));
    };
    if body.contains('\n') {
        return Err(CodecError::MalformedFrame("frame spans multiple lines".into()));
    }
    decode_line(body)
}

/// Like [`decode_message`] but for a line with the newline already stripped
/// (e.g. by a buffered line reader).
pub fn decode_line(body: &str) -> Result<AgentMessage, CodecError> {
    let msg: AgentMessage = serde_json::from_str(body).map_err(|e| {
        if e.is_syntax() || e.is_eof() {
            CodecError::MalformedFrame(e.to_string())
        } else {
            CodecError::SchemaViolation(e.to_string())
        }
    })?;
    let violations = validate_message(&msg);
    if !violations.is_empty() {
        return Err(CodecError::ValidationFailed(violations));
    }
    Ok(msg)
}

impl AgentMessage {
    /// Shorthand for a routed conversation/plumbing frame.
    pub fn new(sender: &str, comm_id: &str, payload: MessagePayload) -> Self {
        AgentMessage {
            header: MessageHeader {
                sender: sender.to_string(),
                state: HeaderState::Communication,
                comm_id: comm_id.to_string(),
            },
            payload,
            seq: None,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn discussion(sender: &str, next: &[&str]) -> AgentMessage {
        AgentMessage::new(
            sender,
            "g0",
            MessagePayload {
                kind: MessageKind::Discussion,
                content: Some("hi".into()),
                next_speaker: next.iter().map(|s| s.to_string()).collect(),
                ..Default::default()
            },
        )
    }

    #[test]
    fn encode_emits_single_sorted_json_line() {
        let line = encode_message(&discussion("A", &["B"])).unwrap();
        assert!(line.ends_with('\n'));
        assert_eq!(line.matches('\n').count(), 1);
        // Independent check against a plain serde_json parse: exactly the
        // expected keys, no nulls, sorted order.
        let v: serde_json::Value = serde_json::from_str(line.trim_end()).unwrap();
        let obj = v.as_object().unwrap();
        assert_eq!(obj.keys().collect::<Vec<_>>(), vec!["header", "payload"]);
        let payload = obj["payload"].as_object().unwrap();
        let keys: Vec<_> = payload.keys().cloned().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(keys, vec!["content", "kind", "next_speaker"]);
        assert_eq!(payload["kind"], "discussion");
    }

    #[test]
    fn encode_is_byte_deterministic() {
        let msg = discussion("A", &["B"]);
        assert_eq!(encode_message(&msg).unwrap(), encode_message(&msg).unwrap());
    }

    #[test]
    fn roundtrip_identity() {
        let msg = discussion("A", &["B"]);
        let line = encode_message(&msg).unwrap();
        let back = decode_message(&line).unwrap();
        assert_eq!(back, msg);
        assert_eq!(encode_message(&back).unwrap(), line);
    }

    #[test]
    fn discussion_with_two_next_speakers_is_rejected() {
        let msg = discussion("A", &["B", "C"]);
        assert!(matches!(encode_message(&msg), Err(CodecError::ValidationFailed(_))));
    }

    #[test]
    fn pause_without_triggers_is_rejected() {
        let frame = concat!(
            r#"{"header":{"comm_id":"g0","sender":"A","state":"communication"},"#,
            r#""payload":{"kind":"pause_and_trigger","next_speaker":[]}}"#,
            "\n"
        );
        assert!(matches!(decode_message(frame), Err(CodecError::ValidationFailed(_))));
    }

    #[test]
    fn truncated_frame_is_malformed() {
        let line = encode_message(&discussion("A", &[])).unwrap();
        let truncated = format!("{}\n", &line[..line.len() - 3]);
        assert!(matches!(decode_message(&truncated), Err(CodecError::MalformedFrame(_))));
        assert!(matches!(
            decode_message(line.trim_end()),
            Err(CodecError::MalformedFrame(_))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let frame = concat!(
            r#"{"header":{"comm_id":"g0","sender":"A","state":"communication"},"#,
            r#""payload":{"kind":"discussion","next_speaker":[],"surprise":1}}"#,
            "\n"
        );
        assert!(matches!(decode_message(frame), Err(CodecError::SchemaViolation(_))));
    }

    #[test]
    fn conclusion_rules() {
        let mut msg = discussion("A", &[]);
        msg.payload.kind = MessageKind::Conclusion;
        msg.payload.content = Some("done".into());
        assert!(validate_message(&msg).is_empty());

        msg.payload.next_speaker = vec!["B".into()];
        assert_eq!(validate_message(&msg).len(), 1);

        msg.payload.next_speaker.clear();
        msg.payload.content = None;
        assert_eq!(validate_message(&msg).len(), 1);
    }

    #[test]
    fn task_result_requires_all_three_fields() {
        let mut msg = discussion("A", &[]);
        msg.payload.kind = MessageKind::TaskResult;
        msg.payload.content = None;
        msg.payload.task_id = Some("t1".into());
        msg.payload.task_conclusion = Some("5".into());
        // missing task_abstract
        assert_eq!(validate_message(&msg).len(), 1);
        msg.payload.task_abstract = Some("5".into());
        assert!(validate_message(&msg).is_empty());
    }
}
