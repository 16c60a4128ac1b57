//! Control-plane envelope sharing the NDJSON channel with routed agent
//! messages. A wire line is either a control frame (tagged with an `op`
//! key) or a bare [`AgentMessage`]; group transcripts only ever contain the
//! latter.

use serde::{Deserialize, Serialize};

use crate::protocol::{self, AgentMessage, CodecError};
use crate::registry::AgentProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub detail: String,
}

impl WireError {
    pub fn new(code: impl Into<String>, detail: impl Into<String>) -> Self {
        WireError { code: code.into(), detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredProfile {
    pub profile: AgentProfile,
    pub score: f64,
}

/// Request/response and session control frames. Requests carry a
/// client-chosen `rid` echoed in the matching `resp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ControlFrame {
    /// Must be the first line on every connection. A profile registers the
    /// agent if it is not yet known.
    Connect {
        agent_name: String,
        auth_token: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        profile: Option<AgentProfile>,
    },
    Connected {
        agent_name: String,
    },
    Search {
        rid: u64,
        characteristics: Vec<String>,
        limit: usize,
    },
    SetupGroup {
        rid: u64,
        team_members: Vec<String>,
        goal: String,
        team_up_depth: u32,
        #[serde(skip_serializing_if = "Option::is_none")]
        max_turns: Option<u32>,
        #[serde(skip_serializing_if = "Option::is_none")]
        parent_comm_id: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        parent_task_id: Option<String>,
    },
    FetchBacklog {
        rid: u64,
        comm_id: String,
        from_seq: u64,
    },
    Disconnect,
    Resp {
        rid: u64,
        #[serde(skip_serializing_if = "Option::is_none")]
        ok: Option<serde_json::Value>,
        #[serde(skip_serializing_if = "Option::is_none")]
        err: Option<WireError>,
    },
    /// A routed frame was refused; sent only to the offending session.
    Reject {
        code: String,
        detail: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        comm_id: Option<String>,
    },
    /// Orderly end of a run; clients exit their dispatch loops.
    Shutdown,
    /// Fatal connection-phase error.
    Error {
        code: String,
        detail: String,
    },
}

impl ControlFrame {
    pub fn encode(&self) -> String {
        let mut line = serde_json::to_value(self).expect("control frames serialize").to_string();
        line.push('\n');
        line
    }
}

/// One parsed inbound line.
#[derive(Debug, Clone, PartialEq)]
pub enum WireLine {
    Control(ControlFrame),
    Message(AgentMessage),
}

#[derive(Debug, thiserror::Error)]
pub enum WireParseError {
    #[error("unparseable control frame: {0}")]
    BadControl(String),
    #[error(transparent)]
    BadMessage(#[from] CodecError),
}

/// Classifies a line (newline already stripped): objects carrying an `op`
/// key are control frames, everything else must be a strict agent message.
pub fn parse_line(line: &str) -> Result<WireLine, WireParseError> {
    let looks_control = serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .map(|v| v.get("op").is_some())
        .unwrap_or(false);
    if looks_control {
        let frame: ControlFrame = serde_json::from_str(line)
            .map_err(|e| WireParseError::BadControl(e.to_string()))?;
        Ok(WireLine::Control(frame))
    } else {
        Ok(WireLine::Message(protocol::decode_line(line)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{MessageKind, MessagePayload};

    #[test]
    fn control_and_message_lines_are_distinguished() {
        let ctrl = ControlFrame::Connect {
            agent_name: "A".into(),
            auth_token: "tok".into(),
            profile: None,
        };
        let line = ctrl.encode();
        match parse_line(line.trim_end()).unwrap() {
            WireLine::Control(ControlFrame::Connect { agent_name, .. }) => {
                assert_eq!(agent_name, "A")
            }
            other => panic!("unexpected parse: {other:?}"),
        }

        let msg = AgentMessage::new(
            "A",
            "g0",
            MessagePayload {
                kind: MessageKind::Discussion,
                content: Some("hi".into()),
                next_speaker: vec![],
                ..Default::default()
            },
        );
        let line = crate::protocol::encode_message(&msg).unwrap();
        match parse_line(line.trim_end()).unwrap() {
            WireLine::Message(m) => assert_eq!(m, msg),
            other => panic!("unexpected parse: {other:?}"),
        }
    }

    #[test]
    fn garbage_line_is_an_error() {
        assert!(parse_line("{not json").is_err());
        assert!(parse_line(r#"{"op":"no_such_op"}"#).is_err());
    }
}
