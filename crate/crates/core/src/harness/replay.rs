//! Transcript replay: folds the conversation machine over a group's NDJSON
//! log and reports every violation with the offending seq. A clean run
//! replays to an empty list.

use std::path::Path;

use thiserror::Error;

use crate::fsm::{ChatMachine, FsmError};
use crate::protocol::{decode_line, AgentMessage};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayViolation {
    pub seq: Option<u64>,
    pub code: String,
    pub detail: String,
}

impl std::fmt::Display for ReplayViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.seq {
            Some(seq) => write!(f, "[{}@seq {}] {}", self.code, seq, self.detail),
            None => write!(f, "[{}] {}", self.code, self.detail),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("malformed log: {0}")]
    MalformedLog(String),
    #[error("log I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn violation_code(e: &FsmError) -> &'static str {
    match e {
        FsmError::GroupConcluded => "GroupConcluded",
        FsmError::NotMember(_) => "NotMember",
        FsmError::NotYourTurn(_) => "NotYourTurn",
        FsmError::TurnBudgetExhausted => "TraceBound",
        FsmError::IllegalTransition { .. } => "IllegalTransition",
        FsmError::UnknownTrigger(_) => "UnknownTrigger",
        FsmError::DuplicateTaskResult(_) => "DuplicateResult",
    }
}

/// Replays already-decoded frames. The first frame must be the group-setup
/// notice; the machine is folded over the rest.
pub fn replay_frames(frames: &[AgentMessage]) -> Result<Vec<ReplayViolation>, ReplayError> {
    let Some(first) = frames.first() else {
        return Err(ReplayError::MalformedLog("empty transcript".into()));
    };
    let Some(mut machine) = ChatMachine::from_setup_notice(first) else {
        return Err(ReplayError::MalformedLog(
            "transcript does not open with a group-setup notice".into(),
        ));
    };
    let mut violations = Vec::new();
    let mut expected_seq = first.seq.map(|s| s + 1);
    for frame in &frames[1..] {
        if let (Some(expected), Some(got)) = (expected_seq, frame.seq) {
            if got != expected {
                violations.push(ReplayViolation {
                    seq: frame.seq,
                    code: "SeqGap".into(),
                    detail: format!("expected seq {expected}, got {got}"),
                });
            }
            expected_seq = Some(got + 1);
        }
        if let Err(e) = machine.advance(frame) {
            violations.push(ReplayViolation {
                seq: frame.seq,
                code: violation_code(&e).into(),
                detail: e.to_string(),
            });
        }
    }
    Ok(violations)
}

/// Replays one NDJSON log file.
pub fn replay_transcript(path: &Path) -> Result<Vec<ReplayViolation>, ReplayError> {
    let text = std::fs::read_to_string(path)?;
    let mut frames = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let frame = decode_line(line)
            .map_err(|e| ReplayError::MalformedLog(format!("line {}: {e}", idx + 1)))?;
        frames.push(frame);
    }
    replay_frames(&frames)
}
