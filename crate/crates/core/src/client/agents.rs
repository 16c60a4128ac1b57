//! The integrated-agent bridge: the two-call contract third-party agents
//! implement (`run` returns a handle immediately, `read_memory` exposes the
//! execution history), a sync adapter for plain request/response agents, and
//! the deterministic dummy agents used by scenarios.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;
use uuid::Uuid;

pub type ExecId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryKind {
    Progress,
    Completion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryRecord {
    pub kind: MemoryKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("agent failed: {0}")]
    Failed(String),
    #[error("unknown execution id {0}")]
    UnknownExecution(String),
}

/// Contract for the capability behind a client. `run` must return
/// immediately with a fresh execution id; completion is observed when the
/// last memory record is a completion record carrying the result text.
pub trait IntegratedAgent: Send + Sync {
    fn run(&self, task_desc: &str) -> Result<ExecId, AgentError>;
    fn read_memory(&self, exec_id: &ExecId) -> Result<Vec<MemoryRecord>, AgentError>;
}

/// Wraps a plain `task_desc -> result` function as an integrated agent by
/// returning a single-record memory.
pub struct SyncAdapter<F> {
    inner: F,
    memory: Mutex<BTreeMap<ExecId, Vec<MemoryRecord>>>,
}

impl<F> SyncAdapter<F>
where
    F: Fn(&str) -> Result<String, String> + Send + Sync,
{
    pub fn new(inner: F) -> Self {
        SyncAdapter { inner, memory: Mutex::new(BTreeMap::new()) }
    }
}

impl<F> IntegratedAgent for SyncAdapter<F>
where
    F: Fn(&str) -> Result<String, String> + Send + Sync,
{
    fn run(&self, task_desc: &str) -> Result<ExecId, AgentError> {
        let text = (self.inner)(task_desc).map_err(AgentError::Failed)?;
        let exec_id = Uuid::new_v4().to_string();
        self.memory
            .lock()
            .unwrap()
            .insert(exec_id.clone(), vec![MemoryRecord { kind: MemoryKind::Completion, text }]);
        Ok(exec_id)
    }

    fn read_memory(&self, exec_id: &ExecId) -> Result<Vec<MemoryRecord>, AgentError> {
        self.memory
            .lock()
            .unwrap()
            .get(exec_id)
            .cloned()
            .ok_or_else(|| AgentError::UnknownExecution(exec_id.clone()))
    }
}

/// Returns the task description verbatim.
pub fn echo_agent() -> Box<dyn IntegratedAgent> {
    Box::new(SyncAdapter::new(|desc: &str| Ok(desc.to_string())))
}

/// Evaluates integer `+ - * /` expressions with standard precedence.
pub fn arith_agent() -> Box<dyn IntegratedAgent> {
    Box::new(SyncAdapter::new(|desc: &str| {
        eval_arith(desc).map(|n| n.to_string())
    }))
}

/// Always errors; scenarios use it to exercise the failure path.
pub fn fail_agent() -> Box<dyn IntegratedAgent> {
    Box::new(SyncAdapter::new(|_: &str| Err("injected failure".to_string())))
}

/// Completes after a fixed delay; used to open real trigger windows.
pub struct DelayedEchoAgent {
    delay: Duration,
    started: Mutex<BTreeMap<ExecId, (Instant, String)>>,
}

impl DelayedEchoAgent {
    pub fn new(delay: Duration) -> Self {
        DelayedEchoAgent { delay, started: Mutex::new(BTreeMap::new()) }
    }
}

impl IntegratedAgent for DelayedEchoAgent {
    fn run(&self, task_desc: &str) -> Result<ExecId, AgentError> {
        let exec_id = Uuid::new_v4().to_string();
        self.started
            .lock()
            .unwrap()
            .insert(exec_id.clone(), (Instant::now(), task_desc.to_string()));
        Ok(exec_id)
    }

    fn read_memory(&self, exec_id: &ExecId) -> Result<Vec<MemoryRecord>, AgentError> {
        let started = self.started.lock().unwrap();
        let (at, desc) = started
            .get(exec_id)
            .ok_or_else(|| AgentError::UnknownExecution(exec_id.clone()))?;
        if at.elapsed() >= self.delay {
            Ok(vec![MemoryRecord { kind: MemoryKind::Completion, text: desc.clone() }])
        } else {
            Ok(vec![MemoryRecord { kind: MemoryKind::Progress, text: "working".into() }])
        }
    }
}

/// Never completes; exercises the timeout path.
pub struct HangAgent;

impl IntegratedAgent for HangAgent {
    fn run(&self, _task_desc: &str) -> Result<ExecId, AgentError> {
        Ok(Uuid::new_v4().to_string())
    }

    fn read_memory(&self, _exec_id: &ExecId) -> Result<Vec<MemoryRecord>, AgentError> {
        Ok(vec![MemoryRecord { kind: MemoryKind::Progress, text: "working".into() }])
    }
}

/// Recursive-descent evaluation of `+ - * /` over i64 with standard
/// precedence, parentheses, and unary minus. Division truncates; dividing
/// by zero is an error.
pub fn eval_arith(input: &str) -> Result<i64, String> {
    let tokens = lex(input)?;
    let mut pos = 0;
    let value = parse_expr(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(format!("unexpected trailing token at {pos}"));
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Num(i64),
    Plus,
    Minus,
    Star,
    Slash,
    Open,
    Close,
}

fn lex(input: &str) -> Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let mut chars = input.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ' ' | '\t' => {
                chars.next();
            }
            '0'..='9' => {
                let mut n: i64 = 0;
                while let Some(&d) = chars.peek() {
                    if let Some(v) = d.to_digit(10) {
                        n = n
                            .checked_mul(10)
                            .and_then(|n| n.checked_add(v as i64))
                            .ok_or("integer overflow")?;
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push(Tok::Num(n));
            }
            '+' => {
                chars.next();
                out.push(Tok::Plus);
            }
            '-' | '−' => {
                chars.next();
                out.push(Tok::Minus);
            }
            '*' | '×' => {
                chars.next();
                out.push(Tok::Star);
            }
            '/' | '÷' => {
                chars.next();
                out.push(Tok::Slash);
            }
            '(' => {
                chars.next();
                out.push(Tok::Open);
            }
            ')' => {
                chars.next();
                out.push(Tok::Close);
            }
            other => return Err(format!("unexpected character {other:?}")),
        }
    }
    if out.is_empty() {
        return Err("empty expression".into());
    }
    Ok(out)
}

fn parse_expr(tokens: &[Tok], pos: &mut usize) -> Result<i64, String> {
    let mut acc = parse_term(tokens, pos)?;
    while let Some(op) = tokens.get(*pos) {
        match op {
            Tok::Plus => {
                *pos += 1;
                acc = acc.checked_add(parse_term(tokens, pos)?).ok_or("integer overflow")?;
            }
            Tok::Minus => {
                *pos += 1;
                acc = acc.checked_sub(parse_term(tokens, pos)?).ok_or("integer overflow")?;
            }
            _ => break,
        }
    }
    Ok(acc)
}

fn parse_term(tokens: &[Tok], pos: &mut usize) -> Result<i64, String> {
    let mut acc = parse_atom(tokens, pos)?;
    while let Some(op) = tokens.get(*pos) {
        match op {
            Tok::Star => {
                *pos += 1;
                acc = acc.checked_mul(parse_atom(tokens, pos)?).ok_or("integer overflow")?;
            }
            Tok::Slash => {
                *pos += 1;
                let rhs = parse_atom(tokens, pos)?;
                if rhs == 0 {
                    return Err("division by zero".into());
                }
                acc /= rhs;
            }
            _ => break,
        }
    }
    Ok(acc)
}

fn parse_atom(tokens: &[Tok], pos: &mut usize) -> Result<i64, String> {
    match tokens.get(*pos) {
        Some(Tok::Num(n)) => {
            *pos += 1;
            Ok(*n)
        }
        Some(Tok::Minus) => {
            *pos += 1;
            Ok(-parse_atom(tokens, pos)?)
        }
        Some(Tok::Open) => {
            *pos += 1;
            let v = parse_expr(tokens, pos)?;
            match tokens.get(*pos) {
                Some(Tok::Close) => {
                    *pos += 1;
                    Ok(v)
                }
                _ => Err("missing closing parenthesis".into()),
            }
        }
        other => Err(format!("expected a value, got {other:?}")),
    }
}
