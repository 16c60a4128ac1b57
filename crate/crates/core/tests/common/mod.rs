//! Shared test oracles: an independent re-interpretation of the group-chat
//! rules (used to check `ChatMachine::advance` by brute force), plus random
//! generators for legal frame sequences, valid messages, and team trees.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::prelude::*;
use rand::seq::IndexedRandom;

use agenthub::protocol::{
    AgentMessage, HeaderState, MessageHeader, MessageKind, MessagePayload, NOTICE_GROUP_CREATED,
    NOTICE_TASK_STARTED, SERVER_SENDER,
};

/// What the oracle believes after a transcript prefix. Field-for-field
/// comparable with the machine's public accessors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleState {
    pub state: String,
    pub turn_count: u32,
    pub expected: BTreeSet<String>,
    pub open_sync: BTreeSet<String>,
    pub open_triggers: BTreeSet<String>,
    pub quiescent: bool,
}

struct OracleTask {
    assignee: String,
    sync: bool,
    done: bool,
}

/// Re-derives the conversation state from the whole prefix. Deliberately a
/// separate, straight-line interpretation of the rules: discussion starts
/// the chat, one conversation frame is one turn, sync assignments and
/// pauses gate the floor until the covering results arrive, the budget
/// forces a conclusion, conclusion is terminal.
pub fn oracle_derive(
    members: &[String],
    initiator: &str,
    max_turns: u32,
    frames: &[AgentMessage],
) -> Result<OracleState, String> {
    let mut state = "discussion".to_string();
    let mut turn: u32 = 0;
    let mut expected: BTreeSet<String> = [initiator.to_string()].into();
    let mut tasks: BTreeMap<String, OracleTask> = BTreeMap::new();
    let mut open_sync: BTreeSet<String> = BTreeSet::new();
    let mut open_triggers: BTreeSet<String> = BTreeSet::new();
    let mut holder: Option<String> = None; // who resumes after a gate
    let mut forced = false;

    for frame in frames {
        let sender = frame.header.sender.clone();
        let kind = frame.payload.kind;
        match kind {
            MessageKind::SystemNotice => {
                if sender != SERVER_SENDER && !members.contains(&sender) {
                    return Err(format!("notice from non-member {sender}"));
                }
                if let Some(rest) = frame
                    .payload
                    .content
                    .as_deref()
                    .and_then(|c| c.strip_prefix(NOTICE_TASK_STARTED))
                    .and_then(|c| c.strip_prefix(':'))
                {
                    if let Some(id) = &frame.payload.task_id {
                        tasks.entry(id.clone()).or_insert(OracleTask {
                            assignee: sender.clone(),
                            sync: rest == "sync",
                            done: false,
                        });
                    }
                }
            }
            MessageKind::TaskResult => {
                if !members.contains(&sender) {
                    return Err(format!("result from non-member {sender}"));
                }
                let id = frame.payload.task_id.clone().ok_or("result without id")?;
                match tasks.get_mut(&id) {
                    Some(t) if t.done => return Err(format!("duplicate result {id}")),
                    Some(t) => {
                        t.done = true;
                        if t.sync {
                            open_sync.remove(&t.assignee);
                        }
                    }
                    None => {
                        let sync = open_sync.remove(&sender);
                        tasks.insert(id.clone(), OracleTask { assignee: sender.clone(), sync, done: true });
                    }
                }
                open_triggers.remove(&id);
                let released = (state == "sync_assignment" && open_sync.is_empty())
                    || (state == "pause_trigger" && open_triggers.is_empty());
                if released {
                    state = "discussion".into();
                    let who = if forced {
                        initiator.to_string()
                    } else {
                        holder.clone().unwrap_or_else(|| initiator.to_string())
                    };
                    expected = [who].into();
                }
            }
            conversation => {
                if state == "conclusion" {
                    return Err("conversation after conclusion".into());
                }
                if !members.contains(&sender) {
                    return Err(format!("conversation from non-member {sender}"));
                }
                if !expected.contains(&sender) {
                    return Err(format!("{sender} spoke out of turn"));
                }
                if turn >= max_turns && conversation != MessageKind::Conclusion {
                    return Err("over the turn budget".into());
                }
                let next: BTreeSet<String> =
                    frame.payload.next_speaker.iter().cloned().collect();
                match conversation {
                    MessageKind::Discussion => {
                        if state != "discussion" {
                            return Err(format!("discussion in {state}"));
                        }
                        turn += 1;
                        expected = next;
                    }
                    MessageKind::AsyncTaskAssignment => {
                        if state != "discussion" {
                            return Err(format!("async assignment in {state}"));
                        }
                        turn += 1;
                        expected = next;
                    }
                    MessageKind::SyncTaskAssignment => {
                        if state != "discussion" {
                            return Err(format!("sync assignment in {state}"));
                        }
                        turn += 1;
                        state = "sync_assignment".into();
                        open_sync.extend(frame.payload.next_speaker.iter().cloned());
                        holder = Some(sender.clone());
                        expected = next;
                    }
                    MessageKind::PauseAndTrigger => {
                        if state != "discussion" {
                            return Err(format!("pause in {state}"));
                        }
                        let ids = frame.payload.triggers.clone().unwrap_or_default();
                        for id in &ids {
                            if !tasks.contains_key(id) {
                                return Err(format!("unknown trigger {id}"));
                            }
                        }
                        turn += 1;
                        let waiting: BTreeSet<String> = ids
                            .into_iter()
                            .filter(|id| !tasks[id].done)
                            .collect();
                        if waiting.is_empty() {
                            expected = [sender.clone()].into();
                        } else {
                            state = "pause_trigger".into();
                            open_triggers = waiting;
                            holder = Some(sender.clone());
                            expected = BTreeSet::new();
                        }
                    }
                    MessageKind::Conclusion => {
                        turn += 1;
                        state = "conclusion".into();
                        expected = BTreeSet::new();
                    }
                    _ => unreachable!(),
                }
                if turn >= max_turns && state == "discussion" {
                    forced = true;
                    expected = [initiator.to_string()].into();
                }
                if turn >= max_turns && (state == "sync_assignment" || state == "pause_trigger") {
                    forced = true;
                }
            }
        }
    }
    let quiescent =
        state == "conclusion" && open_sync.is_empty() && open_triggers.is_empty()
            && tasks.values().all(|t| t.done);
    Ok(OracleState { state, turn_count: turn, expected, open_sync, open_triggers, quiescent })
}

pub fn msg(sender: &str, comm_id: &str, payload: MessagePayload) -> AgentMessage {
    AgentMessage {
        header: MessageHeader {
            sender: sender.into(),
            state: HeaderState::Communication,
            comm_id: comm_id.into(),
        },
        payload,
        seq: None,
    }
}

pub fn setup_notice(
    comm_id: &str,
    members: &[String],
    initiator: &str,
    max_turns: u32,
) -> AgentMessage {
    let mut frame = msg(
        SERVER_SENDER,
        comm_id,
        MessagePayload {
            kind: MessageKind::SystemNotice,
            content: Some(NOTICE_GROUP_CREATED.into()),
            goal: Some("generated".into()),
            team_members: Some(members.to_vec()),
            team_up_depth: Some(0),
            max_turns: Some(max_turns),
            next_speaker: vec![initiator.to_string()],
            ..Default::default()
        },
    );
    frame.seq = Some(0);
    frame
}

/// One legal continuation of a prefix, sampled from the oracle's view.
/// Returns `None` when nothing further is legal (terminal and drained).
pub fn random_legal_step(
    rng: &mut impl Rng,
    members: &[String],
    max_turns: u32,
    state: &OracleState,
    tasks_open: &[(String, String, bool)], // (task_id, assignee, sync)
    comm_id: &str,
    fresh_task_counter: &mut u32,
) -> Option<AgentMessage> {
    let mut choices: Vec<u8> = Vec::new();
    let conversational = state.state == "discussion";
    if conversational && !state.expected.is_empty() {
        choices.push(0); // conversation move
    }
    choices.push(1); // announce a fresh task
    if !tasks_open.is_empty() {
        choices.push(2); // complete an open task
        choices.push(2);
    }
    match choices.choose(rng)? {
        0 => {
            let speakers: Vec<&String> = state.expected.iter().collect();
            let sender = speakers.choose(rng)?.as_str();
            let mut kinds = if state.turn_count >= max_turns {
                vec![MessageKind::Conclusion]
            } else {
                vec![
                    MessageKind::Discussion,
                    MessageKind::SyncTaskAssignment,
                    MessageKind::AsyncTaskAssignment,
                    MessageKind::Conclusion,
                ]
            };
            let open_async: Vec<&(String, String, bool)> =
                tasks_open.iter().filter(|(_, _, sync)| !sync).collect();
            if !open_async.is_empty() && state.turn_count < max_turns {
                kinds.push(MessageKind::PauseAndTrigger);
            }
            let kind = *kinds.choose(rng)?;
            let payload = match kind {
                MessageKind::Discussion => MessagePayload {
                    kind,
                    content: Some("talk".into()),
                    next_speaker: vec![members.choose(rng)?.clone()],
                    ..Default::default()
                },
                MessageKind::SyncTaskAssignment | MessageKind::AsyncTaskAssignment => {
                    let count = rng.random_range(1..=members.len().min(2));
                    let mut assignees = members.to_vec();
                    assignees.shuffle(rng);
                    assignees.truncate(count);
                    MessagePayload {
                        kind,
                        content: Some("do work".into()),
                        next_speaker: assignees,
                        ..Default::default()
                    }
                }
                MessageKind::PauseAndTrigger => {
                    let count = rng.random_range(1..=open_async.len());
                    let mut picked: Vec<String> =
                        open_async.iter().map(|(id, _, _)| id.clone()).collect();
                    picked.shuffle(rng);
                    picked.truncate(count);
                    MessagePayload {
                        kind,
                        content: Some("waiting".into()),
                        next_speaker: vec![],
                        triggers: Some(picked),
                        ..Default::default()
                    }
                }
                MessageKind::Conclusion => MessagePayload {
                    kind,
                    content: Some("the end".into()),
                    next_speaker: vec![],
                    ..Default::default()
                },
                _ => unreachable!(),
            };
            Some(msg(sender, comm_id, payload))
        }
        1 => {
            let sender = members.choose(rng)?.clone();
            let sync = state.state == "sync_assignment" && state.open_sync.contains(&sender)
                || (state.state == "discussion" && rng.random_bool(0.3));
            *fresh_task_counter += 1;
            let id = format!("task-{fresh_task_counter:03}");
            Some(msg(
                &sender,
                comm_id,
                MessagePayload {
                    kind: MessageKind::SystemNotice,
                    content: Some(format!(
                        "{}:{}",
                        NOTICE_TASK_STARTED,
                        if sync { "sync" } else { "async" }
                    )),
                    task_id: Some(id),
                    task_desc: Some("generated work".into()),
                    ..Default::default()
                },
            ))
        }
        _ => {
            let (id, assignee, _) = tasks_open.choose(rng)?;
            Some(msg(
                assignee,
                comm_id,
                MessagePayload {
                    kind: MessageKind::TaskResult,
                    task_id: Some(id.clone()),
                    task_conclusion: Some("done".into()),
                    task_abstract: Some("done".into()),
                    ..Default::default()
                },
            ))
        }
    }
}

/// Random valid message covering every kind and optional-field shape.
pub fn random_valid_message(rng: &mut impl Rng) -> AgentMessage {
    fn word(rng: &mut impl Rng) -> String {
        let len = rng.random_range(1..=8);
        (0..len)
            .map(|_| char::from(rng.random_range(b'a'..=b'z')))
            .collect()
    }
    let kind = *MessageKind::ALL.choose(rng).unwrap();
    let mut payload = MessagePayload { kind, ..Default::default() };
    payload.content = Some(word(rng));
    match kind {
        MessageKind::Discussion => {
            if rng.random_bool(0.7) {
                payload.next_speaker = vec![word(rng)];
            }
        }
        MessageKind::SyncTaskAssignment | MessageKind::AsyncTaskAssignment => {
            let n = rng.random_range(1..=3);
            payload.next_speaker = (0..n).map(|_| word(rng)).collect();
        }
        MessageKind::PauseAndTrigger => {
            let n = rng.random_range(1..=3);
            payload.triggers = Some((0..n).map(|_| word(rng)).collect());
        }
        MessageKind::Conclusion => {
            payload.next_speaker = vec![];
        }
        MessageKind::TaskResult => {
            payload.task_id = Some(word(rng));
            payload.task_conclusion = Some(word(rng));
            payload.task_abstract = Some(word(rng));
            if rng.random_bool(0.5) {
                payload.content = None;
            }
        }
        MessageKind::SystemNotice => {
            if rng.random_bool(0.3) {
                payload.task_id = Some(word(rng));
                payload.task_desc = Some(word(rng));
            }
        }
    }
    if rng.random_bool(0.3) {
        payload.goal = Some(word(rng));
    }
    if rng.random_bool(0.2) {
        payload.team_members = Some((0..rng.random_range(1..4)).map(|_| word(rng)).collect());
        payload.team_up_depth = Some(rng.random_range(0..4));
        payload.max_turns = Some(rng.random_range(1..50));
    }
    if rng.random_bool(0.3) {
        payload.task_desc = Some(word(rng));
    }
    let mut frame = msg(&word(rng), &word(rng), payload);
    if rng.random_bool(0.5) {
        frame.seq = Some(rng.random_range(0..10_000));
    }
    frame
}

/// Mutates a valid frame line into a guaranteed-invalid one.
pub fn mutate_frame(rng: &mut impl Rng, line: &str) -> String {
    let body = line.trim_end();
    match rng.random_range(0..8) {
        // Truncation: broken JSON.
        0 => format!("{}\n", &body[..rng.random_range(1..body.len().max(2) - 1)]),
        // Unknown top-level key: strict schema rejects.
        1 => format!("{},\"surprise\":1}}\n", &body[..body.len() - 1]),
        // Missing newline terminator.
        2 => body.to_string(),
        // Two speakers on a discussion frame (or force the kind first).
        3 => {
            let mut v: serde_json::Value = serde_json::from_str(body).unwrap();
            v["payload"]["kind"] = "discussion".into();
            v["payload"]["next_speaker"] = serde_json::json!(["a", "b"]);
            format!("{v}\n")
        }
        // Pause without triggers.
        4 => {
            let mut v: serde_json::Value = serde_json::from_str(body).unwrap();
            v["payload"]["kind"] = "pause_and_trigger".into();
            v["payload"].as_object_mut().unwrap().remove("triggers");
            format!("{v}\n")
        }
        // Empty sender.
        5 => {
            let mut v: serde_json::Value = serde_json::from_str(body).unwrap();
            v["header"]["sender"] = "".into();
            format!("{v}\n")
        }
        // task_result missing its abstract.
        6 => {
            let mut v: serde_json::Value = serde_json::from_str(body).unwrap();
            v["payload"]["kind"] = "task_result".into();
            v["payload"]["task_id"] = "t".into();
            v["payload"]["task_conclusion"] = "c".into();
            v["payload"].as_object_mut().unwrap().remove("task_abstract");
            format!("{v}\n")
        }
        // Wrong type for a structured field.
        _ => {
            let mut v: serde_json::Value = serde_json::from_str(body).unwrap();
            v["payload"]["next_speaker"] = 42.into();
            format!("{v}\n")
        }
    }
}

/// Random team tree in which every non-root node shares exactly its
/// initiator with the ancestor set and contributes >= 1 fresh members.
pub fn random_shared_initiator_tree(rng: &mut impl Rng, max_children: usize) -> agenthub::teaming::TeamTree {
    use agenthub::teaming::TeamTree;
    let mut counter = 0usize;
    fn fresh(counter: &mut usize, n: usize) -> Vec<String> {
        let out = (*counter..*counter + n).map(|i| format!("m{i:03}")).collect();
        *counter += n;
        out
    }
    fn build(
        rng: &mut impl Rng,
        counter: &mut usize,
        depth: u32,
        max_children: usize,
        id: &mut u32,
    ) -> TeamTree {
        let members = fresh(counter, rng.random_range(1..=4));
        *id += 1;
        let mut node = TeamTree {
            comm_id: format!("g{id:03}"),
            members,
            depth,
            children: Vec::new(),
        };
        if depth < 3 {
            let n_children = rng.random_range(0..=max_children);
            for _ in 0..n_children {
                let spawner = node.members.choose(rng).unwrap().clone();
                let mut child = build(rng, counter, depth + 1, max_children.saturating_sub(1), id);
                child.members.insert(0, spawner);
                node.children.push(child);
            }
        }
        node
    }
    let mut id = 0;
    build(rng, &mut counter, 0, max_children, &mut id)
}

/// Fully arbitrary tree (members may repeat across nodes); used for the
/// reported-not-asserted comparison.
pub fn random_arbitrary_tree(rng: &mut impl Rng) -> agenthub::teaming::TeamTree {
    use agenthub::teaming::TeamTree;
    let pool: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
    fn build(rng: &mut impl Rng, pool: &[String], depth: u32, id: &mut u32) -> TeamTree {
        let mut members = pool.to_vec();
        members.shuffle(rng);
        members.truncate(rng.random_range(1..=pool.len().min(5)));
        *id += 1;
        let mut node = TeamTree {
            comm_id: format!("a{id:03}"),
            members,
            depth,
            children: Vec::new(),
        };
        if depth < 2 {
            for _ in 0..rng.random_range(0..=2) {
                node.children.push(build(rng, pool, depth + 1, id));
            }
        }
        node
    }
    let mut id = 0;
    build(rng, &pool, 0, &mut id)
}

/// Brute-force pair count over one group.
pub fn brute_force_pairs(n: usize) -> u64 {
    let mut count = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let _ = (i, j);
            count += 1;
        }
    }
    count
}
