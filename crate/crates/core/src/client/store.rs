//! Client-local data: the contact book, per-group info, and task records,
//! each mirrored to an append-only NDJSON event log when a data directory
//! is configured. State is a last-writer-wins fold over the logs.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fsm::{ChatMachine, TaskMode};
use crate::protocol::AgentMessage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactEntry {
    pub agent_name: String,
    pub description: String,
    /// Post-collaboration evaluation.
    pub notes: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    InProgress,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub comm_id: String,
    pub task_desc: String,
    pub task_abstract: String,
    pub assignee: String,
    pub mode: TaskMode,
    pub status: TaskStatus,
    pub conclusion: Option<String>,
    pub is_trigger: bool,
}

/// All tasks the client knows about (its own and announced ones), in
/// announce order.
#[derive(Debug, Default)]
pub struct TaskStore {
    tasks: Vec<TaskRecord>,
}

impl TaskStore {
    pub fn upsert(&mut self, record: TaskRecord) {
        match self.tasks.iter_mut().find(|t| t.task_id == record.task_id) {
            Some(existing) => *existing = record,
            None => self.tasks.push(record),
        }
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskRecord> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn get_mut(&mut self, task_id: &str) -> Option<&mut TaskRecord> {
        self.tasks.iter_mut().find(|t| t.task_id == task_id)
    }

    pub fn contains(&self, task_id: &str) -> bool {
        self.get(task_id).is_some()
    }

    pub fn mark_trigger(&mut self, task_id: &str) -> bool {
        match self.get_mut(task_id) {
            Some(t) => {
                t.is_trigger = true;
                true
            }
            None => false,
        }
    }

    pub fn complete(&mut self, task_id: &str, conclusion: &str, abstract_text: &str) -> bool {
        match self.get_mut(task_id) {
            Some(t) => {
                t.status = TaskStatus::Completed;
                t.conclusion = Some(conclusion.to_string());
                t.task_abstract = abstract_text.to_string();
                true
            }
            None => false,
        }
    }

    pub fn all(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Client-side mirror of one group chat.
#[derive(Debug)]
pub struct GroupInfo {
    pub comm_id: String,
    pub goal: String,
    pub machine: ChatMachine,
    pub transcript: Vec<AgentMessage>,
    pub conclusion: Option<String>,
}

impl GroupInfo {
    /// Seq expected on the next inbound frame.
    pub fn next_seq(&self) -> u64 {
        self.transcript.last().and_then(|m| m.seq).map(|s| s + 1).unwrap_or(0)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "log", rename_all = "snake_case")]
enum PersistEvent {
    Contact(ContactEntry),
    Task(TaskRecord),
    Group { comm_id: String, goal: String, conclusion: Option<String> },
}

/// Append-only writer for the three client logs.
pub struct ClientPersistence {
    contacts: File,
    tasks: File,
    groups: File,
}

impl ClientPersistence {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| {
            OpenOptions::new().create(true).append(true).open(dir.join(name))
        };
        Ok(ClientPersistence {
            contacts: open("contacts.ndjson")?,
            tasks: open("tasks.ndjson")?,
            groups: open("groups.ndjson")?,
        })
    }

    fn append(file: &mut File, event: &PersistEvent) {
        let mut line = serde_json::to_value(event).expect("events serialize").to_string();
        line.push('\n');
        let _ = file.write_all(line.as_bytes());
    }

    pub fn record_contact(&mut self, entry: &ContactEntry) {
        Self::append(&mut self.contacts, &PersistEvent::Contact(entry.clone()));
    }

    pub fn record_task(&mut self, record: &TaskRecord) {
        Self::append(&mut self.tasks, &PersistEvent::Task(record.clone()));
    }

    pub fn record_group(&mut self, comm_id: &str, goal: &str, conclusion: Option<&str>) {
        Self::append(
            &mut self.groups,
            &PersistEvent::Group {
                comm_id: comm_id.to_string(),
                goal: goal.to_string(),
                conclusion: conclusion.map(|s| s.to_string()),
            },
        );
    }

    /// Folds the logs back into (contacts, tasks, group conclusions).
    #[allow(clippy::type_complexity)]
    pub fn load(
        dir: &Path,
    ) -> std::io::Result<(
        BTreeMap<String, ContactEntry>,
        Vec<TaskRecord>,
        BTreeMap<String, (String, Option<String>)>,
    )> {
        let mut contacts = BTreeMap::new();
        let mut tasks: Vec<TaskRecord> = Vec::new();
        let mut groups = BTreeMap::new();
        for name in ["contacts.ndjson", "tasks.ndjson", "groups.ndjson"] {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let event: PersistEvent = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())
                })?;
                match event {
                    PersistEvent::Contact(entry) => {
                        contacts.insert(entry.agent_name.clone(), entry);
                    }
                    PersistEvent::Task(record) => {
                        match tasks.iter_mut().find(|t| t.task_id == record.task_id) {
                            Some(t) => *t = record,
                            None => tasks.push(record),
                        }
                    }
                    PersistEvent::Group { comm_id, goal, conclusion } => {
                        groups.insert(comm_id, (goal, conclusion));
                    }
                }
            }
        }
        Ok((contacts, tasks, groups))
    }
}
