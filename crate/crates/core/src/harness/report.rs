//! Run reports: per-group transcripts, team-tree metrics, UUID
//! normalization for golden comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::protocol::{encode_message, AgentMessage, MessageKind, NOTICE_TASK_STARTED};
use crate::server::GroupSnapshot;
use crate::teaming::{edges_full, edges_nested, TeamTree};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupReport {
    pub comm_id: String,
    pub goal: String,
    pub members: Vec<String>,
    pub team_up_depth: u32,
    pub conclusion: Option<String>,
    /// Encoded frames, one canonical JSON line each (no trailing newline).
    pub transcript: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub conversation_turns: u64,
    pub total_frames: u64,
    pub frames_per_kind: BTreeMap<String, u64>,
    pub edges_full_flat: u64,
    pub edges_nested: u64,
    pub sync_tasks: u64,
    pub async_tasks: u64,
    pub triggers_fired: u64,
}

impl Metrics {
    pub fn get(&self, name: &str) -> Option<u64> {
        match name {
            "conversation_turns" => Some(self.conversation_turns),
            "total_frames" => Some(self.total_frames),
            "edges_full_flat" => Some(self.edges_full_flat),
            "edges_nested" => Some(self.edges_nested),
            "sync_tasks" => Some(self.sync_tasks),
            "async_tasks" => Some(self.async_tasks),
            "triggers_fired" => Some(self.triggers_fired),
            other => self.frames_per_kind.get(other).copied(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pass,
    ExpectationFailed,
    Deadline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Outcome {
    pub conclusion: Option<String>,
    pub violations: Vec<String>,
    pub expectation_failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub status: RunStatus,
    pub groups: Vec<GroupReport>,
    pub team_trees: Vec<TeamTree>,
    pub metrics: Metrics,
    pub outcome: Outcome,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.status == RunStatus::Pass
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }
}

/// Computes run metrics from group snapshots (creation order) and the team
/// trees rooted in them.
pub fn compute_metrics(groups: &[GroupSnapshot], trees: &[TeamTree]) -> Metrics {
    let mut metrics = Metrics::default();
    let mut union: BTreeSet<String> = BTreeSet::new();
    for tree in trees {
        metrics.edges_nested += edges_nested(tree);
        union.extend(tree.member_union());
    }
    metrics.edges_full_flat = edges_full(union.len() as u64);

    for group in groups {
        let mut pause_covered: BTreeSet<String> = BTreeSet::new();
        for frame in &group.transcript {
            metrics.total_frames += 1;
            let kind = frame.kind();
            *metrics.frames_per_kind.entry(kind.as_str().to_string()).or_insert(0) += 1;
            if kind.is_conversation() {
                metrics.conversation_turns += 1;
            }
            match kind {
                MessageKind::SystemNotice => {
                    if let Some(rest) = frame
                        .payload
                        .content
                        .as_deref()
                        .and_then(|c| c.strip_prefix(NOTICE_TASK_STARTED))
                        .and_then(|c| c.strip_prefix(':'))
                    {
                        match rest {
                            "sync" => metrics.sync_tasks += 1,
                            "async" => metrics.async_tasks += 1,
                            _ => {}
                        }
                    }
                }
                MessageKind::PauseAndTrigger => {
                    for id in frame.payload.triggers.as_deref().unwrap_or_default() {
                        pause_covered.insert(id.clone());
                    }
                }
                MessageKind::TaskResult => {
                    if let Some(id) = frame.payload.task_id.as_deref() {
                        if pause_covered.remove(id) {
                            metrics.triggers_fired += 1;
                        }
                    }
                }
                _ => {}
            }
        }
    }
    metrics
}

pub fn encode_transcript(frames: &[AgentMessage]) -> Vec<String> {
    frames
        .iter()
        .map(|f| {
            encode_message(f)
                .expect("routed frames are valid")
                .trim_end()
                .to_string()
        })
        .collect()
}

/// Renames every UUID-shaped token to `uuid-NNNN` in first-seen order, so
/// transcripts with random ids compare byte-for-byte across runs.
pub struct UuidNormalizer {
    pattern: regex::Regex,
    seen: BTreeMap<String, String>,
}

impl Default for UuidNormalizer {
    fn default() -> Self {
        Self::new()
    }
}

impl UuidNormalizer {
    pub fn new() -> Self {
        UuidNormalizer {
            pattern: regex::Regex::new(
                r"[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}",
            )
            .expect("static pattern compiles"),
            seen: BTreeMap::new(),
        }
    }

    pub fn normalize(&mut self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for m in self.pattern.find_iter(text) {
            out.push_str(&text[last..m.start()]);
            let next_index = self.seen.len();
            let replacement = self
                .seen
                .entry(m.as_str().to_string())
                .or_insert_with(|| format!("uuid-{next_index:04}"));
            out.push_str(replacement);
            last = m.end();
        }
        out.push_str(&text[last..]);
        out
    }
}

/// Normalized per-group transcripts in group-creation order; the list is
/// what golden comparisons operate on.
pub fn normalized_transcripts(report: &RunReport) -> Vec<Vec<String>> {
    let mut normalizer = UuidNormalizer::new();
    report
        .groups
        .iter()
        .map(|g| g.transcript.iter().map(|line| normalizer.normalize(line)).collect())
        .collect()
}

/// Compares (or bootstraps) golden transcript files: one
/// `group-NN.ndjson` per group under `dir/<scenario>/`. Returns
/// expectation-failure strings.
pub fn check_golden(report: &RunReport, dir: &Path) -> std::io::Result<Vec<String>> {
    let scenario_dir = dir.join(&report.scenario);
    let normalized = normalized_transcripts(report);
    let mut failures = Vec::new();
    std::fs::create_dir_all(&scenario_dir)?;
    for (idx, lines) in normalized.iter().enumerate() {
        let path = scenario_dir.join(format!("group-{idx:02}.ndjson"));
        let mut text = lines.join("\n");
        text.push('\n');
        if path.exists() {
            let golden = std::fs::read_to_string(&path)?;
            if golden != text {
                failures.push(format!(
                    "transcript for group {idx} differs from golden {}",
                    path.display()
                ));
            }
        } else {
            std::fs::write(&path, text)?;
        }
    }
    Ok(failures)
}
