//! Team formation: the capped tool-call loop, nested sub-group bookkeeping,
//! and the communication-complexity metrics over the resulting team tree.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Policy, PolicyError, TeamContext};
use crate::registry::AgentProfile;

/// Maximum number of tool calls before a launch is forced.
pub const TOOL_CALL_CAP: u32 = 10;
/// Forced launches keep at most this many of the highest-scoring discovered
/// agents.
pub const FORCED_LAUNCH_KEEP: usize = 5;

/// One step of the team-formation loop: either search the registry or
/// launch the group chat. Launching with no members means solo execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCall {
    Search { characteristics: Vec<String> },
    Launch { team_members: Option<Vec<String>> },
}

/// The nested group structure rooted at the initial group chat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamTree {
    pub comm_id: String,
    pub members: Vec<String>,
    pub depth: u32,
    pub children: Vec<TeamTree>,
}

impl TeamTree {
    pub fn leaf(comm_id: impl Into<String>, members: Vec<String>, depth: u32) -> Self {
        TeamTree { comm_id: comm_id.into(), members, depth, children: Vec::new() }
    }

    /// All nodes, root first, children in insertion order.
    pub fn nodes(&self) -> Vec<&TeamTree> {
        let mut out = vec![self];
        for child in &self.children {
            out.extend(child.nodes());
        }
        out
    }

    /// Distinct members across the whole tree.
    pub fn member_union(&self) -> BTreeSet<String> {
        self.nodes()
            .into_iter()
            .flat_map(|n| n.members.iter().cloned())
            .collect()
    }

    /// comm_id uniqueness and depth increments along every edge.
    pub fn validate(&self) -> Result<(), TeamTreeError> {
        let mut seen = BTreeSet::new();
        for node in self.nodes() {
            if !seen.insert(node.comm_id.clone()) {
                return Err(TeamTreeError::DuplicateCommId(node.comm_id.clone()));
            }
            for child in &node.children {
                if child.depth != node.depth + 1 {
                    return Err(TeamTreeError::BadDepth {
                        comm_id: child.comm_id.clone(),
                        expected: node.depth + 1,
                        actual: child.depth,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TeamTreeError {
    #[error("duplicate comm_id {0} in team tree")]
    DuplicateCommId(String),
    #[error("group {comm_id} has depth {actual}, expected {expected}")]
    BadDepth { comm_id: String, expected: u32, actual: u32 },
}

/// Edges of a fully connected group of `n` members: n(n-1)/2.
pub fn edges_full(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Sum of `edges_full` over every group in the tree, the root included.
pub fn edges_nested(tree: &TeamTree) -> u64 {
    tree.nodes()
        .into_iter()
        .map(|n| edges_full(n.members.len() as u64))
        .sum()
}

#[derive(Debug, Error)]
pub enum TeamFormationError {
    #[error("policy error during team formation: {0}")]
    Policy(#[from] PolicyError),
    #[error("launch rejected: {0}")]
    LaunchRejected(String),
    #[error("server unreachable: {0}")]
    ServerUnreachable(String),
}

/// What `form_team` needs from the surrounding runtime: the two server
/// tools. Implementations translate to control-plane calls (or direct
/// in-process calls in tests).
pub trait TeamFormationTools {
    fn search_agents(
        &mut self,
        characteristics: &[String],
    ) -> Result<Vec<(AgentProfile, f64)>, TeamFormationError>;
    fn launch_group_chat(
        &mut self,
        team_members: Vec<String>,
        goal: &str,
    ) -> Result<String, TeamFormationError>;
}

/// Outcome of a team-formation run, for metrics and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamFormationReport {
    pub comm_id: String,
    pub tool_calls: u32,
    pub forced: bool,
    pub members: Vec<String>,
}

/// The tool loop of the Team Formation Block. The policy picks a tool each
/// round; results accumulate. Once only one call slot remains under the cap,
/// the launch is forced with the union of all agents seen so far (top
/// [`FORCED_LAUNCH_KEEP`] by score, solo if none).
pub fn form_team(
    self_name: &str,
    task: &str,
    contacts: &[String],
    policy: &mut dyn Policy,
    tools: &mut dyn TeamFormationTools,
) -> Result<TeamFormationReport, TeamFormationError> {
    let mut calls: u32 = 0;
    // Best score seen per discovered agent.
    let mut discovered: Vec<(String, f64)> = Vec::new();
    let mut accumulated: Vec<AgentProfile> = Vec::new();

    loop {
        if calls == TOOL_CALL_CAP - 1 {
            // Last slot: the launch is forced, the policy is bypassed.
            let members = forced_members(self_name, &discovered);
            calls += 1;
            let comm_id = tools.launch_group_chat(members.clone(), task)?;
            return Ok(TeamFormationReport { comm_id, tool_calls: calls, forced: true, members });
        }
        let ctx = TeamContext {
            self_name,
            task,
            search_results: &accumulated,
            contacts,
            calls_so_far: calls,
        };
        match policy.decide_team_action(&ctx)? {
            ToolCall::Search { characteristics } => {
                calls += 1;
                let results = tools.search_agents(&characteristics)?;
                for (profile, score) in results {
                    match discovered.iter_mut().find(|(n, _)| *n == profile.agent_name) {
                        Some((_, best)) => *best = best.max(score),
                        None => discovered.push((profile.agent_name.clone(), score)),
                    }
                    if !accumulated.iter().any(|p| p.agent_name == profile.agent_name) {
                        accumulated.push(profile);
                    }
                }
            }
            ToolCall::Launch { team_members } => {
                calls += 1;
                let mut members = match team_members {
                    None => Vec::new(),
                    Some(m) => m,
                };
                ensure_self_first(self_name, &mut members);
                let comm_id = tools.launch_group_chat(members.clone(), task)?;
                return Ok(TeamFormationReport { comm_id, tool_calls: calls, forced: false, members });
            }
        }
    }
}

fn forced_members(self_name: &str, discovered: &[(String, f64)]) -> Vec<String> {
    let mut ranked: Vec<&(String, f64)> =
        discovered.iter().filter(|(n, _)| n != self_name).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut members = vec![self_name.to_string()];
    members.extend(ranked.into_iter().take(FORCED_LAUNCH_KEEP).map(|(n, _)| n.clone()));
    members
}

fn ensure_self_first(self_name: &str, members: &mut Vec<String>) {
    members.retain(|m| m != self_name);
    members.insert(0, self_name.to_string());
    // Deduplicate, keeping first occurrence.
    let mut seen = BTreeSet::new();
    members.retain(|m| seen.insert(m.clone()));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ScriptedPolicy;
    use crate::policy::script::Record;

    struct FakeTools {
        registry: Vec<AgentProfile>,
        launches: Vec<Vec<String>>,
        searches: u32,
    }

    impl FakeTools {
        fn new(names: &[&str]) -> Self {
            FakeTools {
                registry: names
                    .iter()
                    .map(|n| AgentProfile::new(*n, "Thing Assistant", format!("{n} skills")))
                    .collect(),
                launches: Vec::new(),
                searches: 0,
            }
        }
    }

    impl TeamFormationTools for FakeTools {
        fn search_agents(
            &mut self,
            characteristics: &[String],
        ) -> Result<Vec<(AgentProfile, f64)>, TeamFormationError> {
            self.searches += 1;
            let needle = characteristics.join(" ").to_lowercase();
            Ok(self
                .registry
                .iter()
                .filter(|p| needle.contains(&p.agent_name.to_lowercase()))
                .enumerate()
                .map(|(i, p)| (p.clone(), 1.0 - i as f64 * 0.1))
                .collect())
        }

        fn launch_group_chat(
            &mut self,
            team_members: Vec<String>,
            _goal: &str,
        ) -> Result<String, TeamFormationError> {
            self.launches.push(team_members);
            Ok(format!("comm-{}", self.launches.len()))
        }
    }

    fn scripted(records: Vec<Record>) -> ScriptedPolicy {
        let mut p = ScriptedPolicy::new();
        p.load("task", records);
        p
    }

    #[test]
    fn search_then_launch_takes_two_calls() {
        let mut policy = scripted(vec![
            Record::Search { characteristics: vec!["b c".into()] },
            Record::Launch { team_members: Some(vec!["self".into(), "b".into(), "c".into()]) },
        ]);
        let mut tools = FakeTools::new(&["b", "c", "d"]);
        let report = form_team("self", "task", &[], &mut policy, &mut tools).unwrap();
        assert_eq!(report.tool_calls, 2);
        assert!(!report.forced);
        assert_eq!(report.members, vec!["self", "b", "c"]);
    }

    #[test]
    fn always_searching_forces_launch_on_call_ten() {
        let records = vec![Record::Search { characteristics: vec!["b".into()] }; 12];
        let mut policy = scripted(records);
        let mut tools = FakeTools::new(&["b"]);
        let report = form_team("self", "task", &[], &mut policy, &mut tools).unwrap();
        assert_eq!(report.tool_calls, TOOL_CALL_CAP);
        assert!(report.forced);
        assert_eq!(tools.searches, TOOL_CALL_CAP - 1);
        assert_eq!(report.members, vec!["self", "b"]);
    }

    #[test]
    fn immediate_solo_launch() {
        let mut policy = scripted(vec![Record::Launch { team_members: None }]);
        let mut tools = FakeTools::new(&[]);
        let report = form_team("self", "task", &[], &mut policy, &mut tools).unwrap();
        assert_eq!(report.tool_calls, 1);
        assert_eq!(report.members, vec!["self"]);
    }

    #[test]
    fn edges_full_matches_pair_enumeration() {
        // Oracle: count unordered pairs by brute force.
        for n in 0u64..30 {
            let brute = (0..n).flat_map(|i| (i + 1..n).map(move |_| 1u64)).sum::<u64>();
            assert_eq!(edges_full(n), brute, "n = {n}");
        }
        assert_eq!(edges_full(2), 1);
        assert_eq!(edges_full(5), 10);
        assert_eq!(edges_full(0), 0);
        assert_eq!(edges_full(1), 0);
    }

    #[test]
    fn nested_edges_on_walkthrough_shape() {
        // g0 = {c1, c2, c3} with child g1 = {c2, c6}.
        let mut root = TeamTree::leaf("g0", vec!["c1".into(), "c2".into(), "c3".into()], 0);
        root.children.push(TeamTree::leaf("g1", vec!["c2".into(), "c6".into()], 1));
        assert_eq!(edges_nested(&root), 4);
        assert_eq!(edges_full(root.member_union().len() as u64), 6);
        root.validate().unwrap();
    }

    #[test]
    fn tree_validation_catches_bad_depth_and_duplicates() {
        let mut root = TeamTree::leaf("g0", vec!["a".into()], 0);
        root.children.push(TeamTree::leaf("g1", vec!["a".into(), "b".into()], 2));
        assert!(matches!(root.validate(), Err(TeamTreeError::BadDepth { .. })));

        let mut root = TeamTree::leaf("g0", vec!["a".into()], 0);
        root.children.push(TeamTree::leaf("g0", vec!["a".into()], 1));
        assert!(matches!(root.validate(), Err(TeamTreeError::DuplicateCommId(_))));
    }
}
