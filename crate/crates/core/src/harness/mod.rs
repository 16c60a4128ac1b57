//! Scenario runner and operator tooling: loads scripted scenarios, boots a
//! server plus N clients (threads or separate processes), drives the run to
//! quiescence, and emits transcripts, metrics, and golden-file comparisons.

pub mod replay;
pub mod report;
pub mod runner;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::agents::{
    arith_agent, echo_agent, fail_agent, DelayedEchoAgent, HangAgent, IntegratedAgent,
};
use crate::policy::script::Record;
use crate::registry::AgentProfile;

/// Which deterministic stand-in backs a scenario agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    None,
    Echo,
    Arith,
    Fail,
    DelayedEcho { delay_ms: u64 },
    Hang,
}

impl AgentKind {
    pub fn instantiate(&self) -> Option<Box<dyn IntegratedAgent>> {
        match self {
            AgentKind::None => None,
            AgentKind::Echo => Some(echo_agent()),
            AgentKind::Arith => Some(arith_agent()),
            AgentKind::Fail => Some(fail_agent()),
            AgentKind::DelayedEcho { delay_ms } => {
                Some(Box::new(DelayedEchoAgent::new(Duration::from_millis(*delay_ms))))
            }
            AgentKind::Hang => Some(Box::new(HangAgent)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioAgent {
    pub profile: AgentProfile,
    pub integrated_agent: AgentKind,
    /// Ordered decision records per group goal.
    #[serde(default)]
    pub script: BTreeMap<String, Vec<Record>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTask {
    pub goal: String,
    pub initiator: String,
    pub max_turns: u32,
    #[serde(default = "default_max_depth")]
    pub max_depth: u32,
}

fn default_max_depth() -> u32 {
    2
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expectations {
    pub final_conclusion: Option<String>,
    /// metric name -> inclusive [min, max]
    pub metric_bounds: BTreeMap<String, [u64; 2]>,
    /// Directory of golden transcripts, relative to the scenario file.
    pub transcript_golden: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub task: ScenarioTask,
    pub agents: Vec<ScenarioAgent>,
    #[serde(default)]
    pub expectations: Expectations,
    #[serde(default = "default_deadline_ms")]
    pub deadline_ms: u64,
}

fn default_deadline_ms() -> u64 {
    120_000
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let scenario: Scenario =
            serde_json::from_str(&text).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.agents.is_empty() {
            return Err(ScenarioError::Invalid("scenario needs at least one agent".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for agent in &self.agents {
            if agent.profile.agent_name.is_empty() || agent.profile.agent_description.is_empty() {
                return Err(ScenarioError::Invalid(format!(
                    "agent {:?} needs a non-empty name and description",
                    agent.profile.agent_name
                )));
            }
            if !names.insert(agent.profile.agent_name.clone()) {
                return Err(ScenarioError::Invalid(format!(
                    "duplicate agent name {}",
                    agent.profile.agent_name
                )));
            }
        }
        if !names.contains(&self.task.initiator) {
            return Err(ScenarioError::Invalid(format!(
                "initiator {} is not among the agents",
                self.task.initiator
            )));
        }
        if self.task.max_turns == 0 {
            return Err(ScenarioError::Invalid("max_turns must be positive".into()));
        }
        Ok(())
    }

    pub fn agent(&self, name: &str) -> Option<&ScenarioAgent> {
        self.agents.iter().find(|a| a.profile.agent_name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "name": "t",
            "task": {"goal": "g", "initiator": "A", "max_turns": 5},
            "agents": [
                {"profile": {"agent_name": "A", "agent_type": "T", "agent_description": "d"},
                 "integrated_agent": "none",
                 "script": {"g": [{"conclude": "x"}]}}
            ]
        }"#
        .to_string()
    }

    #[test]
    fn loads_minimal_scenario() {
        let s: Scenario = serde_json::from_str(&minimal_json()).unwrap();
        s.validate().unwrap();
        assert_eq!(s.deadline_ms, 120_000);
        assert_eq!(s.task.max_depth, 2);
        assert_eq!(s.agents[0].integrated_agent, AgentKind::None);
    }

    #[test]
    fn rejects_unknown_initiator_and_dup_names() {
        let mut s: Scenario = serde_json::from_str(&minimal_json()).unwrap();
        s.task.initiator = "ghost".into();
        assert!(s.validate().is_err());

        let mut s: Scenario = serde_json::from_str(&minimal_json()).unwrap();
        s.agents.push(s.agents[0].clone());
        assert!(s.validate().is_err());
    }

    #[test]
    fn agent_kind_json_forms() {
        let kinds: Vec<AgentKind> = serde_json::from_str(
            r#"["echo", "arith", "fail", "none", {"delayed_echo": {"delay_ms": 10}}]"#,
        )
        .unwrap();
        assert_eq!(kinds.len(), 5);
        assert!(kinds[0].instantiate().is_some());
        assert!(kinds[3].instantiate().is_none());
    }
}
