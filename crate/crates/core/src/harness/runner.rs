//! Drives one scenario end to end: boots a hub, registers and starts every
//! agent (as threads or as separate OS processes over TCP), waits for
//! quiescence, and assembles the run report.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::client::port::{InProcPort, ServerPort, TcpPort};
use crate::client::{ClientConfig, ClientRuntime, RootTask};
use crate::harness::report::{
    check_golden, compute_metrics, encode_transcript, GroupReport, Outcome, RunReport, RunStatus,
};
use crate::harness::replay::replay_frames;
use crate::harness::{Scenario, ScenarioError};
use crate::policy::ScriptedPolicy;
use crate::server::tcp::TcpServer;
use crate::server::{Hub, ServerConfig};

/// Shared-token default for harness runs.
pub const SCENARIO_TOKEN: &str = "scenario-token";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    InProcess,
    Processes,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub processes: bool,
    pub golden_dir: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
    /// Binary to exec for `client-worker` subprocesses; defaults to the
    /// current executable.
    pub worker_bin: Option<PathBuf>,
}

pub fn scripted_policy_for(scenario: &Scenario, agent_name: &str) -> ScriptedPolicy {
    let mut policy = ScriptedPolicy::new();
    if let Some(agent) = scenario.agent(agent_name) {
        for (goal, records) in &agent.script {
            policy.load(goal.clone(), records.clone());
        }
    }
    policy
}

pub fn build_runtime(
    scenario: &Scenario,
    agent_name: &str,
    token: &str,
    port: Box<dyn ServerPort>,
) -> ClientRuntime {
    let agent_spec = scenario.agent(agent_name).expect("validated agent");
    let mut cfg = ClientConfig::new(agent_name, token);
    cfg.max_team_up_depth = scenario.task.max_depth;
    cfg.poll_interval = Duration::from_millis(2);
    ClientRuntime::new(
        cfg,
        agent_spec.profile.clone(),
        Box::new(scripted_policy_for(scenario, agent_name)),
        agent_spec.integrated_agent.instantiate(),
        port,
    )
}

fn root_for(scenario: &Scenario, agent_name: &str) -> Option<RootTask> {
    (scenario.task.initiator == agent_name).then(|| RootTask {
        goal: scenario.task.goal.clone(),
        max_turns: Some(scenario.task.max_turns),
    })
}

/// Loads, runs, and reports one scenario file.
pub fn run_scenario(path: &Path, options: &RunOptions) -> Result<RunReport, ScenarioError> {
    let scenario = Scenario::load(path)?;
    run(&scenario, Some(path), options)
}

pub fn run(
    scenario: &Scenario,
    scenario_path: Option<&Path>,
    options: &RunOptions,
) -> Result<RunReport, ScenarioError> {
    let hub = Arc::new(
        Hub::new(ServerConfig {
            listen: "127.0.0.1:0".into(),
            auth_token: SCENARIO_TOKEN.into(),
            max_team_up_depth: scenario.task.max_depth,
            default_max_turns: scenario.task.max_turns,
            ..Default::default()
        })
        .map_err(ScenarioError::Io)?,
    );
    for agent in &scenario.agents {
        hub.register_agent(agent.profile.clone())
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    }

    let deadline = Instant::now() + Duration::from_millis(scenario.deadline_ms);
    let mut client_violations: Vec<String> = Vec::new();
    let deadline_hit;

    if options.processes {
        let tcp = TcpServer::start(hub.clone()).map_err(ScenarioError::Io)?;
        let addr = tcp.addr().to_string();
        // Workers need the scenario on disk.
        let tmp;
        let path: PathBuf = match scenario_path {
            Some(p) => p.to_path_buf(),
            None => {
                tmp = tempfile_path(&scenario.name)?;
                std::fs::write(&tmp, serde_json::to_string(scenario).expect("serializes"))?;
                tmp.clone()
            }
        };
        let bin = options
            .worker_bin
            .clone()
            .or_else(|| std::env::current_exe().ok())
            .ok_or_else(|| ScenarioError::Invalid("cannot locate worker binary".into()))?;
        let mut children = Vec::new();
        for agent in &scenario.agents {
            let child = std::process::Command::new(&bin)
                .arg("client-worker")
                .arg("--server")
                .arg(&addr)
                .arg("--token")
                .arg(SCENARIO_TOKEN)
                .arg("--scenario")
                .arg(&path)
                .arg("--agent")
                .arg(&agent.profile.agent_name)
                .stdout(std::process::Stdio::piped())
                .stderr(std::process::Stdio::null())
                .spawn()
                .map_err(ScenarioError::Io)?;
            children.push(child);
        }
        deadline_hit = !wait_quiescent(&hub, deadline);
        hub.broadcast_shutdown();
        for mut child in children {
            let grace = Instant::now() + Duration::from_secs(5);
            let status = loop {
                match child.try_wait() {
                    Ok(Some(status)) => break Some(status),
                    Ok(None) if Instant::now() > grace => {
                        let _ = child.kill();
                        break None;
                    }
                    Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                    Err(_) => break None,
                }
            };
            if status.is_none() {
                client_violations.push("worker did not exit after shutdown".into());
                let _ = child.wait();
                continue;
            }
            if let Some(mut stdout) = child.stdout.take() {
                use std::io::Read;
                let mut text = String::new();
                let _ = stdout.read_to_string(&mut text);
                for line in text.lines() {
                    if let Ok(summary) = serde_json::from_str::<WorkerSummary>(line) {
                        client_violations.extend(
                            summary
                                .violations
                                .into_iter()
                                .map(|v| format!("{}: {v}", summary.agent)),
                        );
                    }
                }
            }
        }
        tcp.stop();
    } else {
        let mut handles = Vec::new();
        for agent in &scenario.agents {
            let name = agent.profile.agent_name.clone();
            let mut runtime = build_runtime(
                scenario,
                &name,
                SCENARIO_TOKEN,
                Box::new(InProcPort::new(hub.clone())),
            );
            let root = root_for(scenario, &name);
            handles.push(std::thread::spawn(move || {
                let result = runtime.run(root);
                (runtime, result)
            }));
        }
        deadline_hit = !wait_quiescent(&hub, deadline);
        hub.broadcast_shutdown();
        for handle in handles {
            match handle.join() {
                Ok((runtime, result)) => {
                    if let Err(e) = result {
                        client_violations.push(format!("{}: {e}", runtime.name()));
                    }
                    client_violations.extend(
                        runtime
                            .violations()
                            .iter()
                            .map(|v| format!("{}: {v}", runtime.name())),
                    );
                }
                Err(_) => client_violations.push("client thread panicked".into()),
            }
        }
    }

    let mut report = assemble_report(scenario, &hub, client_violations, deadline_hit);
    if let Some(dir) = effective_golden_dir(scenario, scenario_path, options) {
        match check_golden(&report, &dir) {
            Ok(failures) => report.outcome.expectation_failures.extend(failures),
            Err(e) => report
                .outcome
                .expectation_failures
                .push(format!("golden comparison failed: {e}")),
        }
    }
    finalize_status(&mut report, deadline_hit);
    if let Some(path) = &options.report_path {
        report.write_json(path)?;
    }
    Ok(report)
}

#[derive(Deserialize)]
struct WorkerSummary {
    agent: String,
    violations: Vec<String>,
}

fn tempfile_path(name: &str) -> std::io::Result<PathBuf> {
    let dir = std::env::temp_dir();
    let path = dir.join(format!("scenario-{}-{}.json", name, std::process::id()));
    Ok(path)
}

fn effective_golden_dir(
    scenario: &Scenario,
    scenario_path: Option<&Path>,
    options: &RunOptions,
) -> Option<PathBuf> {
    if let Some(dir) = &options.golden_dir {
        return Some(dir.clone());
    }
    let rel = scenario.expectations.transcript_golden.as_ref()?;
    let base = scenario_path.and_then(|p| p.parent()).unwrap_or(Path::new("."));
    Some(base.join(rel))
}

fn wait_quiescent(hub: &Hub, deadline: Instant) -> bool {
    loop {
        if hub.all_quiescent() {
            return true;
        }
        if Instant::now() > deadline {
            return false;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn assemble_report(
    scenario: &Scenario,
    hub: &Hub,
    mut violations: Vec<String>,
    deadline_hit: bool,
) -> RunReport {
    let snapshots = hub.group_snapshots();
    let trees = hub.team_trees();
    let metrics = compute_metrics(&snapshots, &trees);

    // Every transcript must replay cleanly; replay violations are run
    // violations.
    for snap in &snapshots {
        match replay_frames(&snap.transcript) {
            Ok(list) => violations.extend(
                list.into_iter().map(|v| format!("replay {}: {v}", snap.comm_id)),
            ),
            Err(e) => violations.push(format!("replay {}: {e}", snap.comm_id)),
        }
    }
    for tree in &trees {
        if let Err(e) = tree.validate() {
            violations.push(format!("team tree invalid: {e}"));
        }
    }

    let root_conclusion = snapshots
        .iter()
        .find(|s| s.parent.is_none())
        .and_then(|s| s.conclusion.clone());

    let mut expectation_failures = Vec::new();
    if deadline_hit {
        expectation_failures.push("deadline exceeded before quiescence".to_string());
    }
    if let Some(expected) = &scenario.expectations.final_conclusion {
        if root_conclusion.as_deref() != Some(expected.as_str()) {
            expectation_failures.push(format!(
                "final conclusion mismatch: expected {expected:?}, got {root_conclusion:?}"
            ));
        }
    }
    for (metric, [min, max]) in &scenario.expectations.metric_bounds {
        match metrics.get(metric) {
            Some(actual) if actual >= *min && actual <= *max => {}
            Some(actual) => expectation_failures.push(format!(
                "metric {metric} = {actual} outside [{min}, {max}]"
            )),
            None => expectation_failures.push(format!("unknown metric {metric}")),
        }
    }

    let groups = snapshots
        .iter()
        .map(|s| GroupReport {
            comm_id: s.comm_id.clone(),
            goal: s.goal.clone(),
            members: s.members.clone(),
            team_up_depth: s.team_up_depth,
            conclusion: s.conclusion.clone(),
            transcript: encode_transcript(&s.transcript),
        })
        .collect();

    RunReport {
        scenario: scenario.name.clone(),
        status: RunStatus::Pass,
        groups,
        team_trees: trees,
        metrics,
        outcome: Outcome {
            conclusion: root_conclusion,
            violations,
            expectation_failures,
        },
    }
}

fn finalize_status(report: &mut RunReport, deadline_hit: bool) {
    report.status = if deadline_hit {
        RunStatus::Deadline
    } else if report.outcome.violations.is_empty()
        && report.outcome.expectation_failures.is_empty()
    {
        RunStatus::Pass
    } else {
        RunStatus::ExpectationFailed
    };
}

/// Entry point for `client-worker` subprocesses: connect over TCP, play the
/// scenario role, print a one-line JSON summary on exit.
pub fn run_worker(
    scenario_path: &Path,
    agent_name: &str,
    server_addr: &str,
    token: &str,
) -> Result<(), ScenarioError> {
    let scenario = Scenario::load(scenario_path)?;
    if scenario.agent(agent_name).is_none() {
        return Err(ScenarioError::Invalid(format!("agent {agent_name} not in scenario")));
    }
    let mut runtime =
        build_runtime(&scenario, agent_name, token, Box::new(TcpPort::new(server_addr)));
    let result = runtime.run(root_for(&scenario, agent_name));
    let mut violations: Vec<String> = runtime.violations().to_vec();
    if let Err(e) = result {
        violations.push(format!("run error: {e}"));
    }
    println!(
        "{}",
        serde_json::json!({ "agent": agent_name, "violations": violations })
    );
    Ok(())
}
