//! Operator CLI: standalone server, scenario runs, registry search, and
//! transcript replay.
//!
//! Exit codes: 0 pass, 1 expectation failure, 2 invalid input, 3 runtime
//! fault.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use agenthub::client::port::{ServerPort, TcpPort};
use agenthub::harness::replay::replay_transcript;
use agenthub::harness::report::RunStatus;
use agenthub::harness::runner::{self, RunOptions};
use agenthub::server::tcp::TcpServer;
use agenthub::server::{Hub, ServerConfig};

#[derive(Parser)]
#[command(name = "agenthub", about = "Agent collaboration hub and scenario harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the standalone server.
    Serve {
        /// JSON config file; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
        /// Shared auth token clients must present.
        #[arg(long)]
        token: Option<String>,
        #[arg(long)]
        max_depth: Option<u32>,
        #[arg(long)]
        max_turns: Option<u32>,
        /// Directory for the registry log and per-group transcripts.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Run one scripted scenario to quiescence and report.
    RunScenario {
        file: PathBuf,
        /// Compare (or bootstrap) golden transcripts under this directory.
        #[arg(long)]
        golden: Option<PathBuf>,
        /// Write the run report JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Run each client as a separate OS process over TCP.
        #[arg(long)]
        processes: bool,
    },
    /// Query a running server's registry.
    Search {
        #[arg(long)]
        server: String,
        #[arg(long, default_value = "open-sesame")]
        token: String,
        #[arg(long, default_value_t = 10)]
        limit: usize,
        /// Desired characteristics (each matched independently).
        #[arg(required = true)]
        query: Vec<String>,
    },
    /// Replay a group transcript log and list violations.
    Replay { log: PathBuf },
    /// Internal: one scenario agent in a child process.
    #[command(hide = true)]
    ClientWorker {
        #[arg(long)]
        server: String,
        #[arg(long)]
        token: String,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        agent: String,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Serve { config, listen, token, max_depth, max_turns, data_dir } => {
            let mut cfg = match config {
                Some(path) => match ServerConfig::from_file(&path) {
                    Ok(cfg) => cfg,
                    Err(e) => {
                        eprintln!("bad config {}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                },
                None => ServerConfig::default(),
            };
            if let Some(listen) = listen {
                cfg.listen = listen;
            }
            if let Some(token) = token {
                cfg.auth_token = token;
            }
            if let Some(depth) = max_depth {
                cfg.max_team_up_depth = depth;
            }
            if let Some(turns) = max_turns {
                cfg.default_max_turns = turns;
            }
            if let Some(dir) = data_dir {
                cfg.data_dir = Some(dir);
            }
            let hub = match Hub::new(cfg) {
                Ok(hub) => Arc::new(hub),
                Err(e) => {
                    eprintln!("server init failed: {e}");
                    return ExitCode::from(3);
                }
            };
            match TcpServer::start(hub) {
                Ok(server) => {
                    println!("listening on {}", server.addr());
                    loop {
                        std::thread::sleep(std::time::Duration::from_secs(3600));
                    }
                }
                Err(e) => {
                    eprintln!("listen failed: {e}");
                    ExitCode::from(3)
                }
            }
        }
        Command::RunScenario { file, golden, report, processes } => {
            let options = RunOptions { processes, golden_dir: golden, report_path: report, worker_bin: None };
            match runner::run_scenario(&file, &options) {
                Ok(run) => {
                    for violation in &run.outcome.violations {
                        eprintln!("violation: {violation}");
                    }
                    for failure in &run.outcome.expectation_failures {
                        eprintln!("expectation failed: {failure}");
                    }
                    println!(
                        "scenario {}: {:?} ({} groups, {} frames, conclusion: {})",
                        run.scenario,
                        run.status,
                        run.groups.len(),
                        run.metrics.total_frames,
                        run.outcome.conclusion.as_deref().unwrap_or("-")
                    );
                    match run.status {
                        RunStatus::Pass => ExitCode::SUCCESS,
                        RunStatus::ExpectationFailed => ExitCode::from(1),
                        RunStatus::Deadline => ExitCode::from(3),
                    }
                }
                Err(agenthub::harness::ScenarioError::Invalid(e)) => {
                    eprintln!("invalid scenario: {e}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(3)
                }
            }
        }
        Command::Search { server, token, limit, query } => {
            let mut port = TcpPort::new(server);
            if let Err(e) = port.connect("@cli", &token, None) {
                eprintln!("connect failed: {e}");
                return ExitCode::from(3);
            }
            match port.search(query, limit) {
                Ok(results) => {
                    for (profile, score) in results {
                        println!("{score:.4}\t{}\t{}", profile.agent_name, profile.agent_type);
                    }
                    port.disconnect();
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("search failed: {e}");
                    ExitCode::from(3)
                }
            }
        }
        Command::Replay { log } => match replay_transcript(&log) {
            Ok(violations) if violations.is_empty() => {
                println!("transcript ok");
                ExitCode::SUCCESS
            }
            Ok(violations) => {
                for v in violations {
                    println!("{v}");
                }
                ExitCode::from(1)
            }
            Err(e) => {
                eprintln!("replay failed: {e}");
                ExitCode::from(2)
            }
        },
        Command::ClientWorker { server, token, scenario, agent } => {
            match runner::run_worker(&scenario, &agent, &server, &token) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("worker failed: {e}");
                    ExitCode::from(3)
                }
            }
        }
    }
}
