//! Command-line entry point: run a goal, replay or inspect an event log,
//! and validate scenario files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agentloop::runtime::{self, EventLog, LogRecord, RunConfig, RunOutcome};

#[derive(Parser)]
#[command(
    name = "agentloop",
    about = "Dynamic-planner multi-agent orchestration engine",
    after_help = "Environment:\n  \
        AGENTLOOP_BASE_URL  base URL of an OpenAI-compatible chat completions API\n  \
        AGENTLOOP_MODEL     model name sent with each request\n  \
        AGENTLOOP_API_KEY   optional bearer token"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run described by a TOML config file.
    Run {
        /// Path to the run configuration.
        config: PathBuf,
        /// Output directory for the run artifacts (default: ./run).
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Reconstruct the final task list and metrics from an event log.
    Replay {
        /// Path to an events.jsonl file.
        log: PathBuf,
    },
    /// Print a human-readable summary of an event log.
    Inspect {
        /// Path to an events.jsonl file.
        log: PathBuf,
    },
    /// Check that a scripted-backend scenario file parses.
    ValidateScenario {
        /// Path to a scenario TOML file.
        scenario: PathBuf,
    },
}

fn write_artifacts(out: &Path, config: &RunConfig, outcome: &RunOutcome) -> std::io::Result<()> {
    fs::create_dir_all(out)?;
    let snapshot = toml::to_string_pretty(config).unwrap_or_default();
    fs::write(out.join("config.toml"), snapshot)?;
    fs::write(out.join("events.jsonl"), outcome.log.to_jsonl())?;
    fs::write(out.join("progress.md"), outcome.list.serialize_markdown())?;
    Ok(())
}

fn print_metrics(metrics: &runtime::RunMetrics) {
    println!(
        "metrics: dispatched={} actors={} failures={} replans={} backend_calls={} fulfilled={}",
        metrics.subtasks_dispatched,
        metrics.actors_instantiated,
        metrics.failures_observed,
        metrics.replans,
        metrics.total_backend_calls,
        metrics.fulfilled
    );
}

fn cmd_run(config_path: &Path, out: &Path) -> ExitCode {
    let config = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    };
    let sandbox = config
        .sandbox_root
        .clone()
        .unwrap_or_else(|| out.join("sandbox"));
    if let Err(e) = fs::create_dir_all(&sandbox) {
        eprintln!("error: cannot create sandbox {}: {e}", sandbox.display());
        return ExitCode::from(4);
    }
    match runtime::run(&config, &sandbox) {
        Ok(outcome) => {
            if let Err(e) = write_artifacts(out, &config, &outcome) {
                eprintln!("error: cannot write run artifacts: {e}");
                return ExitCode::from(4);
            }
            println!("status: {:?}", outcome.status);
            if let Some(answer) = &outcome.answer {
                println!("answer: {answer}");
            }
            print_metrics(&outcome.metrics);
            println!("artifacts: {}", out.display());
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_replay(log_path: &Path) -> ExitCode {
    let log = match EventLog::load(log_path) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    };
    match runtime::replay(&log) {
        Ok(replayed) => {
            println!("{}", replayed.final_markdown);
            if let Some(status) = replayed.status {
                println!("status: {status:?}");
            }
            if let Some(answer) = &replayed.answer {
                println!("answer: {answer}");
            }
            print_metrics(&replayed.metrics);
            if let Some(logged) = &replayed.logged_metrics {
                if *logged != replayed.metrics {
                    eprintln!("warning: recomputed metrics differ from the logged metrics");
                }
            }
            match replayed.status {
                Some(status) => ExitCode::from(status.exit_code() as u8),
                None => ExitCode::from(2),
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(4)
        }
    }
}

fn cmd_inspect(log_path: &Path) -> ExitCode {
    let log = match EventLog::load(log_path) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    };
    for entry in &log.entries {
        let line = match &entry.record {
            LogRecord::PlanInitialized { goal, plan } => {
                format!("plan initialized for goal `{goal}` ({} lines)", plan.lines().count())
            }
            LogRecord::PlannerDecision {
                iteration,
                action,
                structural_change,
                ..
            } => format!(
                "planner iteration {iteration}: {action:?}{}",
                if *structural_change { " [revised]" } else { "" }
            ),
            LogRecord::ActorInstantiated {
                actor_id,
                task_id,
                bundles,
                ..
            } => format!("actor {actor_id} for task {task_id} with bundles {bundles:?}"),
            LogRecord::ReactStep { actor_id, step } => format!(
                "  {actor_id} step {}: {}",
                step.index,
                step.observation.lines().next().unwrap_or("")
            ),
            LogRecord::Progress { event } => format!(
                "  progress on {}: {:?} {}",
                event.task_id, event.kind, event.message
            ),
            LogRecord::ConclusionApplied { task_id, report } => format!(
                "conclusion for {task_id}: {:?} - {}",
                report.final_status, report.summary
            ),
            LogRecord::RunFinished { status, .. } => format!("run finished: {status:?}"),
        };
        println!("{:>4}  {line}", entry.seq);
    }
    ExitCode::SUCCESS
}

fn cmd_validate_scenario(path: &Path) -> ExitCode {
    match agentloop::llm::Scenario::load(path) {
        Ok(scenario) => {
            println!(
                "ok: {} steps ({})",
                scenario.steps.len(),
                if scenario.strict { "strict" } else { "non-strict" }
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(4)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config, out } => cmd_run(config, out),
        Command::Replay { log } => cmd_replay(log),
        Command::Inspect { log } => cmd_inspect(log),
        Command::ValidateScenario { scenario } => cmd_validate_scenario(scenario),
    }
}
