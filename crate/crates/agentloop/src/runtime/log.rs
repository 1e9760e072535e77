//! Structured run log: an append-only sequence of records, serialized as
//! JSON Lines. Timestamps are logical (the `seq` field and the progress
//! revision counters); no wall clock ever enters the log, so a replay of the
//! same log is byte-for-byte reproducible.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actor::ReactStep;
use crate::planner::PlannerAction;
use crate::progress::ProgressEvent;

use super::RuntimeError;

/// Aggregate counters reported at the end of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub subtasks_dispatched: usize,
    pub actors_instantiated: usize,
    pub failures_observed: usize,
    /// Planner iterations whose revision changed the list structurally.
    pub replans: usize,
    pub total_backend_calls: usize,
    pub fulfilled: bool,
}

/// Terminal disposition of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Planner finished and every leaf is cleared.
    Fulfilled,
    /// The run ended without the goal being met.
    Unfulfilled,
    /// The planner explicitly gave up.
    Aborted,
    /// The planner iteration budget ran out.
    BudgetExhausted,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Fulfilled => 0,
            RunStatus::Unfulfilled | RunStatus::Aborted => 2,
            RunStatus::BudgetExhausted => 3,
        }
    }
}

/// One logged occurrence. `revised` plans are stored post-merge, so replay
/// only has to re-apply them in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    PlanInitialized {
        goal: String,
        plan: String,
    },
    PlannerDecision {
        iteration: usize,
        rationale: String,
        action: PlannerAction,
        /// Serialized Markdown of the merged revised list.
        revised: String,
        structural_change: bool,
    },
    ActorInstantiated {
        actor_id: String,
        task_id: String,
        bundles: Vec<String>,
        persona: String,
    },
    ReactStep {
        actor_id: String,
        step: ReactStep,
    },
    Progress {
        event: ProgressEvent,
    },
    ConclusionApplied {
        task_id: String,
        report: crate::progress::ConclusionReport,
    },
    RunFinished {
        status: RunStatus,
        answer: Option<String>,
        metrics: RunMetrics,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub record: LogRecord,
}

/// In-memory event log with JSONL persistence.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct EventLog {
    pub entries: Vec<LogEntry>,
}

impl EventLog {
    pub fn new() -> EventLog {
        EventLog::default()
    }

    /// Append a record, assigning the next sequence number.
    pub fn push(&mut self, record: LogRecord) {
        let seq = self.entries.len() as u64;
        self.entries.push(LogEntry { seq, record });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("log entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<EventLog, RuntimeError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogEntry = serde_json::from_str(line)
                .map_err(|e| RuntimeError::Log(format!("line {}: {e}", i + 1)))?;
            if entry.seq != entries.len() as u64 {
                return Err(RuntimeError::Log(format!(
                    "line {}: sequence gap (expected {}, got {})",
                    i + 1,
                    entries.len(),
                    entry.seq
                )));
            }
            entries.push(entry);
        }
        Ok(EventLog { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), RuntimeError> {
        fs::write(path, self.to_jsonl()).map_err(|e| RuntimeError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<EventLog, RuntimeError> {
        let text = fs::read_to_string(path).map_err(|e| RuntimeError::Io(e.to_string()))?;
        EventLog::from_jsonl(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_jsonl() {
        let mut log = EventLog::new();
        log.push(LogRecord::PlanInitialized {
            goal: "g".into(),
            plan: "- [ ] x\n".into(),
        });
        log.push(LogRecord::RunFinished {
            status: RunStatus::Fulfilled,
            answer: Some("done".into()),
            metrics: RunMetrics::default(),
        });
        let text = log.to_jsonl();
        let back = EventLog::from_jsonl(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.entries[1].seq, 1);
    }

    #[test]
    fn rejects_sequence_gap() {
        let text = r#"{"seq":1,"type":"plan_initialized","goal":"g","plan":"- [ ] x\n"}"#;
        assert!(EventLog::from_jsonl(text).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunStatus::Fulfilled.exit_code(), 0);
        assert_eq!(RunStatus::Unfulfilled.exit_code(), 2);
        assert_eq!(RunStatus::Aborted.exit_code(), 2);
        assert_eq!(RunStatus::BudgetExhausted.exit_code(), 3);
    }
}
