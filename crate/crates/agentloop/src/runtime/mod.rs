//! Run orchestration: wire the planner, factory, actors and progress list
//! together, drive the loop to completion, and keep a structured event log
//! from which any run can be replayed deterministically.

mod config;
mod log;

pub use config::{BackendConfig, BackendKind, RunConfig, RunMode};
pub use log::{EventLog, LogEntry, LogRecord, RunMetrics, RunStatus};

use std::path::Path;

use thiserror::Error;

use crate::actor;
use crate::factory::{self, FactoryConfig, FactoryError, KnowledgeBase};
use crate::llm::{Backend, CompletionRequest, LlmError};
use crate::planner::{
    self, PlannerAction, PlannerError, PlannerState, SubtaskSpec,
};
use crate::progress::{
    ConclusionReport, FinalStatus, ProgressError, ProgressEvent, ProgressList, TaskStatus,
};
use crate::tools::{ProgressSink, Registry, ToolContext, ToolError};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("event log error: {0}")]
    Log(String),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Factory(#[from] FactoryError),
    #[error(transparent)]
    Progress(#[from] ProgressError),
}

impl RuntimeError {
    /// Every runtime error maps to the configuration/scenario exit code.
    pub fn exit_code(&self) -> i32 {
        4
    }
}

impl From<ToolError> for RuntimeError {
    fn from(e: ToolError) -> RuntimeError {
        RuntimeError::Config(e.to_string())
    }
}

/// Backend wrapper counting every completion call for the run metrics.
pub struct CountingBackend {
    inner: Box<dyn Backend>,
    pub calls: usize,
}

impl CountingBackend {
    pub fn new(inner: Box<dyn Backend>) -> CountingBackend {
        CountingBackend { inner, calls: 0 }
    }
}

impl Backend for CountingBackend {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.calls += 1;
        self.inner.complete(request)
    }
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub answer: Option<String>,
    pub metrics: RunMetrics,
    pub log: EventLog,
    pub list: ProgressList,
}

/// Sink that applies `Update_Progress` events to the shared list as they
/// happen and keeps the stamped copies for the event log.
struct ListSink<'a> {
    list: &'a mut ProgressList,
    logged: Vec<ProgressEvent>,
}

impl ProgressSink for ListSink<'_> {
    fn record(&mut self, event: ProgressEvent) -> Result<(), String> {
        let task_id = event.task_id.clone();
        self.list.apply_event(event).map_err(|e| e.to_string())?;
        if let Some(stamped) = self
            .list
            .find(&task_id)
            .and_then(|n| n.notes.last())
            .cloned()
        {
            self.logged.push(stamped);
        }
        Ok(())
    }
}

fn build_registry(config: &RunConfig) -> Result<Registry, RuntimeError> {
    let mut registry = Registry::with_builtins();
    for manifest in &config.bundle_manifests {
        registry.load_manifest(manifest)?;
    }
    Ok(registry)
}

fn build_knowledge(config: &RunConfig) -> Result<KnowledgeBase, RuntimeError> {
    match &config.knowledge_dir {
        Some(dir) => Ok(KnowledgeBase::load_dir(dir)?),
        None => Ok(KnowledgeBase::default()),
    }
}

fn factory_config(config: &RunConfig) -> FactoryConfig {
    FactoryConfig {
        fallback_enabled: true,
        persona_generation: config.persona_generation,
        knowledge_limit: config.knowledge_limit,
        step_limit: config.actor_step_limit,
    }
}

/// When a conclusion report is rejected by the list (unknown id, illegal
/// transition, empty summary), the run must not wedge: substitute a failed
/// report that records the rejection, dropping status updates the list
/// cannot accept.
fn sanitize_report(
    list: &ProgressList,
    task_id: &str,
    original: &ConclusionReport,
    err: &ProgressError,
) -> ConclusionReport {
    let mut status_updates = vec![(task_id.to_string(), TaskStatus::Failed)];
    match list.find(task_id) {
        Some(node) if node.status.can_transition_to(TaskStatus::Failed) => {}
        _ => status_updates.clear(),
    }
    ConclusionReport {
        status_updates,
        summary: format!("report rejected ({err}): {}", original.summary),
        pointers: original.pointers.clone(),
        final_status: FinalStatus::Failed,
    }
}

struct Orchestrator<'a> {
    config: &'a RunConfig,
    sandbox_root: &'a Path,
    registry: Registry,
    kb: KnowledgeBase,
    fconfig: FactoryConfig,
    log: EventLog,
    metrics: RunMetrics,
}

impl<'a> Orchestrator<'a> {
    fn new(config: &'a RunConfig, sandbox_root: &'a Path) -> Result<Orchestrator<'a>, RuntimeError> {
        Ok(Orchestrator {
            config,
            sandbox_root,
            registry: build_registry(config)?,
            kb: build_knowledge(config)?,
            fconfig: factory_config(config),
            log: EventLog::new(),
            metrics: RunMetrics::default(),
        })
    }

    /// Instantiate an actor for one subtask, run it against the shared list,
    /// and return the (possibly sanitized) applied conclusion report.
    fn dispatch(
        &mut self,
        spec: &SubtaskSpec,
        list: &mut ProgressList,
        backend: &mut CountingBackend,
    ) -> Result<ConclusionReport, RuntimeError> {
        self.metrics.subtasks_dispatched += 1;
        let persona_backend: Option<&mut dyn Backend> = if self.config.persona_generation {
            Some(backend)
        } else {
            None
        };
        let mut actor = factory::instantiate(
            spec,
            &self.registry,
            &self.kb,
            &self.config.environment,
            persona_backend,
            &self.fconfig,
        )?;
        self.metrics.actors_instantiated += 1;
        self.log.push(LogRecord::ActorInstantiated {
            actor_id: actor.actor_id.clone(),
            task_id: spec.task_id.clone(),
            bundles: actor.blueprint.bundle_names.clone(),
            persona: actor.blueprint.persona.clone(),
        });

        let (report, logged_events) = {
            let mut sink = ListSink {
                list,
                logged: Vec::new(),
            };
            let report = {
                let mut ctx = ToolContext::new(self.sandbox_root.to_path_buf(), &mut sink);
                ctx.web_mode = self.config.web_mode.clone();
                ctx.fixtures_dir = self.config.fixtures_dir.clone();
                actor::run(&mut actor, backend, &mut ctx)
            };
            (report, sink.logged)
        };
        for step in &actor.memory {
            self.log.push(LogRecord::ReactStep {
                actor_id: actor.actor_id.clone(),
                step: step.clone(),
            });
        }
        for event in logged_events {
            self.log.push(LogRecord::Progress { event });
        }
        Ok(report)
    }

    fn apply_conclusion(
        &mut self,
        state: &mut PlannerState,
        task_id: &str,
        report: ConclusionReport,
    ) -> Result<(), RuntimeError> {
        let applied = match planner::evaluate_outcome(state, report.clone()) {
            Ok(()) => report,
            Err(PlannerError::Progress(err)) => {
                let sanitized = sanitize_report(&state.list, task_id, &report, &err);
                planner::evaluate_outcome(state, sanitized.clone())?;
                sanitized
            }
            Err(other) => return Err(other.into()),
        };
        if applied.final_status == FinalStatus::Failed {
            self.metrics.failures_observed += 1;
        }
        self.log.push(LogRecord::ConclusionApplied {
            task_id: task_id.to_string(),
            report: applied,
        });
        Ok(())
    }

    fn finish(
        mut self,
        status: RunStatus,
        answer: Option<String>,
        list: ProgressList,
        backend: &CountingBackend,
    ) -> RunOutcome {
        self.metrics.total_backend_calls = backend.calls;
        self.metrics.fulfilled = status == RunStatus::Fulfilled;
        self.log.push(LogRecord::RunFinished {
            status,
            answer: answer.clone(),
            metrics: self.metrics.clone(),
        });
        RunOutcome {
            status,
            answer,
            metrics: self.metrics,
            log: self.log,
            list,
        }
    }
}

fn run_dynamic(
    config: &RunConfig,
    backend: &mut CountingBackend,
    sandbox_root: &Path,
) -> Result<RunOutcome, RuntimeError> {
    let mut orch = Orchestrator::new(config, sandbox_root)?;
    let list = planner::initialize_plan(&config.goal, backend)?;
    orch.log.push(LogRecord::PlanInitialized {
        goal: config.goal.clone(),
        plan: list.serialize_markdown(),
    });
    let mut state = PlannerState::new(config.goal.clone(), list, config.planner_budget);

    loop {
        if state.iteration >= state.budget {
            let list = state.list.clone();
            return Ok(orch.finish(RunStatus::BudgetExhausted, None, list, backend));
        }
        let decision = match planner::plan_step(&state, backend) {
            Ok(d) => d,
            Err(PlannerError::BudgetExhausted) => {
                let list = state.list.clone();
                return Ok(orch.finish(RunStatus::BudgetExhausted, None, list, backend));
            }
            Err(e) => return Err(e.into()),
        };
        let structural_change = !state.list.structurally_eq(&decision.revised_list);
        if structural_change {
            orch.metrics.replans += 1;
        }
        orch.log.push(LogRecord::PlannerDecision {
            iteration: state.iteration,
            rationale: decision.rationale.clone(),
            action: decision.action.clone(),
            revised: decision.revised_list.serialize_markdown(),
            structural_change,
        });
        state.list = decision.revised_list;

        match decision.action {
            PlannerAction::Dispatch(spec) => {
                let report = orch.dispatch(&spec, &mut state.list, backend)?;
                orch.apply_conclusion(&mut state, &spec.task_id, report)?;
            }
            PlannerAction::Finish { answer } => {
                let status = if state.list.is_fulfilled() {
                    RunStatus::Fulfilled
                } else {
                    RunStatus::Unfulfilled
                };
                return Ok(orch.finish(status, Some(answer), state.list, backend));
            }
            PlannerAction::Abort { reason } => {
                return Ok(orch.finish(RunStatus::Aborted, Some(reason), state.list, backend));
            }
        }
    }
}

/// The ablation mode: plan once, execute the initial pending leaves in
/// document order, and only fold the conclusion reports into the list at the
/// very end. The plan is never revised, so `replans` is always zero.
fn run_static(
    config: &RunConfig,
    backend: &mut CountingBackend,
    sandbox_root: &Path,
) -> Result<RunOutcome, RuntimeError> {
    let mut orch = Orchestrator::new(config, sandbox_root)?;
    let list = planner::initialize_plan(&config.goal, backend)?;
    orch.log.push(LogRecord::PlanInitialized {
        goal: config.goal.clone(),
        plan: list.serialize_markdown(),
    });
    let mut state = PlannerState::new(config.goal.clone(), list, config.planner_budget);

    let specs: Vec<SubtaskSpec> = state
        .list
        .leaves()
        .iter()
        .filter(|l| l.status == TaskStatus::Pending)
        .take(config.planner_budget)
        .map(|l| SubtaskSpec {
            task_id: l.id.clone(),
            description: l.title.clone(),
            completion_criteria: l.completion_criteria.clone(),
            context_pointers: Vec::new(),
        })
        .collect();

    let mut reports = Vec::new();
    for spec in &specs {
        let report = orch.dispatch(spec, &mut state.list, backend)?;
        reports.push(report);
    }
    for (spec, report) in specs.iter().zip(reports) {
        orch.apply_conclusion(&mut state, &spec.task_id, report)?;
    }

    let status = if state.list.is_fulfilled() {
        RunStatus::Fulfilled
    } else {
        RunStatus::Unfulfilled
    };
    Ok(orch.finish(status, None, state.list, backend))
}

/// Drive a full run with an explicit backend (useful for tests and replay
/// harnesses). `sandbox_root` must already exist.
pub fn run_with_backend(
    config: &RunConfig,
    backend: Box<dyn Backend>,
    sandbox_root: &Path,
) -> Result<RunOutcome, RuntimeError> {
    let mut backend = CountingBackend::new(backend);
    match config.mode {
        RunMode::Dynamic => run_dynamic(config, &mut backend, sandbox_root),
        RunMode::StaticBaseline => run_static(config, &mut backend, sandbox_root),
    }
}

/// Build the configured backend and drive a full run.
pub fn run(config: &RunConfig, sandbox_root: &Path) -> Result<RunOutcome, RuntimeError> {
    let backend = config.build_backend()?;
    run_with_backend(config, backend, sandbox_root)
}

/// Result of replaying an event log without any backend.
#[derive(Debug)]
pub struct ReplayOutcome {
    /// Markdown of the reconstructed final list.
    pub final_markdown: String,
    pub status: Option<RunStatus>,
    pub answer: Option<String>,
    /// Metrics recomputed from the records (backend calls come from the
    /// `RunFinished` record, since no backend runs during replay).
    pub metrics: RunMetrics,
    /// Metrics as logged at the end of the original run, if present.
    pub logged_metrics: Option<RunMetrics>,
}

/// Reconstruct the final progress list and metrics from a log alone. The
/// reconstruction is exact: revised plans were logged post-merge and all
/// progress mutations are ordered by sequence number.
pub fn replay(log: &EventLog) -> Result<ReplayOutcome, RuntimeError> {
    let mut list: Option<ProgressList> = None;
    let mut status = None;
    let mut answer = None;
    let mut metrics = RunMetrics::default();
    let mut logged_metrics = None;

    for entry in &log.entries {
        match &entry.record {
            LogRecord::PlanInitialized { goal, plan } => {
                let mut parsed = ProgressList::parse_markdown(plan)?;
                parsed.goal_text = goal.clone();
                list = Some(parsed);
            }
            LogRecord::PlannerDecision {
                revised,
                structural_change,
                ..
            } => {
                let current = list
                    .as_mut()
                    .ok_or_else(|| RuntimeError::Log("decision before plan".into()))?;
                let proposed = ProgressList::parse_markdown(revised)?;
                *current = current.merge_revision(&proposed)?;
                if *structural_change {
                    metrics.replans += 1;
                }
            }
            LogRecord::ActorInstantiated { .. } => {
                metrics.subtasks_dispatched += 1;
                metrics.actors_instantiated += 1;
            }
            LogRecord::ReactStep { .. } => {}
            LogRecord::Progress { event } => {
                list.as_mut()
                    .ok_or_else(|| RuntimeError::Log("event before plan".into()))?
                    .apply_event(event.clone())?;
            }
            LogRecord::ConclusionApplied { report, .. } => {
                if report.final_status == FinalStatus::Failed {
                    metrics.failures_observed += 1;
                }
                list.as_mut()
                    .ok_or_else(|| RuntimeError::Log("conclusion before plan".into()))?
                    .apply_conclusion(report)?;
            }
            LogRecord::RunFinished {
                status: s,
                answer: a,
                metrics: m,
            } => {
                status = Some(*s);
                answer = a.clone();
                logged_metrics = Some(m.clone());
                metrics.total_backend_calls = m.total_backend_calls;
            }
        }
    }

    let list = list.ok_or_else(|| RuntimeError::Log("log contains no plan".into()))?;
    metrics.fulfilled = status == Some(RunStatus::Fulfilled);
    Ok(ReplayOutcome {
        final_markdown: list.serialize_markdown(),
        status,
        answer,
        metrics,
        logged_metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::EchoBackend;
    use crate::progress::DependencyMode;

    const FIVE_LEAF_PLAN: &str = "\
- Objective 1: Prepare
    - [ ] Collect inputs
    - [ ] Validate inputs
- Objective 2: Produce
    - [ ] Draft the result
    - [ ] Review the draft
    - [ ] Publish the result
";

    fn echo_config() -> RunConfig {
        RunConfig {
            goal: "produce a reviewed result".into(),
            backend: BackendConfig {
                kind: BackendKind::Echo,
                initial_plan: Some(FIVE_LEAF_PLAN.into()),
                ..BackendConfig::default()
            },
            persona_generation: false,
            ..RunConfig::default()
        }
    }

    fn run_echo(config: &RunConfig) -> RunOutcome {
        let dir = tempfile::tempdir().unwrap();
        let backend = Box::new(EchoBackend::new(FIVE_LEAF_PLAN, DependencyMode::Strict));
        run_with_backend(config, backend, dir.path()).unwrap()
    }

    fn planner_iterations(log: &EventLog) -> usize {
        log.entries
            .iter()
            .filter(|e| matches!(e.record, LogRecord::PlannerDecision { .. }))
            .count()
    }

    #[test]
    fn echo_run_fulfills_five_leaf_plan_in_six_iterations() {
        let outcome = run_echo(&echo_config());
        assert_eq!(outcome.status, RunStatus::Fulfilled);
        assert_eq!(outcome.metrics.subtasks_dispatched, 5);
        assert_eq!(outcome.metrics.actors_instantiated, 5);
        assert_eq!(outcome.metrics.failures_observed, 0);
        assert_eq!(outcome.metrics.replans, 0);
        assert_eq!(planner_iterations(&outcome.log), 6);
        assert!(outcome.list.is_fulfilled());
        // init + 6 planner steps + 5 one-step actors; no persona calls.
        assert_eq!(outcome.metrics.total_backend_calls, 12);
    }

    #[test]
    fn static_mode_dispatches_document_order_without_replans() {
        let mut config = echo_config();
        config.mode = RunMode::StaticBaseline;
        let outcome = run_echo(&config);
        assert_eq!(outcome.status, RunStatus::Fulfilled);
        assert_eq!(outcome.metrics.replans, 0);
        assert_eq!(outcome.metrics.subtasks_dispatched, 5);
        assert_eq!(planner_iterations(&outcome.log), 0);
    }

    #[test]
    fn replay_reconstructs_final_list_and_metrics() {
        let outcome = run_echo(&echo_config());
        let text = outcome.log.to_jsonl();
        let log = EventLog::from_jsonl(&text).unwrap();
        let replayed = replay(&log).unwrap();
        assert_eq!(replayed.final_markdown, outcome.list.serialize_markdown());
        assert_eq!(replayed.status, Some(outcome.status));
        assert_eq!(replayed.metrics, outcome.metrics);
        assert_eq!(replayed.logged_metrics, Some(outcome.metrics.clone()));
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let mut config = echo_config();
        config.planner_budget = 2;
        let outcome = run_echo(&config);
        assert_eq!(outcome.status, RunStatus::BudgetExhausted);
        assert_eq!(outcome.metrics.subtasks_dispatched, 2);
    }

    #[test]
    fn sanitized_report_on_terminal_target() {
        // A report touching an already-completed task is rejected and
        // replaced by a failure note, not dropped silently.
        let mut list = ProgressList::parse_markdown("- [x] done already\n- [ ] still open\n").unwrap();
        let report = ConclusionReport {
            status_updates: vec![("1".into(), TaskStatus::Failed)],
            summary: "tried to redo".into(),
            pointers: vec![],
            final_status: FinalStatus::Failed,
        };
        let err = list.apply_conclusion(&report).unwrap_err();
        let sanitized = sanitize_report(&list, "1", &report, &err);
        assert!(sanitized.status_updates.is_empty());
        assert!(sanitized.summary.starts_with("report rejected ("));
        assert!(list.apply_conclusion(&sanitized).is_ok());
    }
}
