//! The ReAct execution loop: reason, act through a tool, observe, repeat,
//! streaming progress events and terminating with a conclusion report.
//!
//! All failure modes of [`run`] fold into a `Failed` report; tool errors are
//! captured as `ERROR:` observations so the next reasoning phase can react to
//! them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factory::ActorBlueprint;
use crate::llm::{Backend, CompletionRequest, LlmError, Message};
use crate::planner::SubtaskSpec;
use crate::progress::{ConclusionReport, FinalStatus, ReferencePointer, TaskStatus};
use crate::textutil::extract_fenced;
use crate::tools::{self, ToolContext, Toolkit};

/// The action wire schema every actor must follow; referenced by the factory
/// as the Output Format prompt section.
pub const ACTION_FORMAT: &str = r#"Respond with exactly one JSON object per turn (optionally fenced):
  {"thought": "...", "action": {"tool": "<tool name>", "args": {...}}}
or, when the completion criteria are met:
  {"thought": "...", "final": {"status": "completed" | "failed", "summary": "...",
   "pointers": [{"kind": "file|url|record|inline", "locator": "...", "description": "..."}],
   "status_updates": [["<task id>", "completed|failed|cancelled"]]}}
The summary must be non-empty. Use only tools listed above."#;

/// Draft of the final report carried by a `Finalize` action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDraft {
    pub status: FinalStatus,
    pub summary: String,
    #[serde(default)]
    pub pointers: Vec<ReferencePointer>,
    #[serde(default)]
    pub status_updates: Vec<(String, TaskStatus)>,
}

/// One parsed action from the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionRequest {
    Tool {
        tool_name: String,
        arguments: serde_json::Map<String, serde_json::Value>,
    },
    Finalize(ReportDraft),
}

/// One completed loop iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactStep {
    pub index: usize,
    pub thought: String,
    pub action: ActionRequest,
    pub observation: String,
}

/// An assembled, ready-to-run actor.
#[derive(Debug, Clone)]
pub struct ActorInstance {
    pub actor_id: String,
    pub blueprint: ActorBlueprint,
    /// The composed system prompt.
    pub prompt: String,
    pub toolkit: Toolkit,
    pub memory: Vec<ReactStep>,
    pub subtask: SubtaskSpec,
    pub step_limit: usize,
}

impl ActorInstance {
    pub fn new(
        actor_id: String,
        blueprint: ActorBlueprint,
        toolkit: Toolkit,
        subtask: SubtaskSpec,
        step_limit: usize,
    ) -> ActorInstance {
        let prompt = blueprint.composed_prompt.clone();
        ActorInstance {
            actor_id,
            blueprint,
            prompt,
            toolkit,
            memory: Vec::new(),
            subtask,
            step_limit,
        }
    }
}

#[derive(Debug, Error)]
pub enum ActorError {
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("malformed action after repair retry: {0}")]
    MalformedAction(String),
}

#[derive(Deserialize)]
struct TurnWire {
    #[serde(default)]
    thought: Option<String>,
    #[serde(default)]
    action: Option<ActionWire>,
    #[serde(default, rename = "final")]
    final_report: Option<ReportDraft>,
}

#[derive(Deserialize)]
struct ActionWire {
    tool: String,
    #[serde(default)]
    args: serde_json::Map<String, serde_json::Value>,
}

fn parse_turn(text: &str, toolkit: &Toolkit) -> Result<(String, ActionRequest), String> {
    let json_text = extract_fenced(text, &["json", ""]).unwrap_or_else(|| text.trim().to_string());
    let wire: TurnWire = serde_json::from_str(json_text.trim())
        .map_err(|e| format!("not a valid turn object: {e}"))?;
    let thought = wire.thought.unwrap_or_default();
    match (wire.action, wire.final_report) {
        (Some(_), Some(_)) => Err("turn carries both `action` and `final`".into()),
        (None, None) => Err("turn carries neither `action` nor `final`".into()),
        (Some(a), None) => {
            if !toolkit.contains(&a.tool) {
                return Err(format!("unknown tool `{}`", a.tool));
            }
            Ok((
                thought,
                ActionRequest::Tool {
                    tool_name: a.tool,
                    arguments: a.args,
                },
            ))
        }
        (None, Some(draft)) => {
            if draft.summary.trim().is_empty() {
                return Err("final report summary must be non-empty".into());
            }
            Ok((thought, ActionRequest::Finalize(draft)))
        }
    }
}

fn render_task_message(actor: &ActorInstance) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Subtask {}: {}\n",
        actor.subtask.task_id, actor.subtask.description
    ));
    out.push_str(&format!(
        "Completion criteria: {}\n",
        actor
            .subtask
            .completion_criteria
            .as_deref()
            .unwrap_or("(none)")
    ));
    if !actor.subtask.context_pointers.is_empty() {
        out.push_str("Context from prior tasks:\n");
        for p in &actor.subtask.context_pointers {
            out.push_str(&format!("- {:?} {}: {}\n", p.kind, p.locator, p.description));
        }
    }
    if actor.memory.is_empty() {
        out.push_str("\nNo steps taken yet.\n");
    } else {
        out.push_str("\nTranscript so far:\n");
        for step in &actor.memory {
            out.push_str(&format!("Step {} thought: {}\n", step.index, step.thought));
            match &step.action {
                ActionRequest::Tool { tool_name, arguments } => {
                    out.push_str(&format!(
                        "Step {} action: {}({})\n",
                        step.index,
                        tool_name,
                        serde_json::Value::Object(arguments.clone())
                    ));
                }
                ActionRequest::Finalize(_) => {
                    out.push_str(&format!("Step {} action: finalize\n", step.index));
                }
            }
            out.push_str(&format!(
                "Step {} observation: {}\n",
                step.index, step.observation
            ));
        }
    }
    out.push_str("\nProduce the next turn.\n");
    out
}

/// One reasoning step: call the backend with the prompt, subtask and full
/// memory transcript, parse the response into a thought and exactly one
/// action. One repair retry with the parse error quoted back.
pub fn step(
    actor: &ActorInstance,
    backend: &mut dyn Backend,
) -> Result<(String, ActionRequest), ActorError> {
    let label = format!("actor:{}", actor.actor_id);
    let base = vec![
        Message::system(actor.prompt.clone()),
        Message::user(render_task_message(actor)),
    ];
    let response = backend.complete(&CompletionRequest::new(label.clone(), base.clone()))?;
    match parse_turn(&response, &actor.toolkit) {
        Ok(turn) => Ok(turn),
        Err(first_err) => {
            let mut messages = base;
            messages.push(Message {
                role: crate::llm::Role::Assistant,
                content: response,
            });
            messages.push(Message::user(format!(
                "Your last response could not be parsed: {first_err}. \
                 Respond with exactly one JSON object matching the required schema."
            )));
            let retry = backend.complete(&CompletionRequest::new(label, messages))?;
            parse_turn(&retry, &actor.toolkit).map_err(ActorError::MalformedAction)
        }
    }
}

/// Execute a non-terminal action; tool failures come back as `ERROR:` text.
pub fn execute_action(
    action: &ActionRequest,
    toolkit: &Toolkit,
    ctx: &mut ToolContext,
) -> String {
    match action {
        ActionRequest::Tool { tool_name, arguments } => {
            tools::execute(toolkit, tool_name, arguments, ctx)
        }
        ActionRequest::Finalize(_) => "(finalized)".into(),
    }
}

fn failed_report(task_id: &str, summary: String) -> ConclusionReport {
    ConclusionReport {
        status_updates: vec![(task_id.to_string(), TaskStatus::Failed)],
        summary,
        pointers: Vec::new(),
        final_status: FinalStatus::Failed,
    }
}

/// Drive the loop until `Finalize` or the step limit. Every failure mode
/// becomes a `Failed` report; progress events flow to the sink as they
/// happen through the `Update_Progress` tool.
pub fn run(
    actor: &mut ActorInstance,
    backend: &mut dyn Backend,
    ctx: &mut ToolContext,
) -> ConclusionReport {
    ctx.task_id = actor.subtask.task_id.clone();
    ctx.actor_id = actor.actor_id.clone();
    loop {
        if actor.memory.len() >= actor.step_limit {
            return failed_report(
                &actor.subtask.task_id,
                format!(
                    "step limit of {} reached without a final report",
                    actor.step_limit
                ),
            );
        }
        let (thought, action) = match step(actor, backend) {
            Ok(turn) => turn,
            Err(ActorError::MalformedAction(e)) => {
                return failed_report(
                    &actor.subtask.task_id,
                    format!("unrecoverable malformed action: {e}"),
                );
            }
            Err(ActorError::Backend(e)) => {
                return failed_report(&actor.subtask.task_id, format!("backend failure: {e}"));
            }
        };
        let observation = execute_action(&action, &actor.toolkit, ctx);
        let index = actor.memory.len() + 1;
        actor.memory.push(ReactStep {
            index,
            thought,
            action: action.clone(),
            observation,
        });
        if let ActionRequest::Finalize(draft) = action {
            let status_updates = if draft.status_updates.is_empty() {
                let status = match draft.status {
                    FinalStatus::Completed => TaskStatus::Completed,
                    FinalStatus::Failed => TaskStatus::Failed,
                };
                vec![(actor.subtask.task_id.clone(), status)]
            } else {
                draft.status_updates
            };
            return ConclusionReport {
                status_updates,
                summary: draft.summary,
                pointers: draft.pointers,
                final_status: draft.status,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factory::{instantiate, FactoryConfig, KnowledgeBase};
    use crate::llm::{Scenario, ScenarioStep, ScriptedBackend};
    use crate::tools::{Environment, Registry, VecSink};
    use tempfile::TempDir;

    struct Counting<B: Backend> {
        inner: B,
        calls: usize,
    }

    impl<B: Backend> Backend for Counting<B> {
        fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError> {
            self.calls += 1;
            self.inner.complete(request)
        }
    }

    /// Backend returning the same canned text forever.
    struct Constant(String);

    impl Backend for Constant {
        fn complete(&mut self, _request: &CompletionRequest) -> Result<String, LlmError> {
            Ok(self.0.clone())
        }
    }

    fn test_actor(desc: &str, step_limit: usize) -> ActorInstance {
        let reg = Registry::with_builtins();
        let config = FactoryConfig {
            persona_generation: false,
            step_limit,
            ..FactoryConfig::default()
        };
        let spec = SubtaskSpec {
            task_id: "1".into(),
            description: desc.into(),
            completion_criteria: None,
            context_pointers: vec![],
        };
        instantiate(&spec, &reg, &KnowledgeBase::default(), &Environment::new(), None, &config)
            .unwrap()
    }

    fn scripted(steps: Vec<&str>) -> ScriptedBackend {
        ScriptedBackend::new(Scenario {
            strict: false,
            steps: steps
                .into_iter()
                .map(|r| ScenarioStep {
                    label: None,
                    expect: None,
                    response: r.into(),
                })
                .collect(),
        })
    }

    const ECHO_TURN: &str = r#"{"thought": "t1", "action": {"tool": "echo", "args": {"msg": "hi"}}}"#;
    const FINAL_TURN: &str = r#"{"thought": "t2", "final": {"status": "completed", "summary": "done", "pointers": [{"kind": "file", "locator": "out.txt", "description": "result"}]}}"#;

    #[test]
    fn step_parses_thought_and_action() {
        let actor = test_actor("run an echo test", 5);
        let mut backend = scripted(vec![ECHO_TURN]);
        let (thought, action) = step(&actor, &mut backend).unwrap();
        assert_eq!(thought, "t1");
        match action {
            ActionRequest::Tool { tool_name, arguments } => {
                assert_eq!(tool_name, "echo");
                assert_eq!(arguments.get("msg").unwrap(), "hi");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn immediate_finalize_is_terminal_on_first_step() {
        let mut actor = test_actor("run an echo test", 5);
        let mut backend = scripted(vec![FINAL_TURN]);
        let mut sink = VecSink::default();
        let tmp = TempDir::new().unwrap();
        let mut ctx = ToolContext::new(tmp.path().into(), &mut sink);
        let report = run(&mut actor, &mut backend, &mut ctx);
        assert_eq!(report.final_status, FinalStatus::Completed);
        assert_eq!(actor.memory.len(), 1);
    }

    #[test]
    fn unknown_tool_fails_after_one_repair_retry() {
        let actor = test_actor("run an echo test", 5);
        let mut backend = Counting {
            inner: Constant(r#"{"thought": "t", "action": {"tool": "launch_rocket", "args": {}}}"#.into()),
            calls: 0,
        };
        let err = step(&actor, &mut backend).unwrap_err();
        assert!(matches!(err, ActorError::MalformedAction(_)));
        assert_eq!(backend.calls, 2);
    }

    #[test]
    fn repair_retry_recovers_once() {
        let actor = test_actor("run an echo test", 5);
        let mut backend = scripted(vec!["sorry, no json here", ECHO_TURN]);
        let (thought, _) = step(&actor, &mut backend).unwrap();
        assert_eq!(thought, "t1");
    }

    #[test]
    fn run_echo_then_finalize_records_two_steps() {
        let mut actor = test_actor("run an echo test", 5);
        let mut backend = Counting {
            inner: scripted(vec![ECHO_TURN, FINAL_TURN]),
            calls: 0,
        };
        let mut sink = VecSink::default();
        let tmp = TempDir::new().unwrap();
        let mut ctx = ToolContext::new(tmp.path().into(), &mut sink);
        let report = run(&mut actor, &mut backend, &mut ctx);
        assert_eq!(report.final_status, FinalStatus::Completed);
        assert_eq!(report.summary, "done");
        assert_eq!(report.pointers.len(), 1);
        assert_eq!(report.status_updates, vec![("1".into(), TaskStatus::Completed)]);
        assert_eq!(actor.memory.len(), 2);
        assert_eq!(actor.memory[0].observation, "hi");
        assert_eq!(backend.calls, 2);
    }

    #[test]
    fn zero_step_limit_fails_immediately_without_backend_calls() {
        let mut actor = test_actor("run an echo test", 0);
        let mut backend = Counting {
            inner: scripted(vec![]),
            calls: 0,
        };
        let mut sink = VecSink::default();
        let tmp = TempDir::new().unwrap();
        let mut ctx = ToolContext::new(tmp.path().into(), &mut sink);
        let report = run(&mut actor, &mut backend, &mut ctx);
        assert_eq!(report.final_status, FinalStatus::Failed);
        assert!(report.summary.contains("step limit"));
        assert_eq!(backend.calls, 0);
    }

    #[test]
    fn update_progress_streams_to_sink_before_report() {
        let mut actor = test_actor("run an echo test", 5);
        let progress_turn = r#"{"thought": "report", "action": {"tool": "Update_Progress", "args": {"status": "milestone", "message": "halfway"}}}"#;
        let mut backend = scripted(vec![progress_turn, FINAL_TURN]);
        let mut sink = VecSink::default();
        let tmp = TempDir::new().unwrap();
        {
            let mut ctx = ToolContext::new(tmp.path().into(), &mut sink);
            let report = run(&mut actor, &mut backend, &mut ctx);
            assert_eq!(report.final_status, FinalStatus::Completed);
        }
        assert_eq!(sink.0.len(), 1);
        assert_eq!(sink.0[0].message, "halfway");
        assert_eq!(sink.0[0].actor_id, actor.actor_id);
    }

    #[test]
    fn never_finalizing_backend_hits_step_limit_exactly() {
        let limit = 4;
        let mut actor = test_actor("run an echo test", limit);
        let mut backend = Counting {
            inner: Constant(ECHO_TURN.into()),
            calls: 0,
        };
        let mut sink = VecSink::default();
        let tmp = TempDir::new().unwrap();
        let mut ctx = ToolContext::new(tmp.path().into(), &mut sink);
        let report = run(&mut actor, &mut backend, &mut ctx);
        assert_eq!(report.final_status, FinalStatus::Failed);
        assert_eq!(backend.calls, limit);
        assert_eq!(actor.memory.len(), limit);
    }

    #[test]
    fn tool_error_becomes_observation_not_crash() {
        let mut actor = test_actor("read the file", 5);
        let read_missing = r#"{"thought": "t", "action": {"tool": "read_file", "args": {"path": "missing.txt"}}}"#;
        let mut backend = scripted(vec![read_missing, FINAL_TURN]);
        let mut sink = VecSink::default();
        let tmp = TempDir::new().unwrap();
        let mut ctx = ToolContext::new(tmp.path().into(), &mut sink);
        let report = run(&mut actor, &mut backend, &mut ctx);
        assert_eq!(report.final_status, FinalStatus::Completed);
        assert!(actor.memory[0].observation.starts_with("ERROR:"));
    }
}
