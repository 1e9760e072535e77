//! The dynamic planner: each iteration consumes the goal, the current task
//! list and the outcome history, and produces a revised list plus exactly one
//! tactical action.
//!
//! The backend's reply must carry one fenced ```tasks block (the full revised
//! plan) and one fenced ```json action object. The revised plan is merged
//! through [`ProgressList::merge_revision`], so completed work can never be
//! planned away.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{Backend, CompletionRequest, LlmError, Message, Role};
use crate::progress::{
    ConclusionReport, DependencyMode, FinalStatus, ProgressError, ProgressList, ReferencePointer,
    TaskStatus,
};
use crate::textutil::{extract_fenced, outside_fences};

/// Specification of one dispatched subtask, as seen by the factory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSpec {
    pub task_id: String,
    pub description: String,
    pub completion_criteria: Option<String>,
    /// Artifacts carried over from recent conclusion reports.
    #[serde(default)]
    pub context_pointers: Vec<ReferencePointer>,
}

/// The planner's tactical output for one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannerAction {
    Dispatch(SubtaskSpec),
    Finish { answer: String },
    Abort { reason: String },
}

/// One planner iteration's dual output: strategic revision plus tactical action.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerDecision {
    pub revised_list: ProgressList,
    pub action: PlannerAction,
    pub rationale: String,
}

/// Rolling planner state across the run.
#[derive(Debug, Clone)]
pub struct PlannerState {
    pub goal: String,
    pub list: ProgressList,
    pub history: Vec<ConclusionReport>,
    pub iteration: usize,
    pub budget: usize,
}

impl PlannerState {
    pub fn new(goal: impl Into<String>, list: ProgressList, budget: usize) -> PlannerState {
        PlannerState {
            goal: goal.into(),
            list,
            history: Vec::new(),
            iteration: 0,
            budget,
        }
    }
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("could not parse a plan from the backend: {0}")]
    PlanParseFailure(String),
    #[error("invalid planner decision: {0}")]
    InvalidDecision(String),
    #[error("planner budget exhausted")]
    BudgetExhausted,
    #[error("goal must be non-empty")]
    EmptyGoal,
    #[error(transparent)]
    Progress(#[from] ProgressError),
}

const PLANNER_SYSTEM: &str = "You are the strategic planner of a multi-agent system. \
You maintain a hierarchical Markdown task list and decide one tactical action per turn.";

/// Markdown grammar reminder embedded in planner prompts.
const LIST_GRAMMAR: &str = "Task list format: one item per line, `- ` plus an optional status \
marker `[ ]` pending, `[~]` in progress, `[x]` completed, `[!]` failed, `[-]` cancelled; \
marker-less lines are objective headings; four spaces of indent per level; a task may be \
followed by `> criteria: ...` on the next, deeper-indented line.";

/// How many recent conclusion summaries appear in full in the step prompt;
/// older ones are truncated to a single line.
const HISTORY_WINDOW: usize = 5;

fn init_prompt(goal: &str) -> Vec<Message> {
    vec![
        Message::system(PLANNER_SYSTEM),
        Message::user(format!(
            "Decompose the goal into a structured plan of subtasks.\n\nGoal: {goal}\n\n\
             {LIST_GRAMMAR}\n\nRespond with one fenced ```tasks block containing the plan. \
             Every executable subtask must be a `[ ]` leaf."
        )),
    ]
}

fn one_line(s: &str, cap: usize) -> String {
    let first = s.lines().next().unwrap_or_default();
    let truncated: String = first.chars().take(cap).collect();
    truncated
}

fn step_prompt(state: &PlannerState) -> Vec<Message> {
    let mut history = String::new();
    if state.history.is_empty() {
        history.push_str("(no outcomes yet)\n");
    } else {
        let full_from = state.history.len().saturating_sub(HISTORY_WINDOW);
        for (i, report) in state.history.iter().enumerate() {
            let status = match report.final_status {
                FinalStatus::Completed => "completed",
                FinalStatus::Failed => "FAILED",
            };
            if i < full_from {
                history.push_str(&format!(
                    "- outcome {}: {} - {}\n",
                    i + 1,
                    status,
                    one_line(&report.summary, 80)
                ));
            } else {
                history.push_str(&format!("- outcome {}: {} - {}\n", i + 1, status, report.summary));
                for p in &report.pointers {
                    history.push_str(&format!("  artifact {}: {}\n", p.locator, p.description));
                }
            }
        }
    }
    vec![
        Message::system(PLANNER_SYSTEM),
        Message::user(format!(
            "Goal: {goal}\n\nCurrent task list:\n```tasks\n{list}```\n\nRecent outcomes:\n{history}\n\
             Revise the task list if the outcomes call for it (you may add contingency subtasks), \
             then choose exactly one next action.\n\n{LIST_GRAMMAR}\n\n\
             Respond with one fenced ```tasks block containing the full revised list, followed by \
             one fenced ```json block containing exactly one of:\n\
             {{\"action\": \"dispatch\", \"task_id\": \"...\", \"description\": \"...\", \"completion_criteria\": \"...\"}}\n\
             {{\"action\": \"finish\", \"answer\": \"...\"}}\n\
             {{\"action\": \"abort\", \"reason\": \"...\"}}\n\
             Prose outside the fenced blocks is recorded as your rationale.",
            goal = state.goal,
            list = state.list.serialize_markdown(),
        )),
    ]
}

fn extract_plan_block(text: &str) -> Option<String> {
    extract_fenced(text, &["tasks", "markdown", "md"]).or_else(|| extract_fenced(text, &[""]))
}

/// Ask the backend for an initial plan and parse it; one repair retry with
/// the parse error quoted back.
pub fn initialize_plan(goal: &str, backend: &mut dyn Backend) -> Result<ProgressList, PlannerError> {
    if goal.trim().is_empty() {
        return Err(PlannerError::EmptyGoal);
    }
    let base = init_prompt(goal);
    let response = backend.complete(&CompletionRequest::new("planner", base.clone()))?;
    match parse_plan(&response, goal) {
        Ok(list) => Ok(list),
        Err(first_err) => {
            let mut messages = base;
            messages.push(Message {
                role: Role::Assistant,
                content: response,
            });
            messages.push(Message::user(format!(
                "Your plan could not be parsed: {first_err}. {LIST_GRAMMAR}\n\
                 Respond again with one fenced ```tasks block."
            )));
            let retry = backend.complete(&CompletionRequest::new("planner", messages))?;
            parse_plan(&retry, goal).map_err(PlannerError::PlanParseFailure)
        }
    }
}

fn parse_plan(response: &str, goal: &str) -> Result<ProgressList, String> {
    let text = extract_plan_block(response).unwrap_or_else(|| response.to_string());
    let mut list = ProgressList::parse_markdown(&text).map_err(|e| e.to_string())?;
    if list.roots.is_empty() {
        return Err("plan has no task items".into());
    }
    if !list
        .leaves()
        .iter()
        .any(|l| l.status == TaskStatus::Pending)
    {
        return Err("plan has no pending leaf".into());
    }
    list.goal_text = goal.to_string();
    Ok(list)
}

#[derive(Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
enum ActionWire {
    Dispatch {
        task_id: String,
        #[serde(default)]
        description: Option<String>,
        #[serde(default)]
        completion_criteria: Option<String>,
    },
    Finish {
        answer: String,
    },
    Abort {
        reason: String,
    },
}

/// One planner iteration. The revised list comes back merged against the
/// current one; the decision is validated, with one repair retry on a
/// malformed or invalid reply.
pub fn plan_step(
    state: &PlannerState,
    backend: &mut dyn Backend,
) -> Result<PlannerDecision, PlannerError> {
    if state.iteration >= state.budget {
        return Err(PlannerError::BudgetExhausted);
    }
    let base = step_prompt(state);
    let response = backend.complete(&CompletionRequest::new("planner", base.clone()))?;
    match parse_decision(&response, state) {
        Ok(decision) => Ok(decision),
        Err(first_err) => {
            let mut messages = base;
            messages.push(Message {
                role: Role::Assistant,
                content: response,
            });
            messages.push(Message::user(format!(
                "Your decision was rejected: {first_err}. Respond again with the fenced \
                 ```tasks block and one fenced ```json action object."
            )));
            let retry = backend.complete(&CompletionRequest::new("planner", messages))?;
            parse_decision(&retry, state).map_err(PlannerError::InvalidDecision)
        }
    }
}

fn parse_decision(response: &str, state: &PlannerState) -> Result<PlannerDecision, String> {
    let plan_text =
        extract_plan_block(response).ok_or_else(|| "missing fenced task list".to_string())?;
    let proposed = ProgressList::parse_markdown(&plan_text).map_err(|e| e.to_string())?;
    let revised = state
        .list
        .merge_revision(&proposed)
        .map_err(|e| e.to_string())?;

    let action_text = extract_fenced(response, &["json"])
        .ok_or_else(|| "missing fenced json action".to_string())?;
    let wire: ActionWire =
        serde_json::from_str(action_text.trim()).map_err(|e| format!("bad action object: {e}"))?;
    let action = match wire {
        ActionWire::Dispatch {
            task_id,
            description,
            completion_criteria,
        } => {
            let node = revised.find(&task_id);
            let description = description
                .filter(|d| !d.trim().is_empty())
                .or_else(|| node.map(|n| n.title.clone()))
                .unwrap_or_default();
            let completion_criteria =
                completion_criteria.or_else(|| node.and_then(|n| n.completion_criteria.clone()));
            let context_pointers = state
                .history
                .iter()
                .rev()
                .take(HISTORY_WINDOW)
                .rev()
                .flat_map(|r| r.pointers.iter().cloned())
                .collect();
            PlannerAction::Dispatch(SubtaskSpec {
                task_id,
                description,
                completion_criteria,
                context_pointers,
            })
        }
        ActionWire::Finish { answer } => PlannerAction::Finish { answer },
        ActionWire::Abort { reason } => PlannerAction::Abort { reason },
    };

    let decision = PlannerDecision {
        revised_list: revised,
        action,
        rationale: outside_fences(response),
    };
    validate_decision(&decision).map_err(|e| e.to_string())?;
    Ok(decision)
}

/// Enforce the decision invariants: a dispatch target must exist in the
/// revised list with a non-terminal status; finishing requires every leaf to
/// be terminal (remaining work must have been cancelled in the revision).
pub fn validate_decision(decision: &PlannerDecision) -> Result<(), PlannerError> {
    match &decision.action {
        PlannerAction::Dispatch(spec) => {
            let node = decision.revised_list.find(&spec.task_id).ok_or_else(|| {
                PlannerError::InvalidDecision(format!(
                    "dispatch target `{}` is not in the revised list",
                    spec.task_id
                ))
            })?;
            if !matches!(node.status, TaskStatus::Pending | TaskStatus::InProgress) {
                return Err(PlannerError::InvalidDecision(format!(
                    "dispatch target `{}` has status {:?}",
                    spec.task_id, node.status
                )));
            }
        }
        PlannerAction::Finish { .. } => {
            if let Some(open) = decision
                .revised_list
                .leaves()
                .iter()
                .find(|l| !l.status.is_terminal())
            {
                return Err(PlannerError::InvalidDecision(format!(
                    "cannot finish while leaf `{}` is {:?}",
                    open.id, open.status
                )));
            }
        }
        PlannerAction::Abort { .. } => {}
    }
    Ok(())
}

/// Fold an actor's conclusion into the state: the report is applied to the
/// list, appended to the history, and the iteration counter advances.
pub fn evaluate_outcome(
    state: &mut PlannerState,
    report: ConclusionReport,
) -> Result<(), PlannerError> {
    state.list.apply_conclusion(&report)?;
    state.history.push(report);
    state.iteration += 1;
    Ok(())
}

// ---------------------------------------------------------------------------
// Echoing offline backend
// ---------------------------------------------------------------------------

/// A fully offline, self-driving backend: as planner it echoes the current
/// list and dispatches the next executable leaf (finishing once every leaf is
/// terminal); as actor it finalizes successfully in one step; as factory it
/// returns a fixed persona. Useful for loop-shape tests and dry runs.
pub struct EchoBackend {
    /// Plan returned for the initial decomposition request.
    pub initial_plan: String,
    pub mode: DependencyMode,
}

impl EchoBackend {
    pub fn new(initial_plan: impl Into<String>, mode: DependencyMode) -> EchoBackend {
        EchoBackend {
            initial_plan: initial_plan.into(),
            mode,
        }
    }

    /// Single-leaf default plan derived from the goal.
    pub fn trivial(goal: &str) -> EchoBackend {
        EchoBackend::new(format!("- [ ] {goal}\n"), DependencyMode::Strict)
    }
}

impl Backend for EchoBackend {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError> {
        let user = request.latest_user_message().unwrap_or_default();
        if request.label == "planner" {
            if user.contains("Decompose the goal") {
                return Ok(format!("```tasks\n{}```", self.initial_plan));
            }
            let list_text = extract_fenced(user, &["tasks"])
                .ok_or_else(|| LlmError::Backend("planner prompt carries no task list".into()))?;
            let list = ProgressList::parse_markdown(&list_text)
                .map_err(|e| LlmError::Backend(e.to_string()))?;
            let echoed = list.serialize_markdown();
            let action = if list.leaves().iter().all(|l| l.status.is_terminal()) {
                serde_json::json!({"action": "finish", "answer": "All tasks are complete."})
            } else if let Some(next) = list.next_executable(self.mode) {
                serde_json::json!({
                    "action": "dispatch",
                    "task_id": next.id,
                    "description": next.title,
                    "completion_criteria": next.completion_criteria,
                })
            } else {
                serde_json::json!({"action": "abort", "reason": "no executable task remains"})
            };
            return Ok(format!("```tasks\n{echoed}```\n```json\n{action}\n```"));
        }
        if request.label.starts_with("actor") {
            return Ok(
                r#"{"thought": "criteria met", "final": {"status": "completed", "summary": "Subtask completed.", "pointers": [], "status_updates": []}}"#
                    .into(),
            );
        }
        // factory persona request
        Ok("A focused specialist for the current subtask.".into())
    }
}
