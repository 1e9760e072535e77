//! An orchestration engine for dynamic multi-agent task execution.
//!
//! The core loop pairs a *planner* — which maintains a hierarchical Markdown
//! task list and emits one tactical action per iteration — with an *actor
//! factory* that assembles a specialized ReAct actor for each dispatched
//! subtask. All state flows through a central progress list, and every run
//! writes a structured event log that can be replayed deterministically.
//!
//! Module map:
//! - [`progress`]: the task-list data model, Markdown grammar, status state
//!   machine, dependency gating and revision merging.
//! - [`planner`]: plan initialization, per-iteration revision + action
//!   decisions, and outcome evaluation.
//! - [`factory`]: on-demand actor assembly (persona, tool bundles, knowledge,
//!   environment, output format).
//! - [`actor`]: the bounded ReAct execution loop and conclusion reporting.
//! - [`tools`]: tool specs, bundle registry and the sandboxed executor.
//! - [`llm`]: backend abstraction — live HTTP, scripted, and record/replay.
//! - [`runtime`]: the orchestrator, run configuration, event log and replay.

pub mod actor;
pub mod factory;
pub mod llm;
pub mod planner;
pub mod progress;
pub mod runtime;
mod textutil;
pub mod tools;
