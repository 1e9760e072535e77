//! On-demand actor assembly: analyze a subtask, pick tool bundles, retrieve
//! knowledge, generate a persona and compose the system prompt.
//!
//! With backend assistance disabled the whole pipeline is a pure function of
//! (subtask, registry, knowledge base, environment), which is what makes
//! actor instantiation testable offline.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actor::{ActorInstance, ACTION_FORMAT};
use crate::llm::{Backend, CompletionRequest, LlmError, Message};
use crate::planner::SubtaskSpec;
use crate::tools::{describe_toolkit, Bundle, Environment, Registry, Toolkit, CORE_BUNDLE};

/// Everything the factory decided for one actor, before execution starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorBlueprint {
    pub persona: String,
    pub bundle_names: Vec<String>,
    pub knowledge: Vec<String>,
    pub environment: Environment,
    pub output_format: String,
    pub composed_prompt: String,
}

/// A tagged snippet store; retrieval is tag-overlap ranking, no embeddings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    pub entries: Vec<KnowledgeEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeEntry {
    pub tags: BTreeSet<String>,
    pub snippet: String,
}

impl KnowledgeBase {
    pub fn add(&mut self, tags: &[&str], snippet: impl Into<String>) {
        self.entries.push(KnowledgeEntry {
            tags: tags.iter().map(|t| t.to_lowercase()).collect(),
            snippet: snippet.into(),
        });
    }

    /// Load every file in a directory. Files start with a front-matter block:
    ///
    /// ```text
    /// ---
    /// tags: travel, planning
    /// ---
    /// snippet body
    /// ```
    pub fn load_dir(path: &Path) -> Result<KnowledgeBase, FactoryError> {
        let mut kb = KnowledgeBase::default();
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| FactoryError::Knowledge(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| FactoryError::Knowledge(format!("{}: {e}", file.display())))?;
            let (tags, body) = parse_front_matter(&text)
                .ok_or_else(|| FactoryError::Knowledge(format!("{}: missing front matter", file.display())))?;
            kb.entries.push(KnowledgeEntry {
                tags,
                snippet: body.trim().to_string(),
            });
        }
        Ok(kb)
    }
}

fn parse_front_matter(text: &str) -> Option<(BTreeSet<String>, String)> {
    let rest = text.strip_prefix("---\n")?;
    let (head, body) = rest.split_once("\n---\n")?;
    let mut tags = BTreeSet::new();
    for line in head.lines() {
        if let Some(list) = line.strip_prefix("tags:") {
            for t in list.split(',') {
                let t = t.trim().to_lowercase();
                if !t.is_empty() {
                    tags.insert(t);
                }
            }
        }
    }
    Some((tags, body.to_string()))
}

#[derive(Debug, Error)]
pub enum FactoryError {
    #[error("no bundle matched the subtask and the fallback bundle is disabled")]
    NoBundleMatched,
    #[error("knowledge base error: {0}")]
    Knowledge(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
}

#[derive(Debug, Clone)]
pub struct FactoryConfig {
    /// Fall back to the `Core` bundle when no trigger keyword matches.
    pub fallback_enabled: bool,
    /// Ask the backend for a persona; otherwise use the deterministic template.
    pub persona_generation: bool,
    /// Maximum knowledge snippets attached to the prompt.
    pub knowledge_limit: usize,
    pub step_limit: usize,
}

impl Default for FactoryConfig {
    fn default() -> FactoryConfig {
        FactoryConfig {
            fallback_enabled: true,
            persona_generation: true,
            knowledge_limit: 3,
            step_limit: 20,
        }
    }
}

/// Deterministic bundle selection: a bundle is chosen iff any of its trigger
/// keywords occurs case-insensitively in the subtask description. Whole
/// bundles only, in registry order.
pub fn select_bundles<'a>(subtask: &SubtaskSpec, registry: &'a Registry) -> Vec<&'a Bundle> {
    let haystack = subtask.description.to_lowercase();
    registry
        .bundles()
        .iter()
        .filter(|b| {
            b.trigger_keywords
                .iter()
                .any(|k| !k.is_empty() && haystack.contains(&k.to_lowercase()))
        })
        .collect()
}

fn keywords(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect()
}

/// Entries whose tags intersect the subtask's keywords, ranked by overlap
/// count, ties broken by entry order, truncated to `limit`.
pub fn retrieve_knowledge(subtask: &SubtaskSpec, kb: &KnowledgeBase, limit: usize) -> Vec<String> {
    let words = keywords(&subtask.description);
    let mut scored: Vec<(usize, usize, &KnowledgeEntry)> = kb
        .entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let overlap = e.tags.intersection(&words).count();
            (overlap > 0).then_some((overlap, i, e))
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored
        .into_iter()
        .take(limit)
        .map(|(_, _, e)| e.snippet.clone())
        .collect()
}

/// Persona aligned with the subtask: backend generated when available,
/// otherwise the deterministic template.
pub fn generate_persona(
    subtask: &SubtaskSpec,
    backend: Option<&mut dyn Backend>,
) -> Result<String, FactoryError> {
    if let Some(backend) = backend {
        let request = CompletionRequest::new(
            "factory",
            vec![
                Message::system(
                    "You write one-sentence professional personas for task-focused agents. \
                     Respond with the persona sentence only.",
                ),
                Message::user(format!(
                    "Write a persona for an agent responsible for: {}",
                    subtask.description
                )),
            ],
        );
        let persona = backend.complete(&request)?;
        let persona = persona.trim();
        if !persona.is_empty() {
            return Ok(persona.to_string());
        }
    }
    Ok(format!("A specialist responsible for: {}", subtask.description))
}

/// Deterministic concatenation of the five prompt sections, in fixed order.
pub fn compose_prompt(
    persona: &str,
    tool_descriptions: &str,
    knowledge: &[String],
    env: &Environment,
    format: &str,
) -> String {
    let mut out = String::new();
    out.push_str("## Persona\n");
    out.push_str(persona);
    out.push_str("\n\n## Tools\n");
    out.push_str(tool_descriptions);
    out.push_str("\n\n## Knowledge\n");
    if knowledge.is_empty() {
        out.push_str("(none)");
    } else {
        out.push_str(&knowledge.join("\n---\n"));
    }
    out.push_str("\n\n## Environment\n");
    if env.is_empty() {
        out.push_str("(none)");
    } else {
        let lines: Vec<String> = env.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        out.push_str(&lines.join("\n"));
    }
    out.push_str("\n\n## Output Format\n");
    out.push_str(format);
    out.push('\n');
    out
}

/// Assemble a purpose-built actor for one subtask: selected bundles plus the
/// system progress tool, retrieved knowledge, persona, composed prompt and a
/// fresh empty memory.
pub fn instantiate(
    subtask: &SubtaskSpec,
    registry: &Registry,
    kb: &KnowledgeBase,
    env: &Environment,
    backend: Option<&mut dyn Backend>,
    config: &FactoryConfig,
) -> Result<ActorInstance, FactoryError> {
    let mut bundles = select_bundles(subtask, registry);
    if bundles.is_empty() {
        if !config.fallback_enabled {
            return Err(FactoryError::NoBundleMatched);
        }
        match registry.bundle(CORE_BUNDLE) {
            Some(core) => bundles.push(core),
            None => return Err(FactoryError::NoBundleMatched),
        }
    }
    let bundle_names: Vec<String> = bundles.iter().map(|b| b.name.clone()).collect();
    let toolkit = Toolkit::from_bundles(&bundles);
    let knowledge = retrieve_knowledge(subtask, kb, config.knowledge_limit);
    let persona = if config.persona_generation {
        generate_persona(subtask, backend)?
    } else {
        generate_persona(subtask, None)?
    };
    let composed_prompt = compose_prompt(
        &persona,
        &describe_toolkit(&toolkit),
        &knowledge,
        env,
        ACTION_FORMAT,
    );
    let blueprint = ActorBlueprint {
        persona,
        bundle_names,
        knowledge,
        environment: env.clone(),
        output_format: ACTION_FORMAT.to_string(),
        composed_prompt,
    };
    Ok(ActorInstance::new(
        format!("actor-{}", subtask.task_id),
        blueprint,
        toolkit,
        subtask.clone(),
        config.step_limit,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::UPDATE_PROGRESS;

    fn subtask(desc: &str) -> SubtaskSpec {
        SubtaskSpec {
            task_id: "2.1".into(),
            description: desc.into(),
            completion_criteria: None,
            context_pointers: vec![],
        }
    }

    fn offline() -> FactoryConfig {
        FactoryConfig {
            persona_generation: false,
            ..FactoryConfig::default()
        }
    }

    #[test]
    fn selects_bundle_by_trigger_keyword() {
        let reg = Registry::with_builtins();
        let names: Vec<&str> = select_bundles(&subtask("search the web for venues"), &reg)
            .iter()
            .map(|b| b.name.as_str())
            .collect();
        assert_eq!(names, ["WebFetch"]);
    }

    #[test]
    fn selects_multiple_bundles_in_registry_order() {
        let reg = Registry::with_builtins();
        let names: Vec<&str> = select_bundles(&subtask("write a file with the web results"), &reg)
            .iter()
            .map(|b| b.name.as_str())
            .collect();
        assert_eq!(names, ["FileSystem", "WebFetch"]);
    }

    #[test]
    fn empty_description_selects_nothing() {
        let reg = Registry::with_builtins();
        assert!(select_bundles(&subtask(""), &reg).is_empty());
    }

    #[test]
    fn instantiate_research_subtask_gets_webfetch_and_progress_tool() {
        let reg = Registry::with_builtins();
        let actor = instantiate(
            &subtask("Research hotel accommodations"),
            &reg,
            &KnowledgeBase::default(),
            &Environment::new(),
            None,
            &offline(),
        )
        .unwrap();
        assert_eq!(actor.blueprint.bundle_names, ["WebFetch"]);
        let names: Vec<&str> = actor.toolkit.tools().iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["http_get", UPDATE_PROGRESS]);
        assert!(actor.memory.is_empty());
    }

    #[test]
    fn fallback_bundle_when_nothing_matches() {
        let reg = Registry::with_builtins();
        let actor = instantiate(
            &subtask("ponder quietly"),
            &reg,
            &KnowledgeBase::default(),
            &Environment::new(),
            None,
            &offline(),
        )
        .unwrap();
        assert_eq!(actor.blueprint.bundle_names, [CORE_BUNDLE]);

        let strict = FactoryConfig {
            fallback_enabled: false,
            ..offline()
        };
        let err = instantiate(
            &subtask("ponder quietly"),
            &reg,
            &KnowledgeBase::default(),
            &Environment::new(),
            None,
            &strict,
        )
        .unwrap_err();
        assert!(matches!(err, FactoryError::NoBundleMatched));
    }

    #[test]
    fn empty_knowledge_base_yields_none_section() {
        let reg = Registry::with_builtins();
        let actor = instantiate(
            &subtask("Research hotel accommodations"),
            &reg,
            &KnowledgeBase::default(),
            &Environment::new(),
            None,
            &offline(),
        )
        .unwrap();
        assert!(actor.prompt.contains("## Knowledge\n(none)"));
    }

    #[test]
    fn knowledge_retrieval_ranks_by_tag_overlap() {
        let mut kb = KnowledgeBase::default();
        kb.add(&["travel"], "bring an adapter");
        kb.add(&["travel", "itinerary"], "group sights by neighborhood");
        kb.add(&["cooking"], "salt early");
        let st = subtask("plan travel itinerary");
        let hits = retrieve_knowledge(&st, &kb, 10);
        assert_eq!(hits, ["group sights by neighborhood", "bring an adapter"]);
        assert!(retrieve_knowledge(&st, &kb, 0).is_empty());
        assert!(retrieve_knowledge(&st, &KnowledgeBase::default(), 5).is_empty());
    }

    #[test]
    fn knowledge_dir_front_matter() {
        let tmp = tempfile::TempDir::new().unwrap();
        std::fs::write(
            tmp.path().join("travel.md"),
            "---\ntags: travel, hotels\n---\nbook refundable rooms\n",
        )
        .unwrap();
        let kb = KnowledgeBase::load_dir(tmp.path()).unwrap();
        assert_eq!(kb.entries.len(), 1);
        assert!(kb.entries[0].tags.contains("hotels"));
        assert_eq!(kb.entries[0].snippet, "book refundable rooms");
    }

    #[test]
    fn compose_prompt_has_five_sections_in_order() {
        let prompt = compose_prompt("P", "(no tools)", &[], &Environment::new(), "schema");
        let idx = |s: &str| prompt.find(s).unwrap();
        assert!(idx("## Persona") < idx("## Tools"));
        assert!(idx("## Tools") < idx("## Knowledge"));
        assert!(idx("## Knowledge") < idx("## Environment"));
        assert!(idx("## Environment") < idx("## Output Format"));
        // Golden stability.
        assert_eq!(
            prompt,
            compose_prompt("P", "(no tools)", &[], &Environment::new(), "schema")
        );
    }

    #[test]
    fn persona_appears_verbatim_in_persona_section() {
        let persona = "An expert travel planner specializing in creating unique and memorable journeys.";
        let prompt = compose_prompt(persona, "(no tools)", &[], &Environment::new(), "schema");
        let section = prompt
            .split("## Tools")
            .next()
            .unwrap();
        assert!(section.contains(persona));
    }

    #[test]
    fn prompt_lists_exactly_the_selected_tools() {
        let reg = Registry::with_builtins();
        let actor = instantiate(
            &subtask("write the web summary to a file"),
            &reg,
            &KnowledgeBase::default(),
            &Environment::new(),
            None,
            &offline(),
        )
        .unwrap();
        let tools_section: &str = actor
            .prompt
            .split("## Tools\n")
            .nth(1)
            .unwrap()
            .split("\n\n## Knowledge")
            .next()
            .unwrap();
        let mut names: Vec<&str> = tools_section
            .lines()
            .map(|l| l.split('(').next().unwrap())
            .collect();
        names.sort();
        assert_eq!(
            names,
            ["Update_Progress", "http_get", "list_dir", "read_file", "write_file"]
        );
        assert!(!tools_section.contains("echo"));
    }

    #[test]
    fn deterministic_instantiation_without_backend() {
        let reg = Registry::with_builtins();
        let kb = KnowledgeBase::default();
        let env = Environment::new();
        let a = instantiate(&subtask("search the web"), &reg, &kb, &env, None, &offline()).unwrap();
        let b = instantiate(&subtask("search the web"), &reg, &kb, &env, None, &offline()).unwrap();
        assert_eq!(a.prompt, b.prompt);
        assert_eq!(a.blueprint, b.blueprint);
    }
}
