//! Tool and bundle registry plus the built-in tool implementations.
//!
//! Tools are declared as data ([`ToolSpec`]) and grouped into [`Bundle`]s that
//! the factory selects as whole units. Execution is dispatched by name with
//! schema validation; failures are returned as `ERROR:`-prefixed observation
//! text so the ReAct loop can reason about them instead of crashing.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::progress::{EventKind, ProgressEvent};

/// Declared type of one tool parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Boolean,
}

impl ParamType {
    fn matches(self, v: &serde_json::Value) -> bool {
        match self {
            ParamType::String => v.is_string(),
            ParamType::Integer => v.is_i64() || v.is_u64(),
            ParamType::Boolean => v.is_boolean(),
        }
    }

    fn label(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Boolean => "boolean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub param_type: ParamType,
    #[serde(default = "default_true")]
    pub required: bool,
}

fn default_true() -> bool {
    true
}

/// Declaration of one tool: name, description and parameter schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    #[serde(default, rename = "param")]
    pub params: Vec<ParamSpec>,
}

impl ToolSpec {
    fn signature(&self) -> String {
        let parts: Vec<String> = self
            .params
            .iter()
            .map(|p| {
                if p.required {
                    format!("{}: {}", p.name, p.param_type.label())
                } else {
                    format!("{}?: {}", p.name, p.param_type.label())
                }
            })
            .collect();
        parts.join(", ")
    }
}

/// A functionally coherent group of tools, selected as a unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub trigger_keywords: Vec<String>,
    #[serde(default, rename = "tool")]
    pub tools: Vec<ToolSpec>,
}

/// Registry of bundles, immutable after startup.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    bundles: Vec<Bundle>,
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("duplicate bundle name `{0}`")]
    DuplicateBundle(String),
    #[error("duplicate tool name `{0}`")]
    DuplicateTool(String),
    #[error("bundle manifest error: {0}")]
    Manifest(String),
}

impl Registry {
    pub fn new() -> Registry {
        Registry::default()
    }

    /// Registry pre-loaded with the built-in bundles.
    pub fn with_builtins() -> Registry {
        let mut r = Registry::new();
        for b in builtin_bundles() {
            r.register_bundle(b).expect("builtin bundles are disjoint");
        }
        r
    }

    /// Rejects duplicate bundle names and duplicate tool names across bundles.
    pub fn register_bundle(&mut self, bundle: Bundle) -> Result<(), ToolError> {
        if self.bundles.iter().any(|b| b.name == bundle.name) {
            return Err(ToolError::DuplicateBundle(bundle.name));
        }
        for t in &bundle.tools {
            if t.name == UPDATE_PROGRESS || self.tool(&t.name).is_some() {
                return Err(ToolError::DuplicateTool(t.name.clone()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for t in &bundle.tools {
            if !seen.insert(&t.name) {
                return Err(ToolError::DuplicateTool(t.name.clone()));
            }
        }
        self.bundles.push(bundle);
        Ok(())
    }

    /// Load bundles from a TOML manifest file and register them.
    pub fn load_manifest(&mut self, path: &Path) -> Result<(), ToolError> {
        #[derive(Deserialize)]
        struct Manifest {
            #[serde(default, rename = "bundle")]
            bundles: Vec<Bundle>,
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| ToolError::Manifest(format!("{}: {e}", path.display())))?;
        let manifest: Manifest = toml::from_str(&text)
            .map_err(|e| ToolError::Manifest(format!("{}: {e}", path.display())))?;
        for b in manifest.bundles {
            self.register_bundle(b)?;
        }
        Ok(())
    }

    pub fn bundles(&self) -> &[Bundle] {
        &self.bundles
    }

    pub fn bundle(&self, name: &str) -> Option<&Bundle> {
        self.bundles.iter().find(|b| b.name == name)
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.bundles
            .iter()
            .flat_map(|b| &b.tools)
            .find(|t| t.name == name)
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }
}

/// Name of the system-provided progress-reporting tool. It is injected into
/// every toolkit by the factory and never listed in a bundle manifest.
pub const UPDATE_PROGRESS: &str = "Update_Progress";

pub fn update_progress_spec() -> ToolSpec {
    ToolSpec {
        name: UPDATE_PROGRESS.into(),
        description: "Report a milestone, obstacle or status change on the current task".into(),
        params: vec![
            ParamSpec {
                name: "status".into(),
                param_type: ParamType::String,
                required: true,
            },
            ParamSpec {
                name: "message".into(),
                param_type: ParamType::String,
                required: true,
            },
        ],
    }
}

/// Name of the fallback bundle used when no trigger keyword matches.
pub const CORE_BUNDLE: &str = "Core";

/// The built-in bundles. `Core` carries no tools: a fallback actor reasons and
/// reports through `Update_Progress` only. Shell execution is deliberately not
/// part of the defaults.
pub fn builtin_bundles() -> Vec<Bundle> {
    let s = |n: &str, t: ParamType, req: bool| ParamSpec {
        name: n.into(),
        param_type: t,
        required: req,
    };
    vec![
        Bundle {
            name: "FileSystem".into(),
            description: "Read and write files under the sandbox root".into(),
            trigger_keywords: ["file", "document", "write", "read", "save", "directory"]
                .map(String::from)
                .to_vec(),
            tools: vec![
                ToolSpec {
                    name: "read_file".into(),
                    description: "Read a UTF-8 file from the sandbox".into(),
                    params: vec![s("path", ParamType::String, true)],
                },
                ToolSpec {
                    name: "write_file".into(),
                    description: "Write a UTF-8 file inside the sandbox".into(),
                    params: vec![
                        s("path", ParamType::String, true),
                        s("content", ParamType::String, true),
                    ],
                },
                ToolSpec {
                    name: "list_dir".into(),
                    description: "List a sandbox directory".into(),
                    params: vec![s("path", ParamType::String, true)],
                },
            ],
        },
        Bundle {
            name: "WebFetch".into(),
            description: "Fetch web resources over HTTP".into(),
            trigger_keywords: ["web", "search", "research", "http", "url", "fetch", "online"]
                .map(String::from)
                .to_vec(),
            tools: vec![ToolSpec {
                name: "http_get".into(),
                description: "HTTP GET a URL and return the body".into(),
                params: vec![s("url", ParamType::String, true)],
            }],
        },
        Bundle {
            name: "TestTools".into(),
            description: "Trivial tools for exercising the loop".into(),
            trigger_keywords: ["echo", "add", "test"].map(String::from).to_vec(),
            tools: vec![
                ToolSpec {
                    name: "echo".into(),
                    description: "Return the message unchanged".into(),
                    params: vec![s("msg", ParamType::String, true)],
                },
                ToolSpec {
                    name: "add".into(),
                    description: "Add two integers".into(),
                    params: vec![s("a", ParamType::Integer, true), s("b", ParamType::Integer, true)],
                },
            ],
        },
        Bundle {
            name: CORE_BUNDLE.into(),
            description: "Reasoning only, no external tools".into(),
            trigger_keywords: Vec::new(),
            tools: Vec::new(),
        },
    ]
}

/// A resolved toolkit: the union of selected bundles plus `Update_Progress`,
/// in bundle order then tool order.
#[derive(Debug, Clone, Default)]
pub struct Toolkit {
    tools: Vec<ToolSpec>,
}

impl Toolkit {
    pub fn from_bundles(bundles: &[&Bundle]) -> Toolkit {
        let mut tools: Vec<ToolSpec> = bundles.iter().flat_map(|b| b.tools.clone()).collect();
        tools.push(update_progress_spec());
        Toolkit { tools }
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.iter().any(|t| t.name == name)
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }
}

/// One line per tool: `name(signature): description`, in toolkit order.
pub fn describe_toolkit(toolkit: &Toolkit) -> String {
    if toolkit.tools().is_empty() {
        return "(no tools)".into();
    }
    toolkit
        .tools()
        .iter()
        .map(|t| format!("{}({}): {}", t.name, t.signature(), t.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// How `http_get` resolves URLs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WebMode {
    /// Serve fixture files from a directory keyed by sanitized URL.
    #[default]
    Mock,
    /// Live HTTP GET with size and time caps.
    Live,
}

/// Sink receiving `Update_Progress` events as they happen.
pub trait ProgressSink {
    fn record(&mut self, event: ProgressEvent) -> Result<(), String>;
}

/// Collects events in memory; handy for tests.
#[derive(Default)]
pub struct VecSink(pub Vec<ProgressEvent>);

impl ProgressSink for VecSink {
    fn record(&mut self, event: ProgressEvent) -> Result<(), String> {
        self.0.push(event);
        Ok(())
    }
}

/// Everything a tool invocation may touch.
pub struct ToolContext<'a> {
    pub sandbox_root: PathBuf,
    pub web_mode: WebMode,
    pub fixtures_dir: Option<PathBuf>,
    /// Identity stamped onto progress events.
    pub task_id: String,
    pub actor_id: String,
    pub sink: &'a mut dyn ProgressSink,
    /// Cap on live HTTP response bodies, in bytes.
    pub http_max_bytes: u64,
    pub http_timeout_secs: u64,
}

impl<'a> ToolContext<'a> {
    pub fn new(sandbox_root: PathBuf, sink: &'a mut dyn ProgressSink) -> ToolContext<'a> {
        ToolContext {
            sandbox_root,
            web_mode: WebMode::Mock,
            fixtures_dir: None,
            task_id: String::new(),
            actor_id: String::new(),
            sink,
            http_max_bytes: 1 << 20,
            http_timeout_secs: 30,
        }
    }
}

/// Execute one tool. Args are validated against the schema first; any failure
/// is reported as an `ERROR:` observation rather than an error value.
pub fn execute(
    toolkit: &Toolkit,
    name: &str,
    args: &serde_json::Map<String, serde_json::Value>,
    ctx: &mut ToolContext,
) -> String {
    let Some(spec) = toolkit.tool(name) else {
        return format!("ERROR: unknown tool `{name}`");
    };
    if let Err(e) = validate_args(spec, args) {
        return format!("ERROR: {e}");
    }
    let str_arg = |key: &str| args.get(key).and_then(|v| v.as_str()).unwrap_or_default();
    match name {
        "echo" => str_arg("msg").to_string(),
        "add" => {
            let a = args.get("a").and_then(|v| v.as_i64()).unwrap_or(0);
            let b = args.get("b").and_then(|v| v.as_i64()).unwrap_or(0);
            format!("{}", a + b)
        }
        "read_file" => match resolve_sandboxed(&ctx.sandbox_root, str_arg("path")) {
            Ok(p) => match std::fs::read_to_string(&p) {
                Ok(s) => s,
                Err(e) => format!("ERROR: {e}"),
            },
            Err(e) => format!("ERROR: {e}"),
        },
        "write_file" => match resolve_sandboxed(&ctx.sandbox_root, str_arg("path")) {
            Ok(p) => {
                if let Some(parent) = p.parent() {
                    if let Err(e) = std::fs::create_dir_all(parent) {
                        return format!("ERROR: {e}");
                    }
                }
                match std::fs::write(&p, str_arg("content")) {
                    Ok(()) => format!("wrote {} bytes", str_arg("content").len()),
                    Err(e) => format!("ERROR: {e}"),
                }
            }
            Err(e) => format!("ERROR: {e}"),
        },
        "list_dir" => match resolve_sandboxed(&ctx.sandbox_root, str_arg("path")) {
            Ok(p) => match std::fs::read_dir(&p) {
                Ok(rd) => {
                    let mut names: Vec<String> = rd
                        .filter_map(|e| e.ok())
                        .map(|e| e.file_name().to_string_lossy().into_owned())
                        .collect();
                    names.sort();
                    if names.is_empty() {
                        "(empty)".into()
                    } else {
                        names.join("\n")
                    }
                }
                Err(e) => format!("ERROR: {e}"),
            },
            Err(e) => format!("ERROR: {e}"),
        },
        "http_get" => http_get(str_arg("url"), ctx),
        UPDATE_PROGRESS => {
            let Some(kind) = EventKind::parse(str_arg("status")) else {
                return format!(
                    "ERROR: status must be one of milestone, obstacle, status_change; got `{}`",
                    str_arg("status")
                );
            };
            let event = ProgressEvent {
                task_id: ctx.task_id.clone(),
                actor_id: ctx.actor_id.clone(),
                kind,
                message: str_arg("message").to_string(),
                timestamp: 0,
            };
            match ctx.sink.record(event) {
                Ok(()) => "progress recorded".into(),
                Err(e) => format!("ERROR: {e}"),
            }
        }
        other => format!("ERROR: tool `{other}` has no implementation"),
    }
}

fn validate_args(
    spec: &ToolSpec,
    args: &serde_json::Map<String, serde_json::Value>,
) -> Result<(), String> {
    for p in &spec.params {
        match args.get(&p.name) {
            None if p.required => {
                return Err(format!("missing required argument `{}`", p.name));
            }
            Some(v) if !p.param_type.matches(v) => {
                return Err(format!(
                    "argument `{}` must be a {}",
                    p.name,
                    p.param_type.label()
                ));
            }
            _ => {}
        }
    }
    for k in args.keys() {
        if !spec.params.iter().any(|p| &p.name == k) {
            return Err(format!("unexpected argument `{k}`"));
        }
    }
    Ok(())
}

/// Resolve a tool-supplied path strictly under the sandbox root.
///
/// The path is normalized lexically (no component may pop above the root,
/// absolute paths must already live under the root) and, when the target
/// exists, canonicalized to catch symlink escapes.
pub fn resolve_sandboxed(root: &Path, raw: &str) -> Result<PathBuf, String> {
    if raw.is_empty() {
        return Err("path outside sandbox".into());
    }
    let candidate = Path::new(raw);
    let mut depth: i64 = 0;
    let mut normalized = root.to_path_buf();
    let relative = if candidate.is_absolute() {
        candidate
            .strip_prefix(root)
            .map_err(|_| "path outside sandbox".to_string())?
    } else {
        candidate
    };
    for comp in relative.components() {
        match comp {
            Component::Normal(c) => {
                depth += 1;
                normalized.push(c);
            }
            Component::CurDir => {}
            Component::ParentDir => {
                depth -= 1;
                if depth < 0 {
                    return Err("path outside sandbox".into());
                }
                normalized.pop();
            }
            Component::RootDir | Component::Prefix(_) => {
                return Err("path outside sandbox".into());
            }
        }
    }
    // Symlinks can still point out of the root; verify on the deepest
    // existing ancestor.
    let canonical_root = root.canonicalize().map_err(|e| e.to_string())?;
    let mut probe = normalized.clone();
    loop {
        if probe.exists() {
            let real = probe.canonicalize().map_err(|e| e.to_string())?;
            if !real.starts_with(&canonical_root) {
                return Err("path outside sandbox".into());
            }
            break;
        }
        if !probe.pop() || !probe.starts_with(root) {
            break;
        }
    }
    Ok(normalized)
}

/// Stable fixture file name for a URL: non-alphanumeric bytes become `_`.
pub fn fixture_name(url: &str) -> String {
    url.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn http_get(url: &str, ctx: &ToolContext) -> String {
    match ctx.web_mode {
        WebMode::Mock => {
            let Some(dir) = &ctx.fixtures_dir else {
                return "ERROR: mock web mode without a fixtures directory".into();
            };
            let path = dir.join(fixture_name(url));
            match std::fs::read_to_string(&path) {
                Ok(body) => body,
                Err(_) => format!("ERROR: no fixture for url `{url}`"),
            }
        }
        WebMode::Live => {
            let client = match reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(ctx.http_timeout_secs))
                .build()
            {
                Ok(c) => c,
                Err(e) => return format!("ERROR: {e}"),
            };
            match client.get(url).send() {
                Ok(resp) => {
                    if !resp.status().is_success() {
                        return format!("ERROR: http status {}", resp.status());
                    }
                    match resp.text() {
                        Ok(mut body) => {
                            let cap = ctx.http_max_bytes as usize;
                            if body.len() > cap {
                                let mut end = cap;
                                while !body.is_char_boundary(end) {
                                    end -= 1;
                                }
                                body.truncate(end);
                            }
                            body
                        }
                        Err(e) => format!("ERROR: {e}"),
                    }
                }
                Err(e) => format!("ERROR: {e}"),
            }
        }
    }
}

/// Environment key-value context handed to the factory; ordered for
/// deterministic prompt output.
pub type Environment = BTreeMap<String, String>;
