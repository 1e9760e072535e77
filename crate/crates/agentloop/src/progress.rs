//! Centralized progress state: a hierarchical task tree shared by the planner
//! and all actors, with a canonical Markdown serialization.
//!
//! The tree is the single source of truth for the run. Mutations go through a
//! small set of operations (`apply_event`, `apply_conclusion`, `merge_revision`)
//! that enforce the status state machine and bump the revision counter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lifecycle status of a task node.
///
/// Transitions: `Pending -> {InProgress, Completed, Failed, Cancelled}`,
/// `InProgress -> {Completed, Failed, Cancelled}`. Terminal states have no
/// outgoing transitions; setting a node to its current status is a no-op.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    InProgress,
    Completed,
    Failed,
    Cancelled,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TaskStatus::Completed | TaskStatus::Failed | TaskStatus::Cancelled
        )
    }

    /// Checkbox marker used in the Markdown form, without brackets.
    pub fn marker(self) -> &'static str {
        match self {
            TaskStatus::Pending => " ",
            TaskStatus::InProgress => "~",
            TaskStatus::Completed => "x",
            TaskStatus::Failed => "!",
            TaskStatus::Cancelled => "-",
        }
    }

    pub fn from_marker(m: &str) -> Option<TaskStatus> {
        match m {
            " " => Some(TaskStatus::Pending),
            "~" => Some(TaskStatus::InProgress),
            "x" => Some(TaskStatus::Completed),
            "!" => Some(TaskStatus::Failed),
            "-" => Some(TaskStatus::Cancelled),
            _ => None,
        }
    }

    /// Whether moving from `self` to `next` is allowed by the state machine.
    pub fn can_transition_to(self, next: TaskStatus) -> bool {
        if self == next {
            return true;
        }
        match self {
            TaskStatus::Pending => true,
            TaskStatus::InProgress => next.is_terminal(),
            _ => false,
        }
    }
}

/// Kind of artifact a reference pointer names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointerKind {
    File,
    Url,
    Record,
    Inline,
}

/// Pointer to an artifact produced during execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferencePointer {
    pub kind: PointerKind,
    pub locator: String,
    pub description: String,
}

/// Category of a mid-task progress update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Milestone,
    Obstacle,
    StatusChange,
}

impl EventKind {
    pub fn parse(s: &str) -> Option<EventKind> {
        match s {
            "milestone" => Some(EventKind::Milestone),
            "obstacle" => Some(EventKind::Obstacle),
            "status_change" => Some(EventKind::StatusChange),
            _ => None,
        }
    }
}

/// A real-time update streamed by an actor against one task.
///
/// `timestamp` is a logical sequence number assigned when the event is applied
/// to the list, never wall clock, so replays are byte identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub task_id: String,
    pub actor_id: String,
    pub kind: EventKind,
    pub message: String,
    #[serde(default)]
    pub timestamp: u64,
}

/// Final status of a concluded subtask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    Completed,
    Failed,
}

/// Standardized task-end payload an actor hands back to the planner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConclusionReport {
    /// Explicit status changes, applied atomically.
    pub status_updates: Vec<(String, TaskStatus)>,
    /// Narrative summary of the outcome. Must be non-empty.
    pub summary: String,
    /// Artifacts produced during the task.
    pub pointers: Vec<ReferencePointer>,
    pub final_status: FinalStatus,
}

/// One node of the hierarchical task tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskNode {
    /// Stable identifier, unique across the tree. Positional ("1.2") unless
    /// an explicit `> id:` line or a planner revision set something else.
    pub id: String,
    pub title: String,
    pub status: TaskStatus,
    /// Whether the node carries a status marker in the Markdown form.
    /// Marker-less lines are internal objective headings; any status mutation
    /// turns the marker on so the status survives serialization.
    pub explicit_marker: bool,
    pub completion_criteria: Option<String>,
    pub children: Vec<TaskNode>,
    pub notes: Vec<ProgressEvent>,
    pub artifacts: Vec<ReferencePointer>,
}

impl TaskNode {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> TaskNode {
        TaskNode {
            id: id.into(),
            title: title.into(),
            status: TaskStatus::Pending,
            explicit_marker: false,
            children: Vec::new(),
            completion_criteria: None,
            notes: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Structural comparison: id, title, status, marker, criteria and children.
    /// Notes, artifacts and list metadata are excluded because they do not
    /// survive the Markdown form.
    pub fn structurally_eq(&self, other: &TaskNode) -> bool {
        self.id == other.id
            && self.title == other.title
            && self.status == other.status
            && self.explicit_marker == other.explicit_marker
            && self.completion_criteria == other.completion_criteria
            && self.children.len() == other.children.len()
            && self
                .children
                .iter()
                .zip(&other.children)
                .all(|(a, b)| a.structurally_eq(b))
    }

    fn leaves(&self) -> Vec<&TaskNode> {
        let mut out = Vec::new();
        collect_leaves(self, &mut out);
        out
    }
}

fn collect_leaves<'a>(node: &'a TaskNode, out: &mut Vec<&'a TaskNode>) {
    if node.is_leaf() {
        out.push(node);
    } else {
        for c in &node.children {
            collect_leaves(c, out);
        }
    }
}

/// Executability ordering between pending sibling subtrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyMode {
    /// Left-to-right: a leaf is executable only when every preceding sibling
    /// subtree (at every level) has been cleared.
    #[default]
    Strict,
    /// Any pending leaf is executable, document order decides ties.
    Free,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProgressError {
    #[error("malformed task list at line {line}: {detail}")]
    MalformedList { line: usize, detail: String },
    #[error("duplicate task id `{0}`")]
    DuplicateId(String),
    #[error("unknown task id `{0}`")]
    UnknownTask(String),
    #[error("illegal status transition on `{task_id}`: {from:?} -> {to:?}")]
    IllegalTransition {
        task_id: String,
        from: TaskStatus,
        to: TaskStatus,
    },
    #[error("invalid conclusion report: {0}")]
    InvalidReport(String),
}

/// The shared hierarchical task list.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProgressList {
    pub roots: Vec<TaskNode>,
    /// Bumped by exactly one on every mutating operation.
    pub revision: u64,
    /// The originating user goal.
    pub goal_text: String,
}

const INDENT: &str = "    ";

impl ProgressList {
    pub fn new(goal: impl Into<String>) -> ProgressList {
        ProgressList {
            roots: Vec::new(),
            revision: 0,
            goal_text: goal.into(),
        }
    }

    /// Parse the canonical Markdown task-list form.
    ///
    /// Grammar per line: `indent* "- " marker? title` with markers
    /// `[x]`, `[ ]`, `[~]`, `[!]`, `[-]`; a marker-less line is an objective
    /// heading. A node may be followed by `> criteria: ...` and `> id: ...`
    /// lines indented one level deeper. Indentation is four spaces per level.
    pub fn parse_markdown(text: &str) -> Result<ProgressList, ProgressError> {
        let mut roots: Vec<TaskNode> = Vec::new();
        // Path of child indices from the roots to the most recent node.
        let mut path: Vec<usize> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let indent_len = raw.len() - raw.trim_start_matches(' ').len();
            let rest = &raw[indent_len..];
            if indent_len % 4 != 0 {
                return Err(ProgressError::MalformedList {
                    line,
                    detail: format!("indentation of {indent_len} spaces is not a multiple of 4"),
                });
            }
            let depth = indent_len / 4;

            if let Some(tail) = rest.strip_prefix("> ") {
                let node = last_node_mut(&mut roots, &path).ok_or_else(|| {
                    ProgressError::MalformedList {
                        line,
                        detail: "metadata line before any task line".into(),
                    }
                })?;
                if depth != path.len() {
                    return Err(ProgressError::MalformedList {
                        line,
                        detail: "metadata line not indented one level under its task".into(),
                    });
                }
                if let Some(c) = tail.strip_prefix("criteria: ") {
                    node.completion_criteria = Some(c.to_string());
                } else if let Some(id) = tail.strip_prefix("id: ") {
                    node.id = id.trim().to_string();
                } else {
                    return Err(ProgressError::MalformedList {
                        line,
                        detail: format!("unrecognized metadata line `> {tail}`"),
                    });
                }
                continue;
            }

            let Some(body) = rest.strip_prefix("- ") else {
                return Err(ProgressError::MalformedList {
                    line,
                    detail: format!("expected `- ` list item, got `{rest}`"),
                });
            };
            if depth > path.len() {
                return Err(ProgressError::MalformedList {
                    line,
                    detail: format!(
                        "indentation jumps to depth {} from depth {}",
                        depth,
                        path.len()
                    ),
                });
            }

            let (status, explicit_marker, title) = if body.starts_with('[') {
                let Some(status) = body.get(1..2).and_then(TaskStatus::from_marker) else {
                    return Err(ProgressError::MalformedList {
                        line,
                        detail: format!("unrecognized status marker in `{body}`"),
                    });
                };
                if body.get(2..4) != Some("] ") {
                    return Err(ProgressError::MalformedList {
                        line,
                        detail: format!("unrecognized status marker in `{body}`"),
                    });
                }
                (status, true, body[4..].to_string())
            } else {
                (TaskStatus::Pending, false, body.to_string())
            };

            let mut node = TaskNode::new(String::new(), title);
            node.status = status;
            node.explicit_marker = explicit_marker;

            path.truncate(depth);
            let siblings = siblings_at_mut(&mut roots, &path);
            siblings.push(node);
            let idx = siblings.len() - 1;
            path.push(idx);
        }

        assign_positional_ids(&mut roots, "");
        let list = ProgressList {
            roots,
            revision: 0,
            goal_text: String::new(),
        };
        list.check_unique_ids()?;
        Ok(list)
    }

    /// Serialize to the canonical Markdown form: four-space indent, one node
    /// per line, `> criteria:` / `> id:` metadata lines one level deeper.
    /// Byte deterministic; an `> id:` line is emitted only when the id differs
    /// from the node's positional default.
    pub fn serialize_markdown(&self) -> String {
        let mut out = String::new();
        for (i, root) in self.roots.iter().enumerate() {
            write_node(&mut out, root, 0, &(i + 1).to_string());
        }
        out
    }

    pub fn structurally_eq(&self, other: &ProgressList) -> bool {
        self.roots.len() == other.roots.len()
            && self
                .roots
                .iter()
                .zip(&other.roots)
                .all(|(a, b)| a.structurally_eq(b))
    }

    pub fn find(&self, id: &str) -> Option<&TaskNode> {
        fn go<'a>(nodes: &'a [TaskNode], id: &str) -> Option<&'a TaskNode> {
            for n in nodes {
                if n.id == id {
                    return Some(n);
                }
                if let Some(hit) = go(&n.children, id) {
                    return Some(hit);
                }
            }
            None
        }
        go(&self.roots, id)
    }

    pub fn find_mut(&mut self, id: &str) -> Option<&mut TaskNode> {
        fn go<'a>(nodes: &'a mut [TaskNode], id: &str) -> Option<&'a mut TaskNode> {
            for n in nodes {
                if n.id == id {
                    return Some(n);
                }
                if let Some(hit) = go(&mut n.children, id) {
                    return Some(hit);
                }
            }
            None
        }
        go(&mut self.roots, id)
    }

    /// All leaves in depth-first document order.
    pub fn leaves(&self) -> Vec<&TaskNode> {
        let mut out = Vec::new();
        for r in &self.roots {
            collect_leaves(r, &mut out);
        }
        out
    }

    /// Append a real-time event to its task's notes. A pending task moves to
    /// in-progress; events against terminal tasks are rejected.
    pub fn apply_event(&mut self, mut event: ProgressEvent) -> Result<(), ProgressError> {
        let node = self
            .find(&event.task_id)
            .ok_or_else(|| ProgressError::UnknownTask(event.task_id.clone()))?;
        if node.status.is_terminal() {
            return Err(ProgressError::IllegalTransition {
                task_id: event.task_id.clone(),
                from: node.status,
                to: TaskStatus::InProgress,
            });
        }
        self.revision += 1;
        event.timestamp = self.revision;
        let node = self.find_mut(&event.task_id).expect("checked above");
        if node.status == TaskStatus::Pending {
            node.status = TaskStatus::InProgress;
            node.explicit_marker = true;
        }
        node.notes.push(event);
        Ok(())
    }

    /// Apply a conclusion report atomically: either every status update is
    /// legal and the whole report lands, or the list is left untouched.
    /// Pointers attach to the first updated node (or the first root when the
    /// report carries no updates), and an audit note recording the summary is
    /// appended to the first root.
    pub fn apply_conclusion(&mut self, report: &ConclusionReport) -> Result<(), ProgressError> {
        if report.summary.trim().is_empty() {
            return Err(ProgressError::InvalidReport("empty summary".into()));
        }
        for (id, status) in &report.status_updates {
            let node = self
                .find(id)
                .ok_or_else(|| ProgressError::UnknownTask(id.clone()))?;
            if !node.status.can_transition_to(*status) {
                return Err(ProgressError::IllegalTransition {
                    task_id: id.clone(),
                    from: node.status,
                    to: *status,
                });
            }
        }

        self.revision += 1;
        let stamp = self.revision;
        for (id, status) in &report.status_updates {
            let node = self.find_mut(id).expect("validated above");
            node.status = *status;
            node.explicit_marker = true;
        }
        let pointer_target = report
            .status_updates
            .first()
            .map(|(id, _)| id.clone())
            .or_else(|| self.roots.first().map(|r| r.id.clone()));
        if let Some(target) = pointer_target {
            if let Some(node) = self.find_mut(&target) {
                node.artifacts.extend(report.pointers.iter().cloned());
            }
        }
        if let Some(root) = self.roots.first_mut() {
            root.notes.push(ProgressEvent {
                task_id: root.id.clone(),
                actor_id: "conclusion".into(),
                kind: EventKind::StatusChange,
                message: report.summary.clone(),
                timestamp: stamp,
            });
        }
        Ok(())
    }

    /// First executable pending leaf in depth-first document order, or `None`.
    ///
    /// In strict mode a leaf is executable only when, at every level of its
    /// ancestor path, each preceding sibling subtree is cleared: all of its
    /// leaves terminal and every failed leaf covered by a completed
    /// contingency sibling. A pending contingency node may run even though the
    /// failed sibling it replaces is not covered yet.
    pub fn next_executable(&self, mode: DependencyMode) -> Option<&TaskNode> {
        let mut found: Option<&TaskNode> = None;
        self.walk_executable(mode, &mut |leaf| {
            if found.is_none() {
                found = Some(leaf);
            }
        });
        found
    }

    fn walk_executable<'a>(&'a self, mode: DependencyMode, visit: &mut dyn FnMut(&'a TaskNode)) {
        fn go<'a>(
            siblings: &'a [TaskNode],
            blocked: bool,
            mode: DependencyMode,
            visit: &mut dyn FnMut(&'a TaskNode),
        ) {
            for (i, node) in siblings.iter().enumerate() {
                let node_blocked = blocked
                    || (mode == DependencyMode::Strict
                        && siblings[..i]
                            .iter()
                            .any(|p| !cleared_among(p, siblings) && !contingency_skip(node, p)));
                if node.is_leaf() {
                    if node.status == TaskStatus::Pending && !node_blocked {
                        visit(node);
                    }
                } else {
                    go(&node.children, node_blocked, mode, visit);
                }
            }
        }
        go(&self.roots, false, mode, visit);
    }

    /// Adopt a proposed tree while protecting history: nodes whose id existed
    /// before keep their old status when it was terminal and carry their notes
    /// and artifacts over; deleted terminal nodes are resurrected as leaves
    /// under their nearest surviving ancestor.
    pub fn merge_revision(&self, proposed: &ProgressList) -> Result<ProgressList, ProgressError> {
        proposed.check_unique_ids()?;
        let mut result = ProgressList {
            roots: proposed.roots.clone(),
            revision: self.revision + 1,
            goal_text: self.goal_text.clone(),
        };

        // Carry status/notes/artifacts over by id.
        fn carry(nodes: &mut [TaskNode], old: &ProgressList) {
            for n in nodes {
                if let Some(prev) = old.find(&n.id) {
                    if prev.status.is_terminal() {
                        n.status = prev.status;
                        n.explicit_marker = true;
                    }
                    n.notes = prev.notes.clone();
                    n.artifacts = prev.artifacts.clone();
                }
                carry(&mut n.children, old);
            }
        }
        carry(&mut result.roots, self);

        // Resurrect deleted terminal nodes under the nearest surviving ancestor.
        // (attach_target_id, node) pairs, collected in old-tree DFS order.
        let mut lost: Vec<(Option<String>, TaskNode)> = Vec::new();
        fn scan(
            nodes: &[TaskNode],
            nearest_surviving: Option<&str>,
            result: &ProgressList,
            lost: &mut Vec<(Option<String>, TaskNode)>,
        ) {
            for n in nodes {
                let survives = result.find(&n.id).is_some();
                let resurrected = !survives && n.status.is_terminal();
                let next_anchor: Option<String> = if survives || resurrected {
                    Some(n.id.clone())
                } else {
                    nearest_surviving.map(|s| s.to_string())
                };
                if resurrected {
                    let mut copy = n.clone();
                    copy.children = Vec::new();
                    copy.explicit_marker = true;
                    lost.push((nearest_surviving.map(|s| s.to_string()), copy));
                }
                scan(&n.children, next_anchor.as_deref(), result, lost);
            }
        }
        scan(&self.roots, None, &result, &mut lost);
        for (anchor, node) in lost {
            match anchor.and_then(|id| result.find_mut(&id)) {
                Some(parent) => parent.children.push(node),
                None => result.roots.push(node),
            }
        }
        Ok(result)
    }

    /// True when every leaf is terminal and every failed leaf is covered by a
    /// completed contingency sibling.
    pub fn is_fulfilled(&self) -> bool {
        self.roots.iter().all(|r| cleared_among(r, &self.roots))
    }

    pub fn check_unique_ids(&self) -> Result<(), ProgressError> {
        let mut seen = std::collections::HashSet::new();
        fn go(
            nodes: &[TaskNode],
            seen: &mut std::collections::HashSet<String>,
        ) -> Result<(), ProgressError> {
            for n in nodes {
                if !seen.insert(n.id.clone()) {
                    return Err(ProgressError::DuplicateId(n.id.clone()));
                }
                go(&n.children, seen)?;
            }
            Ok(())
        }
        go(&self.roots, &mut seen)
    }
}

/// Whether `node` is a contingency replacement for `failed` by id convention:
/// the failed node's id plus an alphabetic suffix, e.g. "2.1" -> "2.1b".
pub fn is_contingency_of(node_id: &str, failed_id: &str) -> bool {
    node_id.len() > failed_id.len()
        && node_id.starts_with(failed_id)
        && node_id[failed_id.len()..].chars().all(|c| c.is_ascii_alphabetic())
}

/// Whether `node` is cleared, judged inside its sibling group: every leaf is
/// terminal, and a failed leaf counts only when a completed contingency
/// sibling covers it. The group matters — a failed leaf's cover lives next to
/// it, not below it.
fn cleared_among(node: &TaskNode, siblings: &[TaskNode]) -> bool {
    if node.is_leaf() {
        match node.status {
            TaskStatus::Completed | TaskStatus::Cancelled => true,
            TaskStatus::Failed => siblings
                .iter()
                .any(|s| is_contingency_of(&s.id, &node.id) && s.status == TaskStatus::Completed),
            _ => false,
        }
    } else {
        node.children
            .iter()
            .all(|c| cleared_among(c, &node.children))
    }
}

/// A pending subtree may run ahead of a preceding failed sibling it replaces.
fn contingency_skip(node: &TaskNode, preceding: &TaskNode) -> bool {
    is_contingency_of(&node.id, &preceding.id)
        && preceding.leaves().iter().all(|l| l.status.is_terminal())
}

fn siblings_at_mut<'a>(roots: &'a mut Vec<TaskNode>, path: &[usize]) -> &'a mut Vec<TaskNode> {
    let mut cur = roots;
    for &i in path {
        cur = &mut cur[i].children;
    }
    cur
}

fn last_node_mut<'a>(roots: &'a mut Vec<TaskNode>, path: &[usize]) -> Option<&'a mut TaskNode> {
    if path.is_empty() {
        return None;
    }
    let mut cur = &mut roots[path[0]];
    for &i in &path[1..] {
        cur = &mut cur.children[i];
    }
    Some(cur)
}

fn assign_positional_ids(nodes: &mut [TaskNode], prefix: &str) {
    for (i, n) in nodes.iter_mut().enumerate() {
        let pos = if prefix.is_empty() {
            format!("{}", i + 1)
        } else {
            format!("{prefix}.{}", i + 1)
        };
        if n.id.is_empty() {
            n.id = pos.clone();
        }
        assign_positional_ids(&mut n.children, &pos);
    }
}

fn write_node(out: &mut String, node: &TaskNode, depth: usize, positional: &str) {
    for _ in 0..depth {
        out.push_str(INDENT);
    }
    out.push_str("- ");
    if node.explicit_marker {
        out.push('[');
        out.push_str(node.status.marker());
        out.push_str("] ");
    }
    out.push_str(&node.title);
    out.push('\n');
    if let Some(c) = &node.completion_criteria {
        for _ in 0..=depth {
            out.push_str(INDENT);
        }
        out.push_str("> criteria: ");
        out.push_str(c);
        out.push('\n');
    }
    if node.id != positional {
        for _ in 0..=depth {
            out.push_str(INDENT);
        }
        out.push_str("> id: ");
        out.push_str(&node.id);
        out.push('\n');
    }
    for (i, c) in node.children.iter().enumerate() {
        write_node(out, c, depth + 1, &format!("{positional}.{}", i + 1));
    }
}
