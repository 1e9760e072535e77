//! Property suites for the progress-list invariants: round-trip identity,
//! status state-machine legality, dependency gating against a brute-force
//! oracle, and history preservation across revision merges.

use proptest::prelude::*;

use agentloop::progress::{
    is_contingency_of, ConclusionReport, DependencyMode, FinalStatus, ProgressList, TaskNode,
    TaskStatus,
};

fn arb_status() -> impl Strategy<Value = TaskStatus> {
    prop_oneof![
        Just(TaskStatus::Pending),
        Just(TaskStatus::InProgress),
        Just(TaskStatus::Completed),
        Just(TaskStatus::Failed),
        Just(TaskStatus::Cancelled),
    ]
}

#[derive(Debug, Clone)]
struct NodeSpec {
    status: TaskStatus,
    markerless: bool,
    criteria: bool,
    contingency: Option<TaskStatus>,
    children: Vec<NodeSpec>,
}

fn arb_node() -> impl Strategy<Value = NodeSpec> {
    let leaf = (arb_status(), any::<bool>(), proptest::option::of(arb_status())).prop_map(
        |(status, criteria, contingency)| NodeSpec {
            status,
            markerless: false,
            criteria,
            contingency,
            children: Vec::new(),
        },
    );
    leaf.prop_recursive(3, 24, 4, |inner| {
        (
            arb_status(),
            any::<bool>(),
            any::<bool>(),
            prop::collection::vec(inner, 1..4),
        )
            .prop_map(|(status, markerless, criteria, children)| NodeSpec {
                status: if markerless { TaskStatus::Pending } else { status },
                markerless,
                criteria,
                contingency: None,
                children,
            })
    })
}

/// Materialize specs into a list with unique ids. Failed leaves may get a
/// contingency sibling (`<id>b`) right after them.
fn build_list(specs: &[NodeSpec]) -> ProgressList {
    fn build(spec: &NodeSpec, counter: &mut usize, out: &mut Vec<TaskNode>) {
        *counter += 1;
        let id = format!("t{counter}");
        let mut node = TaskNode::new(id.clone(), format!("work item {counter}"));
        node.status = spec.status;
        node.explicit_marker = !spec.markerless;
        if spec.criteria {
            node.completion_criteria = Some(format!("criteria {counter}"));
        }
        for child in &spec.children {
            build(child, counter, &mut node.children);
        }
        let failed_leaf = node.children.is_empty() && node.status == TaskStatus::Failed;
        out.push(node);
        if failed_leaf {
            if let Some(status) = spec.contingency {
                let mut alt = TaskNode::new(format!("{id}b"), format!("recovery for {counter}"));
                alt.status = status;
                alt.explicit_marker = true;
                out.push(alt);
            }
        }
    }
    let mut list = ProgressList::new("property goal");
    let mut counter = 0;
    for spec in specs {
        build(spec, &mut counter, &mut list.roots);
    }
    list
}

fn arb_list() -> impl Strategy<Value = ProgressList> {
    prop::collection::vec(arb_node(), 1..4).prop_map(|specs| build_list(&specs))
}

// ---------------------------------------------------------------------------
// Brute-force dependency oracle, written against the rule as stated: a leaf
// is executable iff it is pending and, for every node on its ancestor path
// (the leaf included), no preceding sibling subtree is both uncleared and
// not skippable as that node's failed predecessor.
// ---------------------------------------------------------------------------

fn oracle_cleared(node: &TaskNode, siblings: &[TaskNode]) -> bool {
    if node.children.is_empty() {
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
            .all(|c| oracle_cleared(c, &node.children))
    }
}

fn oracle_all_leaves_terminal(node: &TaskNode) -> bool {
    if node.children.is_empty() {
        node.status.is_terminal()
    } else {
        node.children.iter().all(oracle_all_leaves_terminal)
    }
}

fn oracle_next(list: &ProgressList, mode: DependencyMode) -> Option<String> {
    fn go(
        siblings: &[TaskNode],
        blocked: bool,
        mode: DependencyMode,
        found: &mut Option<String>,
    ) {
        for (i, node) in siblings.iter().enumerate() {
            let mut node_blocked = blocked;
            if mode == DependencyMode::Strict {
                for prev in &siblings[..i] {
                    let cleared = oracle_cleared(prev, siblings);
                    let skip = is_contingency_of(&node.id, &prev.id)
                        && oracle_all_leaves_terminal(prev);
                    if !cleared && !skip {
                        node_blocked = true;
                    }
                }
            }
            if node.children.is_empty() {
                if found.is_none() && node.status == TaskStatus::Pending && !node_blocked {
                    *found = Some(node.id.clone());
                }
            } else {
                go(&node.children, node_blocked, mode, found);
            }
        }
    }
    let mut found = None;
    go(&list.roots, false, mode, &mut found);
    found
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn round_trip_is_identity(list in arb_list()) {
        let text = list.serialize_markdown();
        let parsed = ProgressList::parse_markdown(&text).unwrap();
        prop_assert!(parsed.structurally_eq(&list));
        prop_assert_eq!(parsed.serialize_markdown(), text);
    }

    #[test]
    fn next_executable_matches_oracle(list in arb_list()) {
        for mode in [DependencyMode::Strict, DependencyMode::Free] {
            let got = list.next_executable(mode).map(|n| n.id.clone());
            let expected = oracle_next(&list, mode);
            prop_assert_eq!(got, expected, "mode {:?}", mode);
        }
    }

    #[test]
    fn transitions_follow_state_machine(from in arb_status(), to in arb_status()) {
        // Independent restatement of the transition table.
        let legal = from == to
            || matches!(from, TaskStatus::Pending)
            || (from == TaskStatus::InProgress
                && matches!(
                    to,
                    TaskStatus::Completed | TaskStatus::Failed | TaskStatus::Cancelled
                ));
        prop_assert_eq!(from.can_transition_to(to), legal);

        // The list enforces the same table through conclusion reports.
        let mut node = TaskNode::new("1", "single");
        node.status = from;
        node.explicit_marker = true;
        let mut list = ProgressList::new("g");
        list.roots.push(node);
        let report = ConclusionReport {
            status_updates: vec![("1".into(), to)],
            summary: "s".into(),
            pointers: vec![],
            final_status: FinalStatus::Completed,
        };
        let before = list.clone();
        match list.apply_conclusion(&report) {
            Ok(()) => {
                prop_assert!(legal);
                prop_assert_eq!(list.find("1").unwrap().status, to);
            }
            Err(_) => {
                prop_assert!(!legal);
                prop_assert_eq!(list, before);
            }
        }
    }

    #[test]
    fn merge_preserves_terminal_history(old in arb_list(), proposed in arb_list()) {
        if let Ok(merged) = old.merge_revision(&proposed) {
            fn terminal_ids(nodes: &[TaskNode], out: &mut Vec<(String, TaskStatus)>) {
                for n in nodes {
                    if n.status.is_terminal() {
                        out.push((n.id.clone(), n.status));
                    }
                    terminal_ids(&n.children, out);
                }
            }
            let mut olds = Vec::new();
            terminal_ids(&old.roots, &mut olds);
            for (id, status) in olds {
                let node = merged.find(&id);
                prop_assert!(node.is_some(), "terminal node {} was lost", id);
                prop_assert_eq!(node.unwrap().status, status, "terminal status of {} changed", id);
            }
        }
    }

    #[test]
    fn fulfilled_requires_all_leaves_terminal(list in arb_list()) {
        if list.is_fulfilled() {
            for leaf in list.leaves() {
                prop_assert!(leaf.status.is_terminal());
            }
        }
        if list
            .leaves()
            .iter()
            .any(|l| matches!(l.status, TaskStatus::Pending | TaskStatus::InProgress))
        {
            prop_assert!(!list.is_fulfilled());
        }
    }
}
