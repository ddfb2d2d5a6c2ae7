//! Bounded verification over ground nets.
//!
//! Conditions depend on runtime data, so every analysis here treats them as
//! nondeterministic: a transition with ready tokens may always fire.
//! Operation status is abstracted away as well; a token is usable as soon
//! as it arrives. Both abstractions over-approximate what the executor can
//! reach.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::time::{Duration, Instant};

use crate::net::{GroundNet, Hpn, NetError};

/// Limits for state-space exploration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget {
    pub max_markings: usize,
    pub max_time: Duration,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_markings: 1_000_000,
            max_time: Duration::from_secs(10),
        }
    }
}

impl Budget {
    pub fn markings(max_markings: usize) -> Self {
        Budget {
            max_markings,
            ..Budget::default()
        }
    }
}

/// Explored reachability graph. Node 0 is the root marking.
#[derive(Clone, Debug)]
pub struct ReachabilityGraph {
    pub nodes: Vec<Vec<u32>>,
    /// (from node, ground transition, to node), in discovery order.
    pub edges: Vec<(usize, usize, usize)>,
    /// Set iff the budget was exhausted before the frontier emptied.
    pub truncated: bool,
    parents: Vec<Option<(usize, usize)>>,
}

impl ReachabilityGraph {
    pub fn root(&self) -> &[u32] {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.0 == node).count()
    }

    /// Firing sequence (ground transition indices) from the root to `node`
    /// along the BFS tree, i.e. a shortest witness.
    pub fn path_to(&self, node: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = node;
        while let Some((parent, t)) = self.parents[cur] {
            path.push(t);
            cur = parent;
        }
        path.reverse();
        path
    }
}

/// Breadth-first exploration of every marking reachable from `initial`.
pub fn explore(ground: &GroundNet, initial: &[u32], budget: Budget) -> ReachabilityGraph {
    explore_until(ground, initial, budget, |_| false).0
}

/// BFS that stops early when `stop` accepts a newly discovered marking.
/// Returns the graph and the index of the stopping node, if any.
fn explore_until(
    ground: &GroundNet,
    initial: &[u32],
    budget: Budget,
    mut stop: impl FnMut(&[u32]) -> bool,
) -> (ReachabilityGraph, Option<usize>) {
    let started = Instant::now();
    let mut graph = ReachabilityGraph {
        nodes: vec![initial.to_vec()],
        edges: Vec::new(),
        truncated: false,
        parents: vec![None],
    };
    if stop(initial) {
        return (graph, Some(0));
    }
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
    index.insert(initial.to_vec(), 0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        if started.elapsed() > budget.max_time {
            graph.truncated = true;
            break;
        }
        for t in 0..ground.transitions.len() {
            if !ground.structurally_enabled(&graph.nodes[node], t) {
                continue;
            }
            let mut next = graph.nodes[node].clone();
            ground.fire_tokens(&mut next, t);
            let target = match index.get(&next) {
                Some(&existing) => existing,
                None => {
                    if graph.nodes.len() >= budget.max_markings {
                        graph.truncated = true;
                        return (graph, None);
                    }
                    let id = graph.nodes.len();
                    let hit = stop(&next);
                    index.insert(next.clone(), id);
                    graph.nodes.push(next);
                    graph.parents.push(Some((node, t)));
                    graph.edges.push((node, t, id));
                    if hit {
                        return (graph, Some(id));
                    }
                    queue.push_back(id);
                    continue;
                }
            };
            graph.edges.push((node, t, target));
        }
    }
    (graph, None)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Safeness {
    Safe {
        markings: usize,
    },
    /// `witness` is a ground-transition firing sequence from the initial
    /// marking to one that puts two or more tokens into `place`.
    Unsafe {
        place: usize,
        witness: Vec<usize>,
    },
    /// Budget exhausted before a verdict was reached.
    Unknown {
        explored: usize,
    },
}

impl Safeness {
    pub fn is_safe(&self) -> bool {
        matches!(self, Safeness::Safe { .. })
    }
}

pub fn is_safe(ground: &GroundNet, initial: &[u32], budget: Budget) -> Safeness {
    if let Some(place) = initial.iter().position(|&c| c > 1) {
        return Safeness::Unsafe {
            place,
            witness: Vec::new(),
        };
    }
    let (graph, hit) = explore_until(ground, initial, budget, |m| m.iter().any(|&c| c > 1));
    match hit {
        Some(node) => Safeness::Unsafe {
            place: graph.nodes[node].iter().position(|&c| c > 1).unwrap(),
            witness: graph.path_to(node),
        },
        None if graph.truncated => Safeness::Unknown { explored: graph.len() },
        None => Safeness::Safe { markings: graph.len() },
    }
}

/// Declared terminal markings: every listed place holds at least one token.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TerminalPattern {
    pub places: Vec<usize>,
}

impl TerminalPattern {
    pub fn none() -> Self {
        TerminalPattern::default()
    }

    /// The ground net's final place, when it has one.
    pub fn final_place(ground: &GroundNet) -> Self {
        TerminalPattern {
            places: ground.final_place.into_iter().collect(),
        }
    }

    pub fn matches(&self, marking: &[u32]) -> bool {
        !self.places.is_empty() && self.places.iter().all(|&p| marking[p] > 0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DeadlockVerdict {
    /// Dead markings that are not terminal, as graph node indices.
    Found(Vec<usize>),
    None,
    /// The graph was truncated; absence of deadlocks cannot be claimed.
    Unknown,
}

pub fn find_deadlocks(graph: &ReachabilityGraph, terminal: &TerminalPattern) -> DeadlockVerdict {
    let mut has_out = vec![false; graph.len()];
    for &(from, _, _) in &graph.edges {
        has_out[from] = true;
    }
    let dead: Vec<usize> = (0..graph.len())
        .filter(|&n| !has_out[n] && !terminal.matches(&graph.nodes[n]))
        .collect();
    if graph.truncated {
        // Nodes on the frontier have no edges yet; only a verdict-free answer is honest.
        return DeadlockVerdict::Unknown;
    }
    if dead.is_empty() {
        DeadlockVerdict::None
    } else {
        DeadlockVerdict::Found(dead)
    }
}

/// One entry of a structured analysis report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub class: ViolationClass,
    pub path: String,
    pub witness: Vec<String>,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationClass {
    MalformedPage,
    Unsafe,
    Deadlock,
    Unknown,
}

impl fmt::Display for ViolationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationClass::MalformedPage => "malformed-page",
            ViolationClass::Unsafe => "unsafe",
            ViolationClass::Deadlock => "deadlock",
            ViolationClass::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Report {
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::from("hpn-report 1\n");
        for note in &self.notes {
            out.push_str(&format!("note {note}\n"));
        }
        for v in &self.violations {
            out.push_str(&format!("violation {} path={}", v.class, v.path));
            if !v.witness.is_empty() {
                out.push_str(&format!(" witness={}", v.witness.join(",")));
            }
            if !v.detail.is_empty() {
                out.push_str(&format!(" detail=\"{}\"", v.detail));
            }
            out.push('\n');
        }
        out.push_str(&format!("summary violations={}\n", self.violations.len()));
        out
    }
}

/// Lists every page violating the one-input/one-output rule.
pub fn check_pages(hpn: &Hpn) -> Result<Report, NetError> {
    let mut report = Report::default();
    for err in hpn.malformed_pages()? {
        if let NetError::MalformedPage {
            page, inputs, outputs, ..
        } = err
        {
            report.violations.push(Violation {
                class: ViolationClass::MalformedPage,
                path: page,
                witness: Vec::new(),
                detail: format!("inputs={inputs} outputs={outputs}"),
            });
        }
    }
    Ok(report)
}

/// Page check and safeness: the gate run before executing a net.
pub fn preflight(hpn: &Hpn, budget: Budget) -> Result<Report, NetError> {
    let mut report = check_pages(hpn)?;
    if !report.is_clean() {
        return Ok(report);
    }
    let ground = hpn.flatten()?;
    let initial = ground.initial_tokens();
    let names = |w: &[usize]| -> Vec<String> { w.iter().map(|&t| ground.transitions[t].name.clone()).collect() };
    match is_safe(&ground, &initial, budget) {
        Safeness::Safe { markings } => report.notes.push(format!("safe markings={markings}")),
        Safeness::Unsafe { place, witness } => report.violations.push(Violation {
            class: ViolationClass::Unsafe,
            path: ground.places[place].name.clone(),
            witness: names(&witness),
            detail: String::new(),
        }),
        Safeness::Unknown { explored } => report.violations.push(Violation {
            class: ViolationClass::Unknown,
            path: String::from("-"),
            witness: Vec::new(),
            detail: format!("budget exhausted after {explored} markings"),
        }),
    }
    Ok(report)
}

/// Page check, safeness and deadlock detection in one report.
pub fn analyze(hpn: &Hpn, budget: Budget) -> Result<Report, NetError> {
    let mut report = preflight(hpn, budget)?;
    if !report.is_clean() {
        return Ok(report);
    }
    let ground = hpn.flatten()?;
    let initial = ground.initial_tokens();
    let names = |w: &[usize]| -> Vec<String> { w.iter().map(|&t| ground.transitions[t].name.clone()).collect() };
    let graph = explore(&ground, &initial, budget);
    match find_deadlocks(&graph, &TerminalPattern::final_place(&ground)) {
        DeadlockVerdict::None => report.notes.push(String::from("deadlock-free")),
        DeadlockVerdict::Unknown => report.violations.push(Violation {
            class: ViolationClass::Unknown,
            path: String::from("-"),
            witness: Vec::new(),
            detail: String::from("graph truncated"),
        }),
        DeadlockVerdict::Found(nodes) => {
            for node in nodes {
                let marked: Vec<String> = graph.nodes[node]
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(p, _)| ground.places[p].name.clone())
                    .collect();
                report.violations.push(Violation {
                    class: ViolationClass::Deadlock,
                    path: marked.join("+"),
                    witness: names(&graph.path_to(node)),
                    detail: String::new(),
                });
            }
        }
    }
    Ok(report)
}
