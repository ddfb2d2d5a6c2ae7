//! Generators and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use hpn_core::agent::UserFunctions;
use hpn_core::builder::{AgentSpec, BehaviourSpec, BehaviourSwitch, SubsystemKind, SubsystemSpec, SystemSpec};
use hpn_core::comm::{CommModel, Composition, Endpoint};
use hpn_core::exec::{EventKind, Trace};
use hpn_core::net::{GroundPlace, GroundTransition};
use hpn_core::{Condition, GroundNet, Hpn, NetId, Node, PlaceId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random flat net with `places` places and arc weights 1 or 2.
pub fn random_ground(seed: u64, places: usize) -> GroundNet {
    let mut r = rng(seed);
    let n_t = r.random_range(1..=places + 2);
    let ps = (0..places)
        .map(|i| GroundPlace {
            name: format!("p{i}"),
            operation: None,
            initial: u32::from(r.random_bool(0.35)),
            members: vec![format!("r/p{i}")],
            fusion: None,
        })
        .collect();
    let pick = |r: &mut ChaCha8Rng, max: usize| -> Vec<(usize, u32)> {
        let k = r.random_range(0..=max.min(places));
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < k {
            let p = r.random_range(0..places);
            if !chosen.contains(&p) {
                chosen.push(p);
            }
        }
        chosen
            .into_iter()
            .map(|p| (p, if r.random_bool(0.1) { 2 } else { 1 }))
            .collect()
    };
    let ts = (0..n_t)
        .map(|i| {
            let mut inputs = pick(&mut r, 2);
            if inputs.is_empty() && r.random_bool(0.7) {
                inputs.push((r.random_range(0..places), 1));
            }
            GroundTransition {
                name: format!("r/t{i}"),
                condition: Condition::True,
                inputs,
                outputs: pick(&mut r, 2),
            }
        })
        .collect();
    GroundNet::from_parts(ps, ts, None)
}

pub enum Naive {
    Unsafe,
    Safe(HashSet<Vec<u32>>),
}

fn enabled(net: &GroundNet, m: &[u32], t: usize) -> bool {
    net.transitions[t].inputs.iter().all(|&(p, w)| m[p] >= w)
}

fn fire(net: &GroundNet, m: &[u32], t: usize) -> Vec<u32> {
    let mut next = m.to_vec();
    for &(p, w) in &net.transitions[t].inputs {
        next[p] -= w;
    }
    for &(p, w) in &net.transitions[t].outputs {
        next[p] += w;
    }
    next
}

/// Depth-first enumeration that stops at the first marking with a place
/// holding two or more tokens.
pub fn naive_safeness(net: &GroundNet, initial: &[u32]) -> Naive {
    let mut seen = HashSet::new();
    let mut stack = vec![initial.to_vec()];
    while let Some(m) = stack.pop() {
        if m.iter().any(|&c| c > 1) {
            return Naive::Unsafe;
        }
        if !seen.insert(m.clone()) {
            continue;
        }
        for t in 0..net.transitions.len() {
            if enabled(net, &m, t) {
                stack.push(fire(net, &m, t));
            }
        }
    }
    Naive::Safe(seen)
}

/// Every reachable marking, or `None` once more than `cap` are found.
pub fn naive_reachable(net: &GroundNet, initial: &[u32], cap: usize) -> Option<HashSet<Vec<u32>>> {
    let mut seen = HashSet::new();
    let mut stack = vec![initial.to_vec()];
    while let Some(m) = stack.pop() {
        if seen.contains(&m) {
            continue;
        }
        if seen.len() >= cap {
            return None;
        }
        for t in 0..net.transitions.len() {
            if enabled(net, &m, t) {
                stack.push(fire(net, &m, t));
            }
        }
        seen.insert(m);
    }
    Some(seen)
}

/// Random hierarchy: a root net, up to three child nets used as pages (one
/// possibly nested), random arcs and optional fusion groups.
pub fn random_hpn(seed: u64, max_places: usize) -> Hpn {
    let mut r = rng(seed);
    let mut h = Hpn::new("r").unwrap();
    let root = h.root();
    let mut budget = max_places;
    let mut nets: Vec<NetId> = vec![root];

    let root_places = r.random_range(1..=3.min(budget));
    budget -= root_places;
    for i in 0..root_places {
        let p = h.net_mut(root).add_place(&format!("p{i}"), None).unwrap();
        h.net_mut(root).set_initial(p, u32::from(i == 0 || r.random_bool(0.3)));
    }

    let children = r.random_range(0..=3);
    for c in 0..children {
        if budget == 0 {
            break;
        }
        let parent = if c > 0 && r.random_bool(0.3) {
            nets[r.random_range(1..nets.len())]
        } else {
            root
        };
        let net = h.add_net(&format!("n{c}")).unwrap();
        let k = r.random_range(1..=3.min(budget));
        budget -= k;
        for i in 0..k {
            h.net_mut(net).add_place(&format!("q{i}"), None).unwrap();
        }
        h.net_mut(net).set_input(PlaceId(0));
        h.net_mut(net).set_output(PlaceId(k as u32 - 1));
        if r.random_bool(0.2) {
            h.net_mut(net).set_initial(PlaceId(0), 1);
        }
        h.net_mut(parent).add_page(&format!("g{c}"), net).unwrap();
        nets.push(net);
    }

    for &net in &nets {
        let n_t = r.random_range(if net == root { 1..=4 } else { 0..=2 });
        for i in 0..n_t {
            let t = h.net_mut(net).add_transition(&format!("t{i}"), None).unwrap();
            let nodes: Vec<Node> = {
                let g = h.net(net);
                g.place_ids()
                    .map(Node::Place)
                    .chain((0..g.pages().len()).map(|i| Node::Page(hpn_core::PageId(i as u32))))
                    .collect()
            };
            for _ in 0..r.random_range(1..=2) {
                let n = nodes[r.random_range(0..nodes.len())];
                let _ = h.net_mut(net).connect(n, t);
            }
            for _ in 0..r.random_range(1..=2) {
                let n = nodes[r.random_range(0..nodes.len())];
                let _ = h.net_mut(net).connect(t, n);
            }
        }
    }

    if nets.len() > 1 && r.random_bool(0.6) {
        let all: Vec<(NetId, PlaceId)> = nets
            .iter()
            .flat_map(|&n| h.net(n).place_ids().map(move |p| (n, p)))
            .collect();
        let a = all[r.random_range(0..all.len())];
        let b = all[r.random_range(0..all.len())];
        if a != b {
            let init = h.net(a.0).place(a.1).initial;
            h.net_mut(b.0).set_initial(b.1, init);
            h.fuse("f0", &[a, b]).unwrap();
        }
    }
    h
}

/// Interpreter that runs directly on the hierarchy: places of page nets are
/// addressed through their page path, fused places share one counter, and
/// arcs touching a page are resolved when a transition is examined.
pub struct HierSim<'a> {
    hpn: &'a Hpn,
    /// (net, page path) for every net instance reachable from the root.
    instances: Vec<(NetId, String)>,
    /// (net, transition index, path name).
    transitions: Vec<(NetId, usize, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Counter {
    Local(usize, u32),
    Fused(String),
}

impl<'a> HierSim<'a> {
    pub fn new(hpn: &'a Hpn) -> Self {
        let mut instances = Vec::new();
        let mut stack = vec![(hpn.root(), hpn.net(hpn.root()).name().to_string())];
        while let Some((net, path)) = stack.pop() {
            let g = hpn.net(net);
            for page in g.pages().iter().rev() {
                stack.push((page.inner, format!("{path}/{}", page.name)));
            }
            instances.push((net, path));
        }
        let transitions = instances
            .iter()
            .flat_map(|(net, path)| {
                hpn.net(*net)
                    .transitions()
                    .iter()
                    .enumerate()
                    .map(move |(i, t)| (*net, i, format!("{path}/{}", t.name)))
            })
            .collect();
        HierSim {
            hpn,
            instances,
            transitions,
        }
    }

    fn counter(&self, net: NetId, place: PlaceId) -> Counter {
        match self.hpn.fusion_of(net, place) {
            Some(g) => Counter::Fused(self.hpn.fusions()[g].name.clone()),
            None => Counter::Local(net.index(), place.0),
        }
    }

    fn resolve(&self, net: NetId, node: Node, entering: bool) -> Counter {
        match node {
            Node::Place(p) => self.counter(net, p),
            Node::Page(g) => {
                let inner = self.hpn.net(net).page(g).inner;
                let places = self.hpn.net(inner).places();
                let idx = places
                    .iter()
                    .position(|p| if entering { p.is_input } else { p.is_output })
                    .expect("well-formed page");
                self.counter(inner, PlaceId(idx as u32))
            }
            Node::Transition(_) => unreachable!(),
        }
    }

    pub fn initial(&self) -> BTreeMap<Counter, u32> {
        let mut m = BTreeMap::new();
        for (net, _) in &self.instances {
            for p in self.hpn.net(*net).place_ids() {
                let c = self.counter(*net, p);
                let init = self.hpn.net(*net).place(p).initial;
                let e = m.entry(c).or_insert(0);
                *e = (*e).max(init);
            }
        }
        m
    }

    /// Token count seen through a member path such as `r/g0/q1`.
    pub fn observe(&self, m: &BTreeMap<Counter, u32>, path: &str) -> Option<u32> {
        for (net, prefix) in &self.instances {
            for (i, p) in self.hpn.net(*net).places().iter().enumerate() {
                if format!("{prefix}/{}", p.name) == path {
                    return m.get(&self.counter(*net, PlaceId(i as u32))).copied();
                }
            }
        }
        None
    }

    fn delta(&self, t: usize) -> (BTreeMap<Counter, u32>, BTreeMap<Counter, u32>) {
        let (net, ti, _) = &self.transitions[t];
        let g = self.hpn.net(*net);
        let me = Node::Transition(hpn_core::TransitionId(*ti as u32));
        let (mut take, mut give) = (BTreeMap::new(), BTreeMap::new());
        for a in g.arcs() {
            if a.target == me {
                *take.entry(self.resolve(*net, a.source, false)).or_insert(0) += 1;
            }
            if a.source == me {
                *give.entry(self.resolve(*net, a.target, true)).or_insert(0) += 1;
            }
        }
        (take, give)
    }

    pub fn enabled(&self, m: &BTreeMap<Counter, u32>) -> Vec<usize> {
        (0..self.transitions.len())
            .filter(|&t| {
                self.delta(t)
                    .0
                    .iter()
                    .all(|(c, w)| m.get(c).copied().unwrap_or(0) >= *w)
            })
            .collect()
    }

    pub fn fire(&self, m: &mut BTreeMap<Counter, u32>, t: usize) {
        let (take, give) = self.delta(t);
        for (c, w) in take {
            *m.get_mut(&c).unwrap() -= w;
        }
        for (c, w) in give {
            *m.entry(c).or_insert(0) += w;
        }
    }

    pub fn name(&self, t: usize) -> &str {
        &self.transitions[t].2
    }

    /// All firing sequences (as transition names) of length ≤ `depth`.
    pub fn language(&self, depth: usize) -> BTreeSet<Vec<String>> {
        let mut out = BTreeSet::new();
        let mut stack = vec![(self.initial(), Vec::<String>::new())];
        while let Some((m, seq)) = stack.pop() {
            if seq.len() < depth {
                for t in self.enabled(&m) {
                    let mut next = m.clone();
                    self.fire(&mut next, t);
                    let mut s = seq.clone();
                    s.push(self.name(t).to_string());
                    stack.push((next, s));
                }
            }
            out.insert(seq);
        }
        out
    }
}

/// Firing sequences of the ground net up to `depth`.
pub fn ground_language(net: &GroundNet, depth: usize) -> BTreeSet<Vec<String>> {
    let mut out = BTreeSet::new();
    let mut stack = vec![(net.initial_tokens(), Vec::<String>::new())];
    while let Some((m, seq)) = stack.pop() {
        if seq.len() < depth {
            for t in 0..net.transitions.len() {
                if net.structurally_enabled(&m, t) {
                    let mut next = m.clone();
                    net.fire_tokens(&mut next, t);
                    let mut s = seq.clone();
                    s.push(net.transitions[t].name.clone());
                    stack.push((next, s));
                }
            }
        }
        out.insert(seq);
    }
    out
}

/// Two subsystems `a.c` (producer) and `a.e` (consumer), one channel.
pub fn two_subsystems(model: CommModel, producer_cond: &str, consumer_cond: &str) -> SystemSpec {
    let mut spec = SystemSpec {
        agents: vec![AgentSpec {
            name: "a".into(),
            subsystems: vec![
                SubsystemSpec::single(
                    "c",
                    SubsystemKind::Control,
                    BehaviourSpec::new("main", "produce").with_terminal(producer_cond),
                ),
                SubsystemSpec::single(
                    "e",
                    SubsystemKind::Effector,
                    BehaviourSpec::new("main", "consume").with_terminal(consumer_cond),
                ),
            ],
        }],
    };
    spec.connect(
        &Endpoint::new("a", "c", "main"),
        &Endpoint::new("a", "e", "main"),
        model,
        Composition::Sequential,
    )
    .unwrap();
    spec
}

/// User functions for generated test systems: every transition function
/// stamps its iteration count into its outputs, `stopN` is true once the
/// subsystem time reaches N, and `never` is false.
pub fn test_functions(max_stop: u64) -> UserFunctions {
    let mut u = UserFunctions::new();
    for f in ["produce", "consume", "f0", "f1", "f2"] {
        u.tf(f, |m| {
            let t = m.time as f64;
            for out in m.outputs.values_mut() {
                out.set_scalar("t", t);
            }
        });
    }
    for n in 0..=max_stop {
        u.cond(&format!("stop{n}"), move |m| m.time >= n);
    }
    u.cond("never", |_| false);
    u.cond("go", |m| m.time % 2 == 0);
    u
}

/// Random valid system: one agent, one control subsystem plus up to two
/// more, one to three behaviours each chained by switches, and random
/// channels between behaviours of different subsystems.
pub fn random_system(seed: u64) -> SystemSpec {
    let mut r = rng(seed);
    let kinds = [SubsystemKind::Control, SubsystemKind::Effector, SubsystemKind::Receptor];
    let n_sub = r.random_range(1..=3);
    let mut subsystems = Vec::new();
    for (s, kind) in kinds.iter().enumerate().take(n_sub) {
        let n_b = r.random_range(1..=3);
        let behaviours: Vec<BehaviourSpec> = (0..n_b)
            .map(|b| {
                let mut spec = BehaviourSpec::new(&format!("b{b}"), &format!("f{}", r.random_range(0..3)));
                spec = spec.with_terminal(&format!("stop{}", 3 * (b + 1) + r.random_range(0..3)));
                if r.random_bool(0.3) {
                    spec = spec.with_error("never");
                }
                spec
            })
            .collect();
        let switches = (1..n_b)
            .map(|b| BehaviourSwitch {
                from: format!("b{}", b - 1),
                condition: r.random_bool(0.5).then(|| "go".to_string()),
                to: format!("b{b}"),
            })
            .collect();
        subsystems.push(SubsystemSpec {
            name: format!("s{s}"),
            kind: *kind,
            behaviours,
            initial: "b0".into(),
            terminal: format!("b{}", n_b - 1),
            switches,
        });
    }
    let mut spec = SystemSpec {
        agents: vec![AgentSpec {
            name: "a".into(),
            subsystems,
        }],
    };
    let ends: Vec<(String, String)> = spec.agents[0]
        .subsystems
        .iter()
        .flat_map(|s| s.behaviours.iter().map(move |b| (s.name.clone(), b.name.clone())))
        .collect();
    let composition = if r.random_bool(0.5) {
        Composition::Sequential
    } else {
        Composition::Parallel
    };
    for _ in 0..r.random_range(0..=3) {
        let p = &ends[r.random_range(0..ends.len())];
        let c = &ends[r.random_range(0..ends.len())];
        if p.0 == c.0 {
            continue;
        }
        let model = CommModel::ALL[r.random_range(0..4)];
        let _ = spec.connect(
            &Endpoint::new("a", &p.0, &p.1),
            &Endpoint::new("a", &c.0, &c.1),
            model,
            composition,
        );
    }
    spec
}

/// Every behaviour page of `spec` as (ground path prefix, subsystem name).
pub fn behaviour_prefixes(spec: &SystemSpec) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for a in &spec.agents {
        for s in &a.subsystems {
            for b in &s.behaviours {
                out.push((
                    format!("system/{}/{}/{}/", a.name, s.name, b.name),
                    format!("{}.{}", a.name, s.name),
                ));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Idle,
    Computing,
    Computed,
    Sending,
    Sent,
    Ticked,
    Ticking,
    Receiving,
}

/// Checks the per-iteration event order of every behaviour page: transition
/// function done, send page done, time increment, receive page done, then
/// exactly one of loop or exit. Returns human-readable violations.
pub fn behaviour_order_violations(trace: &Trace, prefixes: &[(String, String)]) -> Vec<String> {
    let mut errors = Vec::new();
    for (prefix, sub) in prefixes {
        let mut stage = Stage::Idle;
        let mut open_ops: HashSet<String> = HashSet::new();
        let mut iterations = 0usize;
        for e in &trace.events {
            let inside = e.subject.starts_with(prefix.as_str());
            let local = e.subject.strip_prefix(prefix.as_str()).unwrap_or("");
            let mut bad = |what: &str| errors.push(format!("{prefix} seq {}: {what} in {stage:?}", e.seq));
            match e.kind {
                EventKind::TimeIncrement if e.subject == *sub && stage == Stage::Ticking => stage = Stage::Ticked,
                _ if !inside => {}
                EventKind::OpStart if local == "p_in" => {
                    if stage != Stage::Idle {
                        bad("transition function started");
                    }
                    stage = Stage::Computing;
                }
                EventKind::OpDone if local == "p_in" => {
                    if stage != Stage::Computing {
                        bad("transition function finished");
                    }
                    stage = Stage::Computed;
                }
                EventKind::Fire if local == "t_1" => {
                    if stage != Stage::Computed {
                        bad("t_1 fired");
                    }
                    stage = Stage::Sending;
                }
                EventKind::OpStart if local.starts_with("snd/") => {
                    if stage != Stage::Sending {
                        bad("send operation started");
                    }
                    open_ops.insert(local.to_string());
                }
                EventKind::OpStart if local.starts_with("rcv/") => {
                    if stage != Stage::Receiving {
                        bad("receive operation started");
                    }
                    open_ops.insert(local.to_string());
                }
                EventKind::OpDone if local.starts_with("snd/") || local.starts_with("rcv/") => {
                    open_ops.remove(local);
                }
                EventKind::Fire if local.starts_with("snd/") && stage != Stage::Sending => bad("send transition fired"),
                EventKind::Fire if local.starts_with("rcv/") && stage != Stage::Receiving => {
                    bad("receive transition fired")
                }
                EventKind::Fire if local == "t_2" => {
                    if stage != Stage::Sending || !open_ops.is_empty() {
                        bad("t_2 fired before the send page completed");
                    }
                    stage = Stage::Sent;
                }
                EventKind::OpStart if local == "p_2" => {
                    if stage != Stage::Sent {
                        bad("time increment started");
                    }
                    stage = Stage::Ticking;
                }
                EventKind::OpDone if local == "p_2" => {
                    if stage != Stage::Ticked {
                        bad("time increment finished without incrementing");
                    }
                }
                EventKind::Fire if local == "t_3" => {
                    if stage != Stage::Ticked {
                        bad("t_3 fired");
                    }
                    stage = Stage::Receiving;
                }
                EventKind::Fire if local == "t_loop" || local == "t_exit" => {
                    if stage != Stage::Receiving || !open_ops.is_empty() {
                        bad("loop/exit fired before the receive page completed");
                    }
                    stage = Stage::Idle;
                    iterations += 1;
                }
                _ => {}
            }
        }
        let _ = iterations;
    }
    errors
}

/// Number of completed iterations of the behaviour at `prefix`.
pub fn iterations(trace: &Trace, prefix: &str) -> usize {
    trace
        .events
        .iter()
        .filter(|e| {
            e.kind == EventKind::Fire
                && (e.subject == format!("{prefix}t_loop") || e.subject == format!("{prefix}t_exit"))
        })
        .count()
}

pub fn seq_of(detail: &str) -> u64 {
    detail
        .split_whitespace()
        .find_map(|w| w.strip_prefix("seq="))
        .and_then(|s| s.parse().ok())
        .expect("seq field")
}

pub fn place_counts(net: &GroundNet) -> HashMap<String, usize> {
    net.places
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.clone(), i))
        .collect()
}

pub struct Run {
    pub trace: Trace,
    pub outcome: hpn_core::exec::RunOutcome,
    pub state: hpn_core::agent::SystemState<()>,
    pub ground: GroundNet,
}

/// Assembles and executes `spec` with [`test_functions`].
pub fn run_spec(spec: &SystemSpec, policy: hpn_core::exec::Policy, max_firings: u64) -> Run {
    use hpn_core::agent::{system_registry, SystemState};
    use hpn_core::exec::{ExecOptions, Executor, Limits};
    let ground = hpn_core::builder::assemble(spec).unwrap().hpn.flatten().unwrap();
    let registry = system_registry::<()>(&test_functions(12));
    let state = SystemState::from_spec(spec, &ground, ());
    let options = ExecOptions {
        policy,
        workers: 2,
        ..ExecOptions::default()
    };
    let mut exec = Executor::new(ground.clone(), &registry, state, options).unwrap();
    let outcome = exec.run(Limits::firings(max_firings)).unwrap();
    let trace = exec.take_trace();
    Run {
        trace,
        outcome,
        state: exec.into_state(),
        ground,
    }
}
