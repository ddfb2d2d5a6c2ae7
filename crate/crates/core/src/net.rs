//! Hierarchical Petri nets with conditions.
//!
//! An [`Hpn`] owns a set of [`NetGraph`]s. One of them is the root; the
//! others are reachable through pages, which stand in for a place of their
//! parent net. Places of different nets may be fused globally. [`Hpn::flatten`]
//! expands every page and collapses every fusion group into a [`GroundNet`],
//! which is what the token game, the analyses and the executor operate on.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::condition::{is_key_char, Condition};

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), self.0)
            }
        }
    };
}

id_type!(NetId);
id_type!(PlaceId);
id_type!(TransitionId);
id_type!(PageId);

/// Any node of a single net. Pages occupy the place side of the bipartite graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Place(PlaceId),
    Transition(TransitionId),
    Page(PageId),
}

impl Node {
    fn is_transition(self) -> bool {
        matches!(self, Node::Transition(_))
    }
}

impl From<PlaceId> for Node {
    fn from(id: PlaceId) -> Self {
        Node::Place(id)
    }
}

impl From<TransitionId> for Node {
    fn from(id: TransitionId) -> Self {
        Node::Transition(id)
    }
}

impl From<PageId> for Node {
    fn from(id: PageId) -> Self {
        Node::Page(id)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("invalid name `{0}`: names must match [A-Za-z0-9_.]+")]
    InvalidName(String),
    #[error("duplicate name `{name}` in net `{net}`")]
    DuplicateName { net: String, name: String },
    #[error("duplicate net name `{0}`")]
    DuplicateNet(String),
    #[error("unknown net {0}")]
    UnknownNet(String),
    #[error("unknown node `{name}` in net `{net}`")]
    UnknownNode { net: String, name: String },
    #[error("arc {from} -> {to} in net `{net}` violates the bipartite rule")]
    NotBipartite { net: String, from: String, to: String },
    #[error("duplicate arc {from} -> {to} in net `{net}`")]
    DuplicateArc { net: String, from: String, to: String },
    #[error(
        "page `{page}` (net `{net}`) has {inputs} input and {outputs} output places; exactly one of each is required"
    )]
    MalformedPage {
        page: String,
        net: String,
        inputs: usize,
        outputs: usize,
    },
    #[error("net `{0}` is used by more than one page or is the root")]
    NetReused(String),
    #[error("place `{place}` of net `{net}` belongs to more than one fusion group")]
    OverlappingFusion { net: String, place: String },
    #[error("duplicate fusion group `{0}`")]
    DuplicateFusion(String),
    #[error("fusion group `{group}` members declare different initial markings")]
    InconsistentFusionMarking { group: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Place {
    pub name: String,
    /// Registry key of the operation executed when a token arrives.
    pub operation: Option<String>,
    pub is_input: bool,
    pub is_output: bool,
    pub initial: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub name: String,
    pub condition: Condition,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Page {
    pub name: String,
    pub inner: NetId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arc {
    pub source: Node,
    pub target: Node,
}

/// One net of the hierarchy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetGraph {
    name: String,
    places: Vec<Place>,
    transitions: Vec<Transition>,
    pages: Vec<Page>,
    arcs: Vec<Arc>,
    names: HashMap<String, Node>,
}

pub(crate) fn validate_name(name: &str) -> Result<(), NetError> {
    if name.is_empty() || !name.bytes().all(is_key_char) {
        return Err(NetError::InvalidName(name.to_string()));
    }
    Ok(())
}

impl NetGraph {
    pub fn new(name: &str) -> Result<Self, NetError> {
        validate_name(name)?;
        Ok(NetGraph {
            name: name.to_string(),
            places: Vec::new(),
            transitions: Vec::new(),
            pages: Vec::new(),
            arcs: Vec::new(),
            names: HashMap::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn pages(&self) -> &[Page] {
        &self.pages
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn place(&self, id: PlaceId) -> &Place {
        &self.places[id.index()]
    }

    pub fn transition(&self, id: TransitionId) -> &Transition {
        &self.transitions[id.index()]
    }

    pub fn page(&self, id: PageId) -> &Page {
        &self.pages[id.index()]
    }

    pub fn lookup(&self, name: &str) -> Option<Node> {
        self.names.get(name).copied()
    }

    pub fn node_name(&self, node: Node) -> &str {
        match node {
            Node::Place(p) => &self.places[p.index()].name,
            Node::Transition(t) => &self.transitions[t.index()].name,
            Node::Page(g) => &self.pages[g.index()].name,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.places.is_empty() && self.transitions.is_empty() && self.pages.is_empty()
    }

    fn claim(&mut self, name: &str, node: Node) -> Result<(), NetError> {
        validate_name(name)?;
        if self.names.contains_key(name) {
            return Err(NetError::DuplicateName {
                net: self.name.clone(),
                name: name.to_string(),
            });
        }
        self.names.insert(name.to_string(), node);
        Ok(())
    }

    pub fn add_place(&mut self, name: &str, operation: Option<&str>) -> Result<PlaceId, NetError> {
        if let Some(op) = operation {
            validate_name(op)?;
        }
        let id = PlaceId(self.places.len() as u32);
        self.claim(name, id.into())?;
        self.places.push(Place {
            name: name.to_string(),
            operation: operation.map(str::to_string),
            is_input: false,
            is_output: false,
            initial: 0,
        });
        Ok(id)
    }

    /// Adds a transition; `None` means the always-true condition.
    pub fn add_transition(&mut self, name: &str, condition: Option<Condition>) -> Result<TransitionId, NetError> {
        let id = TransitionId(self.transitions.len() as u32);
        self.claim(name, id.into())?;
        self.transitions.push(Transition {
            name: name.to_string(),
            condition: condition.unwrap_or_default(),
        });
        Ok(id)
    }

    pub fn add_page(&mut self, name: &str, inner: NetId) -> Result<PageId, NetError> {
        let id = PageId(self.pages.len() as u32);
        self.claim(name, id.into())?;
        self.pages.push(Page {
            name: name.to_string(),
            inner,
        });
        Ok(id)
    }

    fn check_node(&self, node: Node) -> Result<(), NetError> {
        let ok = match node {
            Node::Place(p) => p.index() < self.places.len(),
            Node::Transition(t) => t.index() < self.transitions.len(),
            Node::Page(g) => g.index() < self.pages.len(),
        };
        if ok {
            Ok(())
        } else {
            Err(NetError::UnknownNode {
                net: self.name.clone(),
                name: format!("{node:?}"),
            })
        }
    }

    /// Adds a directed arc. Exactly one endpoint must be a transition.
    pub fn connect(&mut self, from: impl Into<Node>, to: impl Into<Node>) -> Result<Arc, NetError> {
        let (from, to) = (from.into(), to.into());
        self.check_node(from)?;
        self.check_node(to)?;
        if from.is_transition() == to.is_transition() {
            return Err(NetError::NotBipartite {
                net: self.name.clone(),
                from: self.node_name(from).to_string(),
                to: self.node_name(to).to_string(),
            });
        }
        let arc = Arc {
            source: from,
            target: to,
        };
        if self.arcs.contains(&arc) {
            return Err(NetError::DuplicateArc {
                net: self.name.clone(),
                from: self.node_name(from).to_string(),
                to: self.node_name(to).to_string(),
            });
        }
        self.arcs.push(arc);
        Ok(arc)
    }

    pub fn connect_named(&mut self, from: &str, to: &str) -> Result<Arc, NetError> {
        let from = self.resolve(from)?;
        let to = self.resolve(to)?;
        self.connect(from, to)
    }

    pub fn resolve(&self, name: &str) -> Result<Node, NetError> {
        self.lookup(name).ok_or_else(|| NetError::UnknownNode {
            net: self.name.clone(),
            name: name.to_string(),
        })
    }

    pub fn resolve_place(&self, name: &str) -> Result<PlaceId, NetError> {
        match self.lookup(name) {
            Some(Node::Place(p)) => Ok(p),
            _ => Err(NetError::UnknownNode {
                net: self.name.clone(),
                name: name.to_string(),
            }),
        }
    }

    pub fn set_input(&mut self, place: PlaceId) {
        self.places[place.index()].is_input = true;
    }

    pub fn set_output(&mut self, place: PlaceId) {
        self.places[place.index()].is_output = true;
    }

    pub fn set_initial(&mut self, place: PlaceId, tokens: u32) {
        self.places[place.index()].initial = tokens;
    }

    pub fn input_places(&self) -> Vec<PlaceId> {
        self.place_ids().filter(|p| self.place(*p).is_input).collect()
    }

    pub fn output_places(&self) -> Vec<PlaceId> {
        self.place_ids().filter(|p| self.place(*p).is_output).collect()
    }

    pub fn place_ids(&self) -> impl Iterator<Item = PlaceId> {
        (0..self.places.len() as u32).map(PlaceId)
    }

    /// Out-degree / in-degree helpers used by structural tests.
    pub fn out_degree(&self, node: Node) -> usize {
        self.arcs.iter().filter(|a| a.source == node).count()
    }

    pub fn in_degree(&self, node: Node) -> usize {
        self.arcs.iter().filter(|a| a.target == node).count()
    }
}

/// A global fusion group: every member is the same logical place.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionGroup {
    pub name: String,
    pub members: Vec<(NetId, PlaceId)>,
}

/// The full hierarchy with its fusion groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hpn {
    nets: Vec<NetGraph>,
    root: NetId,
    fusions: Vec<FusionGroup>,
}

impl Hpn {
    pub fn new(root_name: &str) -> Result<Self, NetError> {
        Ok(Hpn {
            nets: vec![NetGraph::new(root_name)?],
            root: NetId(0),
            fusions: Vec::new(),
        })
    }

    pub fn root(&self) -> NetId {
        self.root
    }

    pub fn nets(&self) -> &[NetGraph] {
        &self.nets
    }

    pub fn fusions(&self) -> &[FusionGroup] {
        &self.fusions
    }

    pub fn add_net(&mut self, name: &str) -> Result<NetId, NetError> {
        if self.net_by_name(name).is_some() {
            return Err(NetError::DuplicateNet(name.to_string()));
        }
        let net = NetGraph::new(name)?;
        self.nets.push(net);
        Ok(NetId(self.nets.len() as u32 - 1))
    }

    pub fn net(&self, id: NetId) -> &NetGraph {
        &self.nets[id.index()]
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut NetGraph {
        &mut self.nets[id.index()]
    }

    pub fn net_by_name(&self, name: &str) -> Option<NetId> {
        self.nets.iter().position(|n| n.name == name).map(|i| NetId(i as u32))
    }

    /// Makes `net` the root of the hierarchy.
    pub fn set_root(&mut self, net: NetId) {
        self.root = net;
    }

    /// Records a fusion group. Duplicate members collapse; a single member is
    /// the identity fusion.
    pub fn fuse(&mut self, name: &str, members: &[(NetId, PlaceId)]) -> Result<usize, NetError> {
        validate_name(name)?;
        if self.fusions.iter().any(|g| g.name == name) {
            return Err(NetError::DuplicateFusion(name.to_string()));
        }
        let mut unique: Vec<(NetId, PlaceId)> = Vec::new();
        for &(net, place) in members {
            if net.index() >= self.nets.len() {
                return Err(NetError::UnknownNet(net.to_string()));
            }
            if place.index() >= self.net(net).places.len() {
                return Err(NetError::UnknownNode {
                    net: self.net(net).name.clone(),
                    name: place.to_string(),
                });
            }
            if self.fusion_of(net, place).is_some() {
                return Err(NetError::OverlappingFusion {
                    net: self.net(net).name.clone(),
                    place: self.net(net).place(place).name.clone(),
                });
            }
            if !unique.contains(&(net, place)) {
                unique.push((net, place));
            }
        }
        self.fusions.push(FusionGroup {
            name: name.to_string(),
            members: unique,
        });
        Ok(self.fusions.len() - 1)
    }

    /// Records several groups at once, validating that they do not overlap.
    pub fn fuse_all(&mut self, groups: &[(&str, Vec<(NetId, PlaceId)>)]) -> Result<Vec<usize>, NetError> {
        let snapshot = self.fusions.len();
        let mut ids = Vec::new();
        for (name, members) in groups {
            match self.fuse(name, members) {
                Ok(id) => ids.push(id),
                Err(e) => {
                    self.fusions.truncate(snapshot);
                    return Err(e);
                }
            }
        }
        Ok(ids)
    }

    /// Adds `place` to the named group, creating the group when needed.
    pub fn fuse_into(&mut self, name: &str, net: NetId, place: PlaceId) -> Result<(), NetError> {
        if let Some(existing) = self.fusion_of(net, place) {
            if self.fusions[existing].name == name {
                return Ok(());
            }
            return Err(NetError::OverlappingFusion {
                net: self.net(net).name.clone(),
                place: self.net(net).place(place).name.clone(),
            });
        }
        match self.fusions.iter_mut().find(|g| g.name == name) {
            Some(group) => {
                group.members.push((net, place));
                Ok(())
            }
            None => self.fuse(name, &[(net, place)]).map(|_| ()),
        }
    }

    pub fn fusion_of(&self, net: NetId, place: PlaceId) -> Option<usize> {
        self.fusions.iter().position(|g| g.members.contains(&(net, place)))
    }

    /// Nets reachable from the root, in depth-first pre-order, with the page
    /// path that leads to each of them.
    pub fn page_tree(&self) -> Result<Vec<(NetId, String)>, NetError> {
        let mut seen = vec![false; self.nets.len()];
        let mut out = Vec::new();
        self.walk(self.root, self.net(self.root).name.clone(), &mut seen, &mut out)?;
        Ok(out)
    }

    fn walk(
        &self,
        net: NetId,
        path: String,
        seen: &mut [bool],
        out: &mut Vec<(NetId, String)>,
    ) -> Result<(), NetError> {
        if seen[net.index()] {
            return Err(NetError::NetReused(self.net(net).name.clone()));
        }
        seen[net.index()] = true;
        out.push((net, path.clone()));
        for page in &self.net(net).pages {
            if page.inner.index() >= self.nets.len() {
                return Err(NetError::UnknownNet(page.inner.to_string()));
            }
            self.walk(page.inner, format!("{path}/{}", page.name), seen, out)?;
        }
        Ok(())
    }

    /// Pages (with their hierarchical paths) whose inner net does not have
    /// exactly one input and exactly one output place.
    pub fn malformed_pages(&self) -> Result<Vec<NetError>, NetError> {
        let mut out = Vec::new();
        for (net, path) in self.page_tree()? {
            for page in &self.net(net).pages {
                let inner = self.net(page.inner);
                let inputs = inner.input_places().len();
                let outputs = inner.output_places().len();
                if inputs != 1 || outputs != 1 {
                    out.push(NetError::MalformedPage {
                        page: format!("{path}/{}", page.name),
                        net: inner.name.clone(),
                        inputs,
                        outputs,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Element counts summed over every net reachable from the root.
    pub fn counts(&self) -> Result<NetCounts, NetError> {
        let mut counts = NetCounts::default();
        for (net, _) in self.page_tree()? {
            let n = self.net(net);
            counts.places += n.places.len();
            counts.transitions += n.transitions.len();
            counts.arcs += n.arcs.len();
            counts.pages += n.pages.len();
        }
        Ok(counts)
    }

    /// Expands every page and collapses every fusion group.
    ///
    /// Arcs that target a page are rewired to its input place; arcs sourced
    /// from a page leave from its output place. Ground places are numbered in
    /// depth-first page order, so the result only depends on the hierarchy's
    /// structure, not on the order in which nets were created.
    pub fn flatten(&self) -> Result<GroundNet, NetError> {
        let tree = self.page_tree()?;
        if let Some(err) = self.malformed_pages()?.into_iter().next() {
            return Err(err);
        }

        let mut fusion_slot: Vec<Option<usize>> = vec![None; self.fusions.len()];
        let mut place_map: HashMap<(NetId, PlaceId), usize> = HashMap::new();
        let mut places: Vec<GroundPlace> = Vec::new();
        let mut declared: Vec<Vec<u32>> = Vec::new();

        for (net, path) in &tree {
            let graph = self.net(*net);
            for pid in graph.place_ids() {
                let place = graph.place(pid);
                let member_path = format!("{path}/{}", place.name);
                let group = self.fusion_of(*net, pid);
                let slot = match group.and_then(|g| fusion_slot[g]) {
                    Some(slot) => slot,
                    None => {
                        places.push(GroundPlace {
                            name: match group {
                                Some(g) => format!("fusion:{}", self.fusions[g].name),
                                None => member_path.clone(),
                            },
                            operation: None,
                            initial: 0,
                            members: Vec::new(),
                            fusion: group.map(|g| self.fusions[g].name.clone()),
                        });
                        declared.push(Vec::new());
                        let slot = places.len() - 1;
                        if let Some(g) = group {
                            fusion_slot[g] = Some(slot);
                        }
                        slot
                    }
                };
                let ground = &mut places[slot];
                ground.members.push(member_path);
                if ground.operation.is_none() {
                    ground.operation = place.operation.clone();
                }
                declared[slot].push(place.initial);
                place_map.insert((*net, pid), slot);
            }
        }

        for (slot, values) in declared.iter().enumerate() {
            let nonzero: Vec<u32> = values.iter().copied().filter(|v| *v > 0).collect();
            if nonzero.windows(2).any(|w| w[0] != w[1]) {
                return Err(NetError::InconsistentFusionMarking {
                    group: places[slot].fusion.clone().unwrap_or_default(),
                });
            }
            places[slot].initial = nonzero.first().copied().unwrap_or(0);
        }

        let mut transitions = Vec::new();
        let mut trans_map: HashMap<(NetId, TransitionId), usize> = HashMap::new();
        for (net, path) in &tree {
            let graph = self.net(*net);
            for (i, t) in graph.transitions.iter().enumerate() {
                trans_map.insert((*net, TransitionId(i as u32)), transitions.len());
                transitions.push(GroundTransition {
                    name: format!("{path}/{}", t.name),
                    condition: t.condition.clone(),
                    inputs: Vec::new(),
                    outputs: Vec::new(),
                });
            }
        }

        for (net, _) in &tree {
            let graph = self.net(*net);
            let place_side = |node: Node, as_target: bool| -> usize {
                match node {
                    Node::Place(p) => place_map[&(*net, p)],
                    Node::Page(g) => {
                        let inner = graph.page(g).inner;
                        let inner_graph = self.net(inner);
                        let p = if as_target {
                            inner_graph.input_places()[0]
                        } else {
                            inner_graph.output_places()[0]
                        };
                        place_map[&(inner, p)]
                    }
                    Node::Transition(_) => unreachable!("bipartite arcs"),
                }
            };
            for arc in &graph.arcs {
                match (arc.source, arc.target) {
                    (Node::Transition(t), target) => {
                        let gt = trans_map[&(*net, t)];
                        let gp = place_side(target, true);
                        add_weight(&mut transitions[gt].outputs, gp);
                    }
                    (source, Node::Transition(t)) => {
                        let gt = trans_map[&(*net, t)];
                        let gp = place_side(source, false);
                        add_weight(&mut transitions[gt].inputs, gp);
                    }
                    _ => unreachable!("bipartite arcs"),
                }
            }
        }

        let root = self.net(self.root);
        let start_place = root.input_places().first().map(|p| place_map[&(self.root, *p)]);
        let final_place = root.output_places().first().map(|p| place_map[&(self.root, *p)]);
        let index = places
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.members.iter().map(move |m| (m.clone(), i)))
            .collect();
        Ok(GroundNet {
            places,
            transitions,
            start_place,
            final_place,
            member_index: index,
        })
    }
}

fn add_weight(list: &mut Vec<(usize, u32)>, place: usize) {
    match list.iter_mut().find(|(p, _)| *p == place) {
        Some((_, w)) => *w += 1,
        None => list.push((place, 1)),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NetCounts {
    pub places: usize,
    pub transitions: usize,
    pub arcs: usize,
    pub pages: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundPlace {
    /// Hierarchical path of the first member, or `fusion:<group>`.
    pub name: String,
    pub operation: Option<String>,
    pub initial: u32,
    /// Hierarchical paths of every place collapsed into this one.
    pub members: Vec<String>,
    pub fusion: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTransition {
    pub name: String,
    pub condition: Condition,
    /// (ground place, weight); weights exceed one only after fusion.
    pub inputs: Vec<(usize, u32)>,
    pub outputs: Vec<(usize, u32)>,
}

impl GroundTransition {
    pub fn in_degree(&self) -> u32 {
        self.inputs.iter().map(|(_, w)| w).sum()
    }

    pub fn out_degree(&self) -> u32 {
        self.outputs.iter().map(|(_, w)| w).sum()
    }
}

/// A flat net: no pages, fusion groups collapsed, provenance retained.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundNet {
    pub places: Vec<GroundPlace>,
    pub transitions: Vec<GroundTransition>,
    pub start_place: Option<usize>,
    pub final_place: Option<usize>,
    member_index: BTreeMap<String, usize>,
}

impl GroundNet {
    /// Builds a ground net directly; used by tests and generators of flat nets.
    pub fn from_parts(
        places: Vec<GroundPlace>,
        transitions: Vec<GroundTransition>,
        final_place: Option<usize>,
    ) -> Self {
        let member_index = places
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.members.iter().map(move |m| (m.clone(), i)))
            .collect();
        GroundNet {
            places,
            transitions,
            start_place: None,
            final_place,
            member_index,
        }
    }

    /// Ground place for a hierarchical member path such as `system/a1/p_in`.
    pub fn place_by_path(&self, path: &str) -> Option<usize> {
        self.member_index.get(path).copied()
    }

    pub fn transition_by_name(&self, name: &str) -> Option<usize> {
        self.transitions.iter().position(|t| t.name == name)
    }

    pub fn arc_count(&self) -> usize {
        self.transitions
            .iter()
            .map(|t| (t.in_degree() + t.out_degree()) as usize)
            .sum()
    }

    pub fn initial_tokens(&self) -> Vec<u32> {
        self.places.iter().map(|p| p.initial).collect()
    }

    pub fn initial_marking(&self) -> Marking {
        Marking::initial(self, self.initial_tokens())
    }

    pub fn operation_keys(&self) -> Vec<&str> {
        let mut keys: Vec<&str> = self.places.iter().filter_map(|p| p.operation.as_deref()).collect();
        keys.sort_unstable();
        keys.dedup();
        keys
    }

    pub fn condition_keys(&self) -> Vec<&str> {
        let mut keys: Vec<&str> = self.transitions.iter().flat_map(|t| t.condition.keys()).collect();
        keys.sort_unstable();
        keys.dedup();
        keys
    }

    /// Token-game enabling ignoring conditions and operation status.
    pub fn structurally_enabled(&self, tokens: &[u32], t: usize) -> bool {
        self.transitions[t].inputs.iter().all(|&(p, w)| tokens[p] >= w)
    }

    /// Token-game firing on a bare token vector.
    pub fn fire_tokens(&self, tokens: &mut [u32], t: usize) {
        let tr = &self.transitions[t];
        for &(p, w) in &tr.inputs {
            tokens[p] -= w;
        }
        for &(p, w) in &tr.outputs {
            tokens[p] += w;
        }
    }
}

/// Operation status of the tokens in one place.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpStatus {
    /// No token, or a token whose operation has not been launched yet.
    Idle,
    Running,
    Done,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FireError {
    #[error("transition {0} is not enabled")]
    NotEnabled(String),
}

/// Tokens per ground place plus the operation status of those tokens.
///
/// A token inserted into a place with an operation is pending until the
/// operation is launched, then running until it reports completion. Only
/// done tokens enable downstream transitions. Places without operations
/// receive done tokens immediately.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Marking {
    tokens: Vec<u32>,
    pending: Vec<u32>,
    running: Vec<u32>,
}

impl Marking {
    /// A marking whose tokens are all ready.
    pub fn new(_net: &GroundNet, tokens: Vec<u32>) -> Self {
        let n = tokens.len();
        Marking {
            tokens,
            pending: vec![0; n],
            running: vec![0; n],
        }
    }

    /// A marking in which tokens on places with an operation still have to
    /// be launched.
    pub fn initial(net: &GroundNet, tokens: Vec<u32>) -> Self {
        let mut m = Marking::new(net, tokens);
        for (p, place) in net.places.iter().enumerate() {
            if place.operation.is_some() {
                m.pending[p] = m.tokens[p];
            }
        }
        m
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn count(&self, place: usize) -> u32 {
        self.tokens[place]
    }

    pub fn total(&self) -> u64 {
        self.tokens.iter().map(|&t| t as u64).sum()
    }

    pub fn ready(&self, place: usize) -> u32 {
        self.tokens[place] - self.pending[place] - self.running[place]
    }

    pub fn pending(&self, place: usize) -> u32 {
        self.pending[place]
    }

    pub fn status(&self, place: usize) -> OpStatus {
        if self.running[place] > 0 {
            OpStatus::Running
        } else if self.tokens[place] == 0 || self.pending[place] > 0 {
            OpStatus::Idle
        } else {
            OpStatus::Done
        }
    }

    /// Moves one pending token of `place` to running.
    pub fn launch(&mut self, place: usize) {
        assert!(self.pending[place] > 0, "no pending token to launch");
        self.pending[place] -= 1;
        self.running[place] += 1;
    }

    /// Marks one running token of `place` as done.
    pub fn complete(&mut self, place: usize) {
        assert!(self.running[place] > 0, "no running token to complete");
        self.running[place] -= 1;
    }

    pub fn is_safe(&self) -> bool {
        self.tokens.iter().all(|&t| t <= 1)
    }

    pub fn total_running(&self) -> u32 {
        self.running.iter().sum()
    }
}

/// Ready tokens on every input place; conditions are not consulted.
pub fn tokens_ready(ground: &GroundNet, marking: &Marking, t: usize) -> bool {
    ground.transitions[t].inputs.iter().all(|&(p, w)| marking.ready(p) >= w)
}

/// Active transitions: ready tokens on every input place and a condition
/// that holds according to `condition`.
pub fn enabled(ground: &GroundNet, marking: &Marking, condition: &mut dyn FnMut(usize) -> bool) -> Vec<TransitionId> {
    (0..ground.transitions.len())
        .filter(|&t| tokens_ready(ground, marking, t) && condition(t))
        .map(|t| TransitionId(t as u32))
        .collect()
}

/// Fires `t`: removes one token per input arc and inserts one per output
/// arc. Tokens arriving at places with an operation are pending.
pub fn fire(ground: &GroundNet, marking: &Marking, t: TransitionId) -> Result<Marking, FireError> {
    let idx = t.index();
    if !tokens_ready(ground, marking, idx) {
        return Err(FireError::NotEnabled(ground.transitions[idx].name.clone()));
    }
    let mut next = marking.clone();
    let tr = &ground.transitions[idx];
    for &(p, w) in &tr.inputs {
        next.tokens[p] -= w;
    }
    for &(p, w) in &tr.outputs {
        next.tokens[p] += w;
        if ground.places[p].operation.is_some() {
            next.pending[p] += w;
        }
    }
    Ok(next)
}
