//! Mechanical construction of the five layers from a [`SystemSpec`].
//!
//! Net names encode the hierarchy: the root is `system`, agent nets are
//! named `<agent>`, subsystem nets `<agent>.<sub>`, behaviour nets
//! `<agent>.<sub>.<behaviour>`. Registry keys emitted by the builder are
//! prefixed with the owning subsystem so that user functions can be bound
//! per subsystem:
//!
//! * `tf.<agent>.<sub>.<user key>`: transition function of a behaviour;
//! * `tick.<agent>.<sub>`: discrete-time increment;
//! * `cond.<agent>.<sub>.<user key>`: error, terminal and initial conditions;
//! * `chan.<channel>.write` / `chan.<channel>.read`: shared-memory access.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::comm::{build_pair, compose_peers, passthrough, ChannelPages, CommError, CommModel, Composition, Endpoint};
use crate::condition::{is_key_char, Condition};
use crate::net::{Hpn, NetError, NetId};

pub const ROOT_NET: &str = "system";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubsystemKind {
    Control,
    Effector,
    Receptor,
}

impl SubsystemKind {
    pub fn letter(self) -> &'static str {
        match self {
            SubsystemKind::Control => "c",
            SubsystemKind::Effector => "e",
            SubsystemKind::Receptor => "r",
        }
    }
}

impl fmt::Display for SubsystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

impl FromStr for SubsystemKind {
    type Err = BuildError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "c" => Ok(SubsystemKind::Control),
            "e" => Ok(SubsystemKind::Effector),
            "r" => Ok(SubsystemKind::Receptor),
            other => Err(BuildError::UnknownKind(other.to_string())),
        }
    }
}

/// One side of a channel as seen from a behaviour.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Peer {
    pub subsystem: String,
    pub behaviour: String,
    pub model: CommModel,
    pub composition: Composition,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BehaviourSpec {
    pub name: String,
    /// User key of the transition function.
    pub function: String,
    pub error: Option<String>,
    pub terminal: Option<String>,
    pub send_peers: Vec<Peer>,
    pub recv_peers: Vec<Peer>,
}

impl BehaviourSpec {
    pub fn new(name: &str, function: &str) -> Self {
        BehaviourSpec {
            name: name.into(),
            function: function.into(),
            ..Default::default()
        }
    }

    pub fn with_error(mut self, key: &str) -> Self {
        self.error = Some(key.into());
        self
    }

    pub fn with_terminal(mut self, key: &str) -> Self {
        self.terminal = Some(key.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BehaviourSwitch {
    pub from: String,
    /// User key of the initial condition; `None` means always.
    pub condition: Option<String>,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsystemSpec {
    pub name: String,
    pub kind: SubsystemKind,
    pub behaviours: Vec<BehaviourSpec>,
    pub initial: String,
    pub terminal: String,
    pub switches: Vec<BehaviourSwitch>,
}

impl SubsystemSpec {
    /// A subsystem with a single behaviour that is both initial and terminal.
    pub fn single(name: &str, kind: SubsystemKind, behaviour: BehaviourSpec) -> Self {
        SubsystemSpec {
            name: name.into(),
            kind,
            initial: behaviour.name.clone(),
            terminal: behaviour.name.clone(),
            behaviours: vec![behaviour],
            switches: Vec::new(),
        }
    }

    pub fn behaviour(&self, name: &str) -> Option<&BehaviourSpec> {
        self.behaviours.iter().find(|b| b.name == name)
    }

    fn behaviour_mut(&mut self, name: &str) -> Option<&mut BehaviourSpec> {
        self.behaviours.iter_mut().find(|b| b.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentSpec {
    pub name: String,
    pub subsystems: Vec<SubsystemSpec>,
}

impl AgentSpec {
    pub fn subsystem(&self, name: &str) -> Option<&SubsystemSpec> {
        self.subsystems.iter().find(|s| s.name == name)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SystemSpec {
    pub agents: Vec<AgentSpec>,
}

impl SystemSpec {
    pub fn agent(&self, name: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.name == name)
    }

    /// Registers a channel on both of its behaviours.
    pub fn connect(
        &mut self,
        producer: &Endpoint,
        consumer: &Endpoint,
        model: CommModel,
        composition: Composition,
    ) -> Result<(), BuildError> {
        if producer.agent != consumer.agent {
            return Err(BuildError::CrossAgent {
                producer: producer.to_string(),
                consumer: consumer.to_string(),
            });
        }
        let mut side = |end: &Endpoint, peer: Peer, send: bool| -> Result<(), BuildError> {
            let behaviour = self
                .agents
                .iter_mut()
                .find(|a| a.name == end.agent)
                .and_then(|a| a.subsystems.iter_mut().find(|s| s.name == end.subsystem))
                .and_then(|s| s.behaviour_mut(&end.behaviour))
                .ok_or_else(|| BuildError::UnknownEndpoint(end.to_string()))?;
            let list = if send {
                &mut behaviour.send_peers
            } else {
                &mut behaviour.recv_peers
            };
            if list
                .iter()
                .any(|p| p.subsystem == peer.subsystem && p.behaviour == peer.behaviour)
            {
                return Err(BuildError::DuplicateChannel(end.to_string()));
            }
            list.push(peer);
            Ok(())
        };
        side(
            producer,
            Peer {
                subsystem: consumer.subsystem.clone(),
                behaviour: consumer.behaviour.clone(),
                model,
                composition,
            },
            true,
        )?;
        side(
            consumer,
            Peer {
                subsystem: producer.subsystem.clone(),
                behaviour: producer.behaviour.clone(),
                model,
                composition,
            },
            false,
        )
    }

    /// Every channel as (producer, consumer, model), in declaration order of
    /// the producing behaviours.
    pub fn channels(&self) -> Vec<(Endpoint, Endpoint, CommModel)> {
        let mut out = Vec::new();
        for agent in &self.agents {
            for sub in &agent.subsystems {
                for beh in &sub.behaviours {
                    for peer in &beh.send_peers {
                        out.push((
                            Endpoint::new(&agent.name, &sub.name, &beh.name),
                            Endpoint::new(&agent.name, &peer.subsystem, &peer.behaviour),
                            peer.model,
                        ));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BuildError {
    #[error("the system has no agents")]
    NoAgents,
    #[error("duplicate agent `{0}`")]
    DuplicateAgent(String),
    #[error("agent `{0}` has no subsystems")]
    NoSubsystems(String),
    #[error("duplicate subsystem `{0}`")]
    DuplicateSubsystem(String),
    #[error("agent `{agent}` must have exactly one control subsystem, found {found}")]
    ControlCount { agent: String, found: usize },
    #[error("unknown subsystem kind `{0}` (expected c, e or r)")]
    UnknownKind(String),
    #[error("subsystem `{0}` has no behaviours")]
    NoBehaviours(String),
    #[error("duplicate behaviour `{0}`")]
    DuplicateBehaviour(String),
    #[error("subsystem `{subsystem}` refers to unknown behaviour `{behaviour}`")]
    UnknownBehaviour { subsystem: String, behaviour: String },
    #[error("unknown channel endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("channel endpoints must belong to the same agent: `{producer}` -> `{consumer}`")]
    CrossAgent { producer: String, consumer: String },
    #[error("duplicate channel at `{0}`")]
    DuplicateChannel(String),
    #[error("channel `{producer}` -> `{consumer}` is not declared on both sides consistently")]
    DanglingPeer { producer: String, consumer: String },
    #[error("behaviour `{0}` mixes sequential and parallel composition on one side")]
    MixedComposition(String),
    #[error("invalid registry key `{0}`")]
    InvalidKey(String),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Net(#[from] NetError),
}

pub fn tf_key(agent: &str, sub: &str, user: &str) -> String {
    format!("tf.{agent}.{sub}.{user}")
}

pub fn tick_key(agent: &str, sub: &str) -> String {
    format!("tick.{agent}.{sub}")
}

pub fn cond_key(agent: &str, sub: &str, user: &str) -> String {
    format!("cond.{agent}.{sub}.{user}")
}

/// Result of [`assemble`].
#[derive(Clone, Debug)]
pub struct Assembly {
    pub hpn: Hpn,
    pub channels: Vec<ChannelPages>,
    pub warnings: Vec<String>,
}

fn check_key(key: &str) -> Result<(), BuildError> {
    if key.is_empty() || !key.bytes().all(is_key_char) {
        return Err(BuildError::InvalidKey(key.to_string()));
    }
    Ok(())
}

fn unique<'a>(names: impl IntoIterator<Item = &'a str>, err: impl Fn(String) -> BuildError) -> Result<(), BuildError> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(err(n.to_string()));
        }
    }
    Ok(())
}

/// Checks the structural rules of a spec and returns non-fatal warnings.
pub fn validate(spec: &SystemSpec) -> Result<Vec<String>, BuildError> {
    if spec.agents.is_empty() {
        return Err(BuildError::NoAgents);
    }
    unique(spec.agents.iter().map(|a| a.name.as_str()), BuildError::DuplicateAgent)?;
    let mut warnings = Vec::new();
    for agent in &spec.agents {
        if agent.subsystems.is_empty() {
            return Err(BuildError::NoSubsystems(agent.name.clone()));
        }
        unique(agent.subsystems.iter().map(|s| s.name.as_str()), |n| {
            BuildError::DuplicateSubsystem(format!("{}.{n}", agent.name))
        })?;
        let controls = agent
            .subsystems
            .iter()
            .filter(|s| s.kind == SubsystemKind::Control)
            .count();
        if controls != 1 {
            return Err(BuildError::ControlCount {
                agent: agent.name.clone(),
                found: controls,
            });
        }
        for sub in &agent.subsystems {
            warnings.extend(validate_subsystem(agent, sub)?);
        }
    }
    Ok(warnings)
}

fn validate_subsystem(agent: &AgentSpec, sub: &SubsystemSpec) -> Result<Vec<String>, BuildError> {
    let path = format!("{}.{}", agent.name, sub.name);
    if sub.behaviours.is_empty() {
        return Err(BuildError::NoBehaviours(path));
    }
    unique(sub.behaviours.iter().map(|b| b.name.as_str()), |n| {
        BuildError::DuplicateBehaviour(format!("{path}.{n}"))
    })?;
    let known = |name: &str| -> Result<(), BuildError> {
        if sub.behaviour(name).is_none() {
            return Err(BuildError::UnknownBehaviour {
                subsystem: path.clone(),
                behaviour: name.to_string(),
            });
        }
        Ok(())
    };
    known(&sub.initial)?;
    known(&sub.terminal)?;
    for sw in &sub.switches {
        known(&sw.from)?;
        known(&sw.to)?;
        if let Some(c) = &sw.condition {
            check_key(c)?;
        }
    }
    for beh in &sub.behaviours {
        check_key(&beh.function)?;
        for key in beh.error.iter().chain(&beh.terminal) {
            check_key(key)?;
        }
        for (peers, send) in [(&beh.send_peers, true), (&beh.recv_peers, false)] {
            if peers.len() > 1 && peers.windows(2).any(|w| w[0].composition != w[1].composition) {
                return Err(BuildError::MixedComposition(format!("{path}.{}", beh.name)));
            }
            for peer in peers {
                let here = Endpoint::new(&agent.name, &sub.name, &beh.name);
                let there = Endpoint::new(&agent.name, &peer.subsystem, &peer.behaviour);
                let (producer, consumer) = if send { (&here, &there) } else { (&there, &here) };
                let dangling = || BuildError::DanglingPeer {
                    producer: producer.to_string(),
                    consumer: consumer.to_string(),
                };
                let other = agent
                    .subsystem(&peer.subsystem)
                    .and_then(|s| s.behaviour(&peer.behaviour))
                    .ok_or_else(dangling)?;
                let mirror = if send { &other.recv_peers } else { &other.send_peers };
                if !mirror
                    .iter()
                    .any(|m| m.subsystem == sub.name && m.behaviour == beh.name && m.model == peer.model)
                {
                    return Err(dangling());
                }
            }
        }
    }

    let mut reached = BTreeSet::new();
    let mut queue = VecDeque::from([sub.initial.as_str()]);
    while let Some(b) = queue.pop_front() {
        if reached.insert(b) {
            queue.extend(sub.switches.iter().filter(|s| s.from == b).map(|s| s.to.as_str()));
        }
    }
    Ok(sub
        .behaviours
        .iter()
        .filter(|b| !reached.contains(b.name.as_str()))
        .map(|b| format!("behaviour `{path}.{}` is unreachable from `{}`", b.name, sub.initial))
        .collect())
}

/// Adds `p_in -> t_in -> pages -> t_out -> p_out` to `net`, fanning out over
/// every page. Used by the system and agent layers.
fn fan(hpn: &mut Hpn, net: NetId, input: &str, output: &str, pages: &[(String, NetId)]) -> Result<(), NetError> {
    let n = hpn.net_mut(net);
    let p_in = n.add_place(input, None)?;
    let p_out = n.add_place(output, None)?;
    n.set_input(p_in);
    n.set_output(p_out);
    let t_in = n.add_transition("t_in", None)?;
    let t_out = n.add_transition("t_out", None)?;
    n.connect(p_in, t_in)?;
    for (name, inner) in pages {
        let page = n.add_page(name, *inner)?;
        n.connect(t_in, page)?;
        n.connect(page, t_out)?;
    }
    n.connect(t_out, p_out)?;
    Ok(())
}

/// Root net: one page per agent between `t_in` and `t_out`, plus the
/// implicit initial place (one token) and final place.
pub fn build_system_layer(hpn: &mut Hpn, agents: &[(String, NetId)]) -> Result<NetId, BuildError> {
    if agents.is_empty() {
        return Err(BuildError::NoAgents);
    }
    let root = hpn.root();
    fan(hpn, root, "p_init", "p_final", agents)?;
    let n = hpn.net_mut(root);
    let init = n.resolve_place("p_init")?;
    n.set_initial(init, 1);
    Ok(root)
}

pub fn build_agent_layer(hpn: &mut Hpn, agent: &str, subsystems: &[(String, NetId)]) -> Result<NetId, BuildError> {
    if subsystems.is_empty() {
        return Err(BuildError::NoSubsystems(agent.to_string()));
    }
    let net = hpn.add_net(agent)?;
    fan(hpn, net, "p_in", "p_out", subsystems)?;
    Ok(net)
}

pub fn build_subsystem_layer(
    hpn: &mut Hpn,
    agent: &str,
    sub: &SubsystemSpec,
    behaviours: &[(String, NetId)],
) -> Result<NetId, BuildError> {
    let net = hpn.add_net(&format!("{agent}.{}", sub.name))?;
    let n = hpn.net_mut(net);
    let p_in = n.add_place("p_in", None)?;
    let p_out = n.add_place("p_out", None)?;
    n.set_input(p_in);
    n.set_output(p_out);
    let mut pages = BTreeMap::new();
    for (name, inner) in behaviours {
        pages.insert(name.as_str(), n.add_page(name, *inner)?);
    }
    let missing = |b: &str| BuildError::UnknownBehaviour {
        subsystem: format!("{agent}.{}", sub.name),
        behaviour: b.to_string(),
    };
    let page = |b: &str| pages.get(b).copied().ok_or_else(|| missing(b));
    let t_in = n.add_transition("t_in", None)?;
    n.connect(p_in, t_in)?;
    n.connect(t_in, page(&sub.initial)?)?;
    for sw in &sub.switches {
        let condition = sw
            .condition
            .as_ref()
            .map(|k| Condition::key(cond_key(agent, &sub.name, k)));
        let t = n.add_transition(&format!("t_{}_to_{}", sw.from, sw.to), condition)?;
        n.connect(page(&sw.from)?, t)?;
        n.connect(t, page(&sw.to)?)?;
    }
    let t_out = n.add_transition("t_out", None)?;
    n.connect(page(&sub.terminal)?, t_out)?;
    n.connect(t_out, p_out)?;
    Ok(net)
}

/// Exit condition `f^ε ∨ f^τ` of a behaviour; `false` when neither is set.
pub fn exit_condition(agent: &str, sub: &str, beh: &BehaviourSpec) -> Condition {
    let keys: Vec<Condition> = beh
        .error
        .iter()
        .chain(&beh.terminal)
        .map(|k| Condition::key(cond_key(agent, sub, k)))
        .collect();
    match keys.len() {
        0 => Condition::False,
        1 => keys.into_iter().next().unwrap(),
        _ => Condition::Any(keys),
    }
}

/// The fixed behaviour pattern: compute f, send, tick, receive, loop or exit.
pub fn build_behaviour_page(
    hpn: &mut Hpn,
    agent: &str,
    sub: &str,
    beh: &BehaviourSpec,
    snd: NetId,
    rcv: NetId,
) -> Result<NetId, BuildError> {
    let net = hpn.add_net(&format!("{agent}.{sub}.{}", beh.name))?;
    let exit = exit_condition(agent, sub, beh);
    let n = hpn.net_mut(net);
    let p_in = n.add_place("p_in", Some(&tf_key(agent, sub, &beh.function)))?;
    let p_2 = n.add_place("p_2", Some(&tick_key(agent, sub)))?;
    let p_out = n.add_place("p_out", None)?;
    n.set_input(p_in);
    n.set_output(p_out);
    let t_1 = n.add_transition("t_1", None)?;
    let snd = n.add_page("snd", snd)?;
    let t_2 = n.add_transition("t_2", None)?;
    let t_3 = n.add_transition("t_3", None)?;
    let rcv = n.add_page("rcv", rcv)?;
    let t_loop = n.add_transition("t_loop", Some(exit.clone().negate()))?;
    let t_exit = n.add_transition("t_exit", Some(exit))?;
    n.connect(p_in, t_1)?;
    n.connect(t_1, snd)?;
    n.connect(snd, t_2)?;
    n.connect(t_2, p_2)?;
    n.connect(p_2, t_3)?;
    n.connect(t_3, rcv)?;
    n.connect(rcv, t_loop)?;
    n.connect(t_loop, p_in)?;
    n.connect(rcv, t_exit)?;
    n.connect(t_exit, p_out)?;
    Ok(net)
}

/// Builds the whole hierarchy with all channel fusion groups.
pub fn assemble(spec: &SystemSpec) -> Result<Assembly, BuildError> {
    let warnings = validate(spec)?;
    let mut hpn = Hpn::new(ROOT_NET)?;

    let mut channels = Vec::new();
    let mut snd_of: BTreeMap<Endpoint, Vec<NetId>> = BTreeMap::new();
    let mut rcv_of: BTreeMap<Endpoint, Vec<NetId>> = BTreeMap::new();
    for (producer, consumer, model) in spec.channels() {
        let pages = build_pair(&mut hpn, model, &producer, &consumer)?;
        snd_of.entry(producer).or_default().push(pages.snd);
        rcv_of.entry(consumer).or_default().push(pages.rcv);
        channels.push(pages);
    }

    let mut agent_pages = Vec::new();
    for agent in &spec.agents {
        let mut sub_pages = Vec::new();
        for sub in &agent.subsystems {
            let mut beh_pages = Vec::new();
            for beh in &sub.behaviours {
                let end = Endpoint::new(&agent.name, &sub.name, &beh.name);
                let side = |hpn: &mut Hpn, pages: Option<&Vec<NetId>>, peers: &[Peer], tag: &str| {
                    let name = format!("{end}.{tag}");
                    match pages {
                        None => passthrough(hpn, &name),
                        Some(pages) => {
                            let mode = peers.first().map(|p| p.composition).unwrap_or_default();
                            compose_peers(hpn, &name, pages, mode)
                        }
                    }
                };
                let snd = side(&mut hpn, snd_of.get(&end), &beh.send_peers, "snd")?;
                let rcv = side(&mut hpn, rcv_of.get(&end), &beh.recv_peers, "rcv")?;
                let page = build_behaviour_page(&mut hpn, &agent.name, &sub.name, beh, snd, rcv)?;
                beh_pages.push((beh.name.clone(), page));
            }
            let net = build_subsystem_layer(&mut hpn, &agent.name, sub, &beh_pages)?;
            sub_pages.push((sub.name.clone(), net));
        }
        let net = build_agent_layer(&mut hpn, &agent.name, &sub_pages)?;
        agent_pages.push((agent.name.clone(), net));
    }
    build_system_layer(&mut hpn, &agent_pages)?;

    Ok(Assembly {
        hpn,
        channels,
        warnings,
    })
}
