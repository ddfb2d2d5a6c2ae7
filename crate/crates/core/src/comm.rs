//! Communication-layer nets.
//!
//! Every channel connects a producer behaviour to a consumer behaviour of
//! another subsystem. Its Petri net is split into a send page (used by the
//! producer) and a receive page (used by the consumer); the halves interact
//! only through fusion places. The shared memory itself lives in the
//! executor state and is touched only by the write and read operations.
//!
//! Fusion places per channel:
//!
//! * `mutex` (initially 1) guards the shared memory, in every model;
//! * `d_empty`/`d_full` (initially 1/0) track whether unread data is present,
//!   in every model except the fully asynchronous one;
//! * `ack` (initially 0) confirms a read to a blocking producer.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::net::{Hpn, NetError, NetId, PlaceId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Blocking,
    NonBlocking,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CommModel {
    pub producer: Mode,
    pub consumer: Mode,
}

impl CommModel {
    pub const ASYNC: CommModel = CommModel {
        producer: Mode::NonBlocking,
        consumer: Mode::NonBlocking,
    };
    pub const BLOCK_P: CommModel = CommModel {
        producer: Mode::Blocking,
        consumer: Mode::NonBlocking,
    };
    pub const BLOCK_C: CommModel = CommModel {
        producer: Mode::NonBlocking,
        consumer: Mode::Blocking,
    };
    pub const BLOCK_PC: CommModel = CommModel {
        producer: Mode::Blocking,
        consumer: Mode::Blocking,
    };

    pub const ALL: [CommModel; 4] = [Self::ASYNC, Self::BLOCK_P, Self::BLOCK_C, Self::BLOCK_PC];

    pub fn is_fully_async(self) -> bool {
        self == Self::ASYNC
    }

    pub fn keyword(self) -> &'static str {
        match (self.producer, self.consumer) {
            (Mode::NonBlocking, Mode::NonBlocking) => "async",
            (Mode::Blocking, Mode::NonBlocking) => "block_p",
            (Mode::NonBlocking, Mode::Blocking) => "block_c",
            (Mode::Blocking, Mode::Blocking) => "block_pc",
        }
    }
}

impl fmt::Display for CommModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

impl FromStr for CommModel {
    type Err = CommError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CommModel::ALL
            .into_iter()
            .find(|m| m.keyword() == s)
            .ok_or_else(|| CommError::UnknownModel(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Composition {
    #[default]
    Sequential,
    Parallel,
}

impl Composition {
    pub fn keyword(self) -> &'static str {
        match self {
            Composition::Sequential => "sequential",
            Composition::Parallel => "parallel",
        }
    }
}

impl FromStr for Composition {
    type Err = CommError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(Composition::Sequential),
            "parallel" => Ok(Composition::Parallel),
            other => Err(CommError::UnknownComposition(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommError {
    #[error("unknown communication model `{0}` (expected async, block_p, block_c or block_pc)")]
    UnknownModel(String),
    #[error("unknown composition `{0}` (expected sequential or parallel)")]
    UnknownComposition(String),
    #[error("producer and consumer are the same subsystem `{0}`")]
    SelfChannel(String),
    #[error("nothing to compose")]
    EmptyComposition,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// (agent j, subsystem v, behaviour ω).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub agent: String,
    pub subsystem: String,
    pub behaviour: String,
}

impl Endpoint {
    pub fn new(agent: &str, subsystem: &str, behaviour: &str) -> Self {
        Endpoint {
            agent: agent.into(),
            subsystem: subsystem.into(),
            behaviour: behaviour.into(),
        }
    }

    pub fn subsystem_path(&self) -> String {
        format!("{}.{}", self.agent, self.subsystem)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.agent, self.subsystem, self.behaviour)
    }
}

/// Channel identifier: `<agent>.<producer>.<pbeh>.<consumer>.<cbeh>`.
pub fn channel_name(producer: &Endpoint, consumer: &Endpoint) -> String {
    format!(
        "{}.{}.{}.{}.{}",
        producer.agent, producer.subsystem, producer.behaviour, consumer.subsystem, consumer.behaviour
    )
}

pub fn write_key(channel: &str) -> String {
    format!("chan.{channel}.write")
}

pub fn read_key(channel: &str) -> String {
    format!("chan.{channel}.read")
}

/// The two halves of one channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelPages {
    pub channel: String,
    pub model: CommModel,
    /// Inner net of the producer's send page.
    pub snd: NetId,
    /// Inner net of the consumer's receive page.
    pub rcv: NetId,
    /// Indices into [`Hpn::fusions`].
    pub fusions: Vec<usize>,
}

/// Names of the places and transitions generated inside one half.
pub mod names {
    pub const IN: &str = "p_in";
    pub const OUT: &str = "p_out";
    pub const MUTEX: &str = "p_mutex";
    pub const D_EMPTY: &str = "p_empty";
    pub const D_FULL: &str = "p_full";
    pub const ACK: &str = "p_ack";
    pub const WRITE: &str = "p_write";
    pub const WAIT: &str = "p_wait";
    pub const READ: &str = "p_read";
    pub const READ_STALE: &str = "p_read_stale";
}

struct Half<'a> {
    hpn: &'a mut Hpn,
    net: NetId,
}

impl Half<'_> {
    fn place(&mut self, name: &str, op: Option<&str>, initial: u32) -> Result<PlaceId, NetError> {
        let n = self.hpn.net_mut(self.net);
        let p = n.add_place(name, op)?;
        n.set_initial(p, initial);
        Ok(p)
    }

    fn transition(&mut self, name: &str, inputs: &[PlaceId], outputs: &[PlaceId]) -> Result<(), NetError> {
        let n = self.hpn.net_mut(self.net);
        let t = n.add_transition(name, None)?;
        for &p in inputs {
            n.connect(p, t)?;
        }
        for &p in outputs {
            n.connect(t, p)?;
        }
        Ok(())
    }

    fn io(&mut self) -> Result<(PlaceId, PlaceId), NetError> {
        let i = self.place(names::IN, None, 0)?;
        let o = self.place(names::OUT, None, 0)?;
        let n = self.hpn.net_mut(self.net);
        n.set_input(i);
        n.set_output(o);
        Ok((i, o))
    }
}

/// Fully asynchronous channel: both sides compete for the
/// mutex and never wait for each other.
pub fn build_async_pair(hpn: &mut Hpn, producer: &Endpoint, consumer: &Endpoint) -> Result<ChannelPages, CommError> {
    build_pair(hpn, CommModel::ASYNC, producer, consumer)
}

/// One of the three channels in which at least one side blocks.
pub fn build_blocking_pair(
    hpn: &mut Hpn,
    model: CommModel,
    producer: &Endpoint,
    consumer: &Endpoint,
) -> Result<ChannelPages, CommError> {
    debug_assert!(!model.is_fully_async(), "use build_async_pair");
    build_pair(hpn, model, producer, consumer)
}

/// Builds both halves of a channel for any model and registers its fusion groups.
pub fn build_pair(
    hpn: &mut Hpn,
    model: CommModel,
    producer: &Endpoint,
    consumer: &Endpoint,
) -> Result<ChannelPages, CommError> {
    if producer.agent == consumer.agent && producer.subsystem == consumer.subsystem {
        return Err(CommError::SelfChannel(producer.subsystem_path()));
    }
    let channel = channel_name(producer, consumer);
    let write = write_key(&channel);
    let read = read_key(&channel);
    let tracked = !model.is_fully_async();
    let blocking_producer = model.producer == Mode::Blocking;

    let snd = hpn.add_net(&format!("snd.{channel}"))?;
    let snd_places = {
        let mut h = Half { hpn, net: snd };
        let (i, o) = h.io()?;
        let mutex = h.place(names::MUTEX, None, 1)?;
        let w = h.place(names::WRITE, Some(&write), 0)?;
        h.transition("t_acquire", &[i, mutex], &[w])?;
        let mut fused = vec![(names::MUTEX, mutex)];
        if !tracked {
            h.transition("t_release", &[w], &[mutex, o])?;
        } else {
            let empty = h.place(names::D_EMPTY, None, 1)?;
            let full = h.place(names::D_FULL, None, 0)?;
            fused.push((names::D_EMPTY, empty));
            fused.push((names::D_FULL, full));
            if blocking_producer {
                let wait = h.place(names::WAIT, None, 0)?;
                let ack = h.place(names::ACK, None, 0)?;
                fused.push((names::ACK, ack));
                h.transition("t_release", &[w, empty], &[mutex, full, wait])?;
                h.transition("t_resume", &[wait, ack], &[o])?;
            } else {
                // Unread data is overwritten; the full marker stays set.
                h.transition("t_release_new", &[w, empty], &[mutex, full, o])?;
                h.transition("t_release_over", &[w, full], &[mutex, full, o])?;
            }
        }
        fused
    };

    let rcv = hpn.add_net(&format!("rcv.{channel}"))?;
    let rcv_places = {
        let mut h = Half { hpn, net: rcv };
        let (i, o) = h.io()?;
        let mutex = h.place(names::MUTEX, None, 1)?;
        let mut fused = vec![(names::MUTEX, mutex)];
        if !tracked {
            let r = h.place(names::READ, Some(&read), 0)?;
            h.transition("t_acquire", &[i, mutex], &[r])?;
            h.transition("t_release", &[r], &[mutex, o])?;
        } else {
            let empty = h.place(names::D_EMPTY, None, 1)?;
            let full = h.place(names::D_FULL, None, 0)?;
            fused.push((names::D_EMPTY, empty));
            fused.push((names::D_FULL, full));
            let ack = if blocking_producer {
                let ack = h.place(names::ACK, None, 0)?;
                fused.push((names::ACK, ack));
                Some(ack)
            } else {
                None
            };
            let r = h.place(names::READ, Some(&read), 0)?;
            h.transition("t_acquire", &[i, mutex, full], &[r])?;
            let mut released = vec![mutex, empty, o];
            released.extend(ack);
            h.transition("t_release", &[r], &released)?;
            if model.consumer == Mode::NonBlocking {
                // No fresh data: read (stale) and carry on.
                let stale = h.place(names::READ_STALE, Some(&read), 0)?;
                h.transition("t_acquire_stale", &[i, mutex, empty], &[stale])?;
                h.transition("t_release_stale", &[stale], &[mutex, empty, o])?;
            }
        }
        fused
    };

    let mut fusions = Vec::new();
    for (name, snd_place) in &snd_places {
        let rcv_place = rcv_places
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| *p)
            .expect("both halves declare the same fusion places");
        let group = format!("{channel}.{}", name.trim_start_matches("p_"));
        fusions.push(hpn.fuse(&group, &[(snd, *snd_place), (rcv, rcv_place)])?);
    }

    Ok(ChannelPages {
        channel,
        model,
        snd,
        rcv,
        fusions,
    })
}

/// A page that does nothing: a single place that is both input and output.
pub fn passthrough(hpn: &mut Hpn, name: &str) -> Result<NetId, CommError> {
    let net = hpn.add_net(name)?;
    let n = hpn.net_mut(net);
    let p = n.add_place("p_pass", None)?;
    n.set_input(p);
    n.set_output(p);
    Ok(net)
}

/// Combines several channel pages of one behaviour into a single page.
///
/// Sequential composition chains the pages so that transfer k completes
/// before transfer k+1 starts; parallel composition forks into every page
/// and joins on all of them. A single page is returned unchanged.
pub fn compose_peers(hpn: &mut Hpn, name: &str, pages: &[NetId], mode: Composition) -> Result<NetId, CommError> {
    match pages {
        [] => Err(CommError::EmptyComposition),
        [single] => Ok(*single),
        _ => {
            let net = hpn.add_net(name)?;
            let n = hpn.net_mut(net);
            let i = n.add_place("p_in", None)?;
            let o = n.add_place("p_out", None)?;
            n.set_input(i);
            n.set_output(o);
            let ids = pages
                .iter()
                .enumerate()
                .map(|(k, inner)| n.add_page(&format!("ch{k}"), *inner))
                .collect::<Result<Vec<_>, _>>()?;
            match mode {
                Composition::Sequential => {
                    let mut prev: crate::net::Node = i.into();
                    for (k, page) in ids.iter().enumerate() {
                        let t = n.add_transition(&format!("t_seq{k}"), None)?;
                        n.connect(prev, t)?;
                        n.connect(t, *page)?;
                        prev = (*page).into();
                    }
                    let t = n.add_transition(&format!("t_seq{}", ids.len()), None)?;
                    n.connect(prev, t)?;
                    n.connect(t, o)?;
                }
                Composition::Parallel => {
                    let fork = n.add_transition("t_fork", None)?;
                    let join = n.add_transition("t_join", None)?;
                    n.connect(i, fork)?;
                    for page in &ids {
                        n.connect(fork, *page)?;
                        n.connect(*page, join)?;
                    }
                    n.connect(join, o)?;
                }
            }
            Ok(net)
        }
    }
}
