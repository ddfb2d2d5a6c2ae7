//! Embodied-agent data model and the runtime that binds builder keys to it.
//!
//! Buffers are keyed by the peer subsystem's short name: a producer keeps
//! its output buffer for consumer `h` under `outputs["h"]`, the consumer
//! receives it under `inputs["<producer>"]`. The real layer (physical
//! effectors and receptors) is represented by a [`RealLayer`] value that can
//! fill input buffers before a transition function runs and consume output
//! buffers after it finished.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::builder::{SubsystemKind, SystemSpec};
use crate::exec::{Commit, CondFn, Job, OpFn, OpLog, Registry};
use crate::net::GroundNet;

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Bool(bool),
    Scalar(f64),
    Vector(Vec<f64>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{}", u8::from(*b)),
            Value::Scalar(x) => write!(f, "{x}"),
            Value::Vector(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BufferError {
    #[error("buffer has no slot `{0}`")]
    UnknownSlot(String),
    #[error("slot `{0}` holds a different type")]
    TypeMismatch(String),
}

/// Slot names and default values of one kind of buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    slots: Vec<(String, Value)>,
}

impl Schema {
    pub fn new(slots: &[(&str, Value)]) -> Arc<Self> {
        Arc::new(Schema {
            slots: slots.iter().map(|(n, v)| (n.to_string(), v.clone())).collect(),
        })
    }

    pub fn record(self: &Arc<Self>) -> BufferRecord {
        BufferRecord {
            values: self.slots.iter().cloned().collect(),
            schema: Some(self.clone()),
        }
    }

    fn default_of(&self, slot: &str) -> Option<&Value> {
        self.slots.iter().find(|(n, _)| n == slot).map(|(_, v)| v)
    }
}

/// Named, typed slots. A record created from a [`Schema`] only accepts that
/// schema's slots; a free record accepts any slot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BufferRecord {
    values: BTreeMap<String, Value>,
    schema: Option<Arc<Schema>>,
}

impl BufferRecord {
    pub fn new() -> Self {
        BufferRecord::default()
    }

    pub fn get(&self, slot: &str) -> Option<&Value> {
        self.values
            .get(slot)
            .or_else(|| self.schema.as_ref().and_then(|s| s.default_of(slot)))
    }

    pub fn set(&mut self, slot: &str, value: Value) -> Result<(), BufferError> {
        if let Some(schema) = &self.schema {
            match schema.default_of(slot) {
                None => return Err(BufferError::UnknownSlot(slot.to_string())),
                Some(d) if std::mem::discriminant(d) != std::mem::discriminant(&value) => {
                    return Err(BufferError::TypeMismatch(slot.to_string()))
                }
                Some(_) => {}
            }
        }
        self.values.insert(slot.to_string(), value);
        Ok(())
    }

    /// `false` when the slot is unset and has no default.
    pub fn bool(&self, slot: &str) -> bool {
        matches!(self.get(slot), Some(Value::Bool(true)))
    }

    /// `0.0` when the slot is unset and has no default.
    pub fn scalar(&self, slot: &str) -> f64 {
        match self.get(slot) {
            Some(Value::Scalar(x)) => *x,
            _ => 0.0,
        }
    }

    pub fn vector(&self, slot: &str) -> &[f64] {
        match self.get(slot) {
            Some(Value::Vector(v)) => v,
            _ => &[],
        }
    }

    pub fn set_bool(&mut self, slot: &str, v: bool) {
        self.set(slot, Value::Bool(v)).expect("slot in schema");
    }

    pub fn set_scalar(&mut self, slot: &str, v: f64) {
        self.set(slot, Value::Scalar(v)).expect("slot in schema");
    }

    pub fn set_vector(&mut self, slot: &str, v: Vec<f64>) {
        self.set(slot, Value::Vector(v)).expect("slot in schema");
    }

    pub fn slots(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl fmt::Display for BufferRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, v) in &self.values {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SubsystemModel {
    /// `<agent>.<subsystem>`.
    pub name: String,
    pub kind: Option<SubsystemKind>,
    pub inputs: BTreeMap<String, BufferRecord>,
    pub outputs: BTreeMap<String, BufferRecord>,
    pub memory: BufferRecord,
    /// Discrete time `i`, advanced once per behaviour iteration.
    pub time: u64,
}

impl SubsystemModel {
    pub fn new(name: &str) -> Self {
        SubsystemModel {
            name: name.to_string(),
            ..Default::default()
        }
    }

    pub fn short_name(&self) -> &str {
        self.name.split_once('.').map_or(self.name.as_str(), |(_, s)| s)
    }

    pub fn input(&mut self, peer: &str) -> &mut BufferRecord {
        self.inputs.entry(peer.to_string()).or_default()
    }

    pub fn output(&mut self, peer: &str) -> &mut BufferRecord {
        self.outputs.entry(peer.to_string()).or_default()
    }
}

/// Shared memory of one channel: last writer wins.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Channel {
    pub name: String,
    /// Full subsystem names (`<agent>.<sub>`).
    pub producer: String,
    pub consumer: String,
    pub data: Option<BufferRecord>,
    pub fresh: bool,
    /// Number of writes so far; the current payload carries this number.
    pub seq: u64,
}

/// Physical effectors and receptors.
pub trait RealLayer: Send + 'static {
    /// Called when a transition function of `model` is launched.
    fn sense(&self, _model: &mut SubsystemModel) {}
    /// Called when a transition function of `model` has been committed.
    fn actuate(&mut self, _model: &SubsystemModel, _log: &mut OpLog) {}
}

impl RealLayer for () {}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SystemState<W> {
    pub subsystems: BTreeMap<String, SubsystemModel>,
    pub channels: BTreeMap<String, Channel>,
    pub world: W,
}

fn split_channel(name: &str) -> Option<(String, String)> {
    let parts: Vec<&str> = name.split('.').collect();
    if parts.len() != 5 {
        return None;
    }
    Some((
        format!("{}.{}", parts[0], parts[1]),
        format!("{}.{}", parts[0], parts[3]),
    ))
}

/// `(subsystem, rest)` from `<prefix>.<agent>.<sub>[.<rest>]`.
pub(crate) fn parse_scoped<'a>(key: &'a str, prefix: &str) -> Option<(String, &'a str)> {
    let rest = key.strip_prefix(prefix)?.strip_prefix('.')?;
    let mut it = rest.splitn(3, '.');
    let agent = it.next().filter(|s| !s.is_empty())?;
    let sub = it.next().filter(|s| !s.is_empty())?;
    Some((format!("{agent}.{sub}"), it.next().unwrap_or("")))
}

fn parse_channel_key(key: &str) -> Option<(&str, bool)> {
    let rest = key.strip_prefix("chan.")?;
    if let Some(c) = rest.strip_suffix(".write") {
        Some((c, true))
    } else {
        rest.strip_suffix(".read").map(|c| (c, false))
    }
}

impl<W> SystemState<W> {
    /// State with one model per subsystem and one channel per channel key
    /// found in `ground`.
    pub fn from_ground(ground: &GroundNet, world: W) -> Self {
        let mut state = SystemState {
            subsystems: BTreeMap::new(),
            channels: BTreeMap::new(),
            world,
        };
        for key in ground.operation_keys() {
            let sub = parse_scoped(key, "tf")
                .or_else(|| parse_scoped(key, "tick"))
                .map(|(s, _)| s);
            if let Some(sub) = sub {
                state
                    .subsystems
                    .entry(sub.clone())
                    .or_insert_with(|| SubsystemModel::new(&sub));
            }
            if let Some((name, _)) = parse_channel_key(key) {
                if let Some((producer, consumer)) = split_channel(name) {
                    for s in [&producer, &consumer] {
                        state
                            .subsystems
                            .entry(s.clone())
                            .or_insert_with(|| SubsystemModel::new(s));
                    }
                    state.channels.entry(name.to_string()).or_insert_with(|| Channel {
                        name: name.to_string(),
                        producer,
                        consumer,
                        ..Default::default()
                    });
                }
            }
        }
        for ch in state.channels.values() {
            let (p_short, c_short) = (short(&ch.producer).to_string(), short(&ch.consumer).to_string());
            if let Some(p) = state.subsystems.get_mut(&ch.producer) {
                p.outputs.entry(c_short).or_default();
            }
            if let Some(c) = state.subsystems.get_mut(&ch.consumer) {
                c.inputs.entry(p_short).or_default();
            }
        }
        state
    }

    /// Like [`from_ground`](Self::from_ground), also recording subsystem kinds.
    pub fn from_spec(spec: &SystemSpec, ground: &GroundNet, world: W) -> Self {
        let mut state = Self::from_ground(ground, world);
        for agent in &spec.agents {
            for sub in &agent.subsystems {
                if let Some(m) = state.subsystems.get_mut(&format!("{}.{}", agent.name, sub.name)) {
                    m.kind = Some(sub.kind);
                }
            }
        }
        state
    }
}

fn short(name: &str) -> &str {
    name.split_once('.').map_or(name, |(_, s)| s)
}

pub type TransitionFn = Arc<dyn Fn(&mut SubsystemModel) + Send + Sync>;
pub type SubsystemCondition = Arc<dyn Fn(&SubsystemModel) -> bool + Send + Sync>;

/// User transition functions and conditions by user key.
#[derive(Clone, Default)]
pub struct UserFunctions {
    tfs: BTreeMap<String, TransitionFn>,
    conds: BTreeMap<String, SubsystemCondition>,
}

impl UserFunctions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tf(&mut self, key: &str, f: impl Fn(&mut SubsystemModel) + Send + Sync + 'static) -> &mut Self {
        self.tfs.insert(key.to_string(), Arc::new(f));
        self
    }

    pub fn cond(&mut self, key: &str, f: impl Fn(&SubsystemModel) -> bool + Send + Sync + 'static) -> &mut Self {
        self.conds.insert(key.to_string(), Arc::new(f));
        self
    }

    pub fn get_tf(&self, key: &str) -> Option<&TransitionFn> {
        self.tfs.get(key)
    }

    pub fn get_cond(&self, key: &str) -> Option<&SubsystemCondition> {
        self.conds.get(key)
    }

    pub fn extend(&mut self, other: &UserFunctions) {
        self.tfs.extend(other.tfs.iter().map(|(k, v)| (k.clone(), v.clone())));
        self.conds
            .extend(other.conds.iter().map(|(k, v)| (k.clone(), v.clone())));
    }
}

fn tf_op<W: RealLayer>(sub: String, f: TransitionFn) -> OpFn<SystemState<W>> {
    Arc::new(move |state: &SystemState<W>| {
        let mut model = state.subsystems[&sub].clone();
        state.world.sense(&mut model);
        let f = f.clone();
        let sub = sub.clone();
        Box::new(move || {
            f(&mut model);
            Box::new(move |state: &mut SystemState<W>, log: &mut OpLog| {
                state.world.actuate(&model, log);
                state.subsystems.insert(sub, model);
            }) as Commit<SystemState<W>>
        }) as Job<SystemState<W>>
    })
}

fn tick_op<W: RealLayer>(sub: String) -> OpFn<SystemState<W>> {
    Arc::new(move |_: &SystemState<W>| {
        let sub = sub.clone();
        Box::new(move || {
            Box::new(move |state: &mut SystemState<W>, log: &mut OpLog| {
                let m = state.subsystems.get_mut(&sub).expect("subsystem exists");
                m.time += 1;
                log.time_increment(sub, m.time.to_string());
            }) as Commit<SystemState<W>>
        }) as Job<SystemState<W>>
    })
}

fn channel_op<W: RealLayer>(name: String, write: bool) -> OpFn<SystemState<W>> {
    Arc::new(move |_: &SystemState<W>| {
        let name = name.clone();
        Box::new(move || {
            Box::new(move |state: &mut SystemState<W>, log: &mut OpLog| {
                let ch = state.channels.get_mut(&name).expect("channel exists");
                if write {
                    let payload = state.subsystems[&ch.producer]
                        .outputs
                        .get(short(&ch.consumer))
                        .cloned()
                        .unwrap_or_default();
                    ch.seq += 1;
                    ch.data = Some(payload);
                    ch.fresh = true;
                    log.buffer_write(name, format!("seq={}", ch.seq));
                } else {
                    let fresh = ch.fresh;
                    ch.fresh = false;
                    if let Some(data) = &ch.data {
                        let consumer = state.subsystems.get_mut(&ch.consumer).expect("consumer exists");
                        consumer.inputs.insert(short(&ch.producer).to_string(), data.clone());
                    }
                    log.buffer_read(name, format!("seq={} fresh={}", ch.seq, u8::from(fresh)));
                }
            }) as Commit<SystemState<W>>
        }) as Job<SystemState<W>>
    })
}

/// Registry resolving every builder-generated key against `user`.
pub fn system_registry<W: RealLayer>(user: &UserFunctions) -> Registry<SystemState<W>> {
    let mut reg = Registry::new();
    let tfs = user.tfs.clone();
    reg.operation_resolver(move |key| {
        if let Some((sub, user_key)) = parse_scoped(key, "tf") {
            return tfs.get(user_key).map(|f| tf_op::<W>(sub, f.clone()));
        }
        if let Some((sub, rest)) = parse_scoped(key, "tick") {
            return rest.is_empty().then(|| tick_op::<W>(sub));
        }
        let (name, write) = parse_channel_key(key)?;
        split_channel(name)?;
        Some(channel_op::<W>(name.to_string(), write))
    });
    let conds = user.conds.clone();
    reg.condition_resolver(move |key| {
        let (sub, user_key) = parse_scoped(key, "cond")?;
        let c = conds.get(user_key)?.clone();
        Some(
            Arc::new(move |state: &SystemState<W>| state.subsystems.get(&sub).is_some_and(|m| c(m)))
                as CondFn<SystemState<W>>,
        )
    });
    reg
}
