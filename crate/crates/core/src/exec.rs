//! Concurrent execution of a ground net.
//!
//! A single scheduler loop owns the marking and the state `S`. Every
//! scheduler action is either a firing or the acceptance of one finished
//! operation. Place operations run in three phases:
//!
//! 1. *launch*, on the scheduler thread, reads the state and returns a job;
//! 2. the job runs on the worker pool, concurrently with other jobs and the
//!    scheduler, and returns a commit;
//! 3. the commit is applied to the state by the scheduler when it accepts
//!    the completion, after which the token becomes ready.
//!
//! Conditions are evaluated by the scheduler between commits, so they always
//! see a consistent snapshot. Because completions are accepted in an order
//! chosen by the policy (oldest first, or seeded random), the trace does not
//! depend on thread timing.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, TryRecvError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::condition::Condition;
use crate::net::{fire, tokens_ready, GroundNet, Marking, TransitionId};

pub type Commit<S> = Box<dyn FnOnce(&mut S, &mut OpLog) + Send>;
pub type Job<S> = Box<dyn FnOnce() -> Commit<S> + Send>;
pub type OpFn<S> = Arc<dyn Fn(&S) -> Job<S> + Send + Sync>;
pub type CondFn<S> = Arc<dyn Fn(&S) -> bool + Send + Sync>;

type OpResolver<S> = Box<dyn Fn(&str) -> Option<OpFn<S>> + Send + Sync>;
type CondResolver<S> = Box<dyn Fn(&str) -> Option<CondFn<S>> + Send + Sync>;

/// Operations and conditions by registry key.
///
/// Exact registrations win over resolvers; resolvers are consulted in the
/// order they were added.
pub struct Registry<S> {
    ops: BTreeMap<String, OpFn<S>>,
    conds: BTreeMap<String, CondFn<S>>,
    op_resolvers: Vec<OpResolver<S>>,
    cond_resolvers: Vec<CondResolver<S>>,
}

impl<S> Default for Registry<S> {
    fn default() -> Self {
        Registry {
            ops: BTreeMap::new(),
            conds: BTreeMap::new(),
            op_resolvers: Vec::new(),
            cond_resolvers: Vec::new(),
        }
    }
}

impl<S: 'static> Registry<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a three-phase operation.
    pub fn operation(&mut self, key: &str, op: impl Fn(&S) -> Job<S> + Send + Sync + 'static) -> &mut Self {
        self.ops.insert(key.to_string(), Arc::new(op));
        self
    }

    /// Registers an operation that does all of its work in the commit phase.
    pub fn instant(&mut self, key: &str, op: impl Fn(&mut S, &mut OpLog) + Send + Sync + 'static) -> &mut Self {
        let op = Arc::new(op);
        self.operation(key, move |_| {
            let op = op.clone();
            Box::new(move || Box::new(move |s: &mut S, log: &mut OpLog| op(s, log)) as Commit<S>)
        })
    }

    pub fn condition(&mut self, key: &str, cond: impl Fn(&S) -> bool + Send + Sync + 'static) -> &mut Self {
        self.conds.insert(key.to_string(), Arc::new(cond));
        self
    }

    pub fn operation_resolver(
        &mut self,
        resolver: impl Fn(&str) -> Option<OpFn<S>> + Send + Sync + 'static,
    ) -> &mut Self {
        self.op_resolvers.push(Box::new(resolver));
        self
    }

    pub fn condition_resolver(
        &mut self,
        resolver: impl Fn(&str) -> Option<CondFn<S>> + Send + Sync + 'static,
    ) -> &mut Self {
        self.cond_resolvers.push(Box::new(resolver));
        self
    }

    pub fn resolve_operation(&self, key: &str) -> Option<OpFn<S>> {
        self.ops
            .get(key)
            .cloned()
            .or_else(|| self.op_resolvers.iter().find_map(|r| r(key)))
    }

    pub fn resolve_condition(&self, key: &str) -> Option<CondFn<S>> {
        self.conds
            .get(key)
            .cloned()
            .or_else(|| self.cond_resolvers.iter().find_map(|r| r(key)))
    }

    /// Keys of `ground` that this registry cannot resolve.
    pub fn unresolved(&self, ground: &GroundNet) -> Vec<String> {
        let mut out: Vec<String> = ground
            .operation_keys()
            .into_iter()
            .filter(|k| self.resolve_operation(k).is_none())
            .map(str::to_string)
            .collect();
        out.extend(
            ground
                .condition_keys()
                .into_iter()
                .filter(|k| self.resolve_condition(k).is_none())
                .map(str::to_string),
        );
        out
    }
}

/// Wraps a leaf condition so it can be shared by several registries or
/// declared from a closure that does not need the state.
pub fn constant<S>(value: bool) -> CondFn<S> {
    Arc::new(move |_| value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Fire,
    OpStart,
    OpDone,
    BufferWrite,
    BufferRead,
    TimeIncrement,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Fire => "fire",
            EventKind::OpStart => "op_start",
            EventKind::OpDone => "op_done",
            EventKind::BufferWrite => "buffer_write",
            EventKind::BufferRead => "buffer_read",
            EventKind::TimeIncrement => "time_increment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            EventKind::Fire,
            EventKind::OpStart,
            EventKind::OpDone,
            EventKind::BufferWrite,
            EventKind::BufferRead,
            EventKind::TimeIncrement,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub seq: u64,
    /// Scheduler action counter at the time of the event.
    pub step: u64,
    pub kind: EventKind,
    pub subject: String,
    pub detail: String,
    /// Microseconds since the run started; only recorded when asked for.
    pub wall_us: Option<u64>,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.seq, self.step, self.kind, self.subject)?;
        if !self.detail.is_empty() {
            write!(f, "\t{}", self.detail)?;
        }
        if let Some(us) = self.wall_us {
            write!(f, "\twall_us={us}")?;
        }
        Ok(())
    }
}

pub const TRACE_HEADER: &str = "hpn-trace 1";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 48 + 16);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

/// Side effects reported by an operation's commit.
#[derive(Debug, Default)]
pub struct OpLog {
    events: Vec<(EventKind, String, String)>,
    stop: bool,
}

impl OpLog {
    pub fn buffer_write(&mut self, subject: impl Into<String>, detail: impl Into<String>) {
        self.events
            .push((EventKind::BufferWrite, subject.into(), detail.into()));
    }

    pub fn buffer_read(&mut self, subject: impl Into<String>, detail: impl Into<String>) {
        self.events.push((EventKind::BufferRead, subject.into(), detail.into()));
    }

    pub fn time_increment(&mut self, subject: impl Into<String>, detail: impl Into<String>) {
        self.events
            .push((EventKind::TimeIncrement, subject.into(), detail.into()));
    }

    /// Asks the scheduler to stop once running operations have drained.
    pub fn request_stop(&mut self) {
        self.stop = true;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Policy {
    /// Fire the lowest-index active transition; when none is active accept
    /// the oldest running operation.
    #[default]
    Deterministic,
    /// Choose uniformly among active transitions and running operations.
    Seeded(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepResult {
    Fired(TransitionId),
    /// An operation on this ground place completed and was committed.
    Completed(usize),
    /// Nothing active but operations still running; only returned by
    /// [`Executor::poll_step`].
    Quiescent,
    Terminated(Termination),
    /// Nothing active, nothing running, and the final place is not marked.
    Stalled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    FinalPlace,
    StopRequested,
    EmptyMarking,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Limit {
    Firings,
    WallTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    Terminated(Termination),
    Stalled,
    LimitReached(Limit),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Limits {
    pub max_firings: Option<u64>,
    pub wall_timeout: Option<Duration>,
}

impl Limits {
    pub fn firings(n: u64) -> Self {
        Limits {
            max_firings: Some(n),
            wall_timeout: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("place `{place}` uses unresolved operation `{key}`")]
    UnresolvedOperation { place: String, key: String },
    #[error("transition `{transition}` uses unresolved condition `{key}`")]
    UnresolvedCondition { transition: String, key: String },
    #[error("operation `{key}` on `{place}` panicked: {message}")]
    OperationPanicked {
        place: String,
        key: String,
        message: String,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Cloneable handle that stops a running executor from outside.
#[derive(Clone, Debug, Default)]
pub struct StopHandle(Arc<AtomicBool>);

impl StopHandle {
    pub fn stop(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

pub struct ExecOptions {
    pub policy: Policy,
    /// Worker threads for place operations.
    pub workers: usize,
    pub record_wall_time: bool,
    /// Every trace line is also written here as it is recorded.
    pub live: Option<Box<dyn Write + Send>>,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            policy: Policy::Deterministic,
            workers: 1,
            record_wall_time: false,
            live: None,
        }
    }
}

struct Running<S> {
    place: usize,
    rx: Receiver<std::thread::Result<Commit<S>>>,
    done: Option<std::thread::Result<Commit<S>>>,
}

enum Pick {
    Fire(usize),
    Complete(usize),
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

struct CompiledCondition<S> {
    expr: Condition,
    leaves: BTreeMap<String, CondFn<S>>,
}

pub struct Executor<S> {
    ground: GroundNet,
    marking: Marking,
    state: S,
    ops: Vec<Option<OpFn<S>>>,
    conds: Vec<Option<CompiledCondition<S>>>,
    policy: Policy,
    rng: Option<ChaCha8Rng>,
    pool: rayon::ThreadPool,
    running: VecDeque<Running<S>>,
    trace: Trace,
    live: Option<Box<dyn Write + Send>>,
    started: Option<Instant>,
    record_wall: bool,
    stop: StopHandle,
    steps: u64,
    firings: u64,
    initial_total: u64,
    net_change: i64,
}

impl<S: 'static> Executor<S> {
    /// Binds every key of `ground`; unresolved keys are configuration errors.
    pub fn new(ground: GroundNet, registry: &Registry<S>, state: S, options: ExecOptions) -> Result<Self, ExecError> {
        let mut ops = Vec::with_capacity(ground.places.len());
        for place in &ground.places {
            ops.push(match &place.operation {
                None => None,
                Some(key) => Some(
                    registry
                        .resolve_operation(key)
                        .ok_or_else(|| ExecError::UnresolvedOperation {
                            place: place.name.clone(),
                            key: key.clone(),
                        })?,
                ),
            });
        }
        let mut conds = Vec::with_capacity(ground.transitions.len());
        for t in &ground.transitions {
            if t.condition.is_true() {
                conds.push(None);
                continue;
            }
            let mut leaves = BTreeMap::new();
            for key in t.condition.keys() {
                let f = registry
                    .resolve_condition(key)
                    .ok_or_else(|| ExecError::UnresolvedCondition {
                        transition: t.name.clone(),
                        key: key.to_string(),
                    })?;
                leaves.insert(key.to_string(), f);
            }
            conds.push(Some(CompiledCondition {
                expr: t.condition.clone(),
                leaves,
            }));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers.max(1))
            .thread_name(|i| format!("hpn-op-{i}"))
            .build()
            .map_err(|e| ExecError::Pool(e.to_string()))?;
        let marking = ground.initial_marking();
        let initial_total = marking.total();
        let rng = match options.policy {
            Policy::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            Policy::Deterministic => None,
        };
        let mut exec = Executor {
            ground,
            marking,
            state,
            ops,
            conds,
            policy: options.policy,
            rng,
            pool,
            running: VecDeque::new(),
            trace: Trace::default(),
            live: options.live,
            started: options.record_wall_time.then(Instant::now),
            record_wall: options.record_wall_time,
            stop: StopHandle::default(),
            steps: 0,
            firings: 0,
            initial_total,
            net_change: 0,
        };
        for p in 0..exec.ground.places.len() {
            for _ in 0..exec.marking.pending(p) {
                exec.launch(p);
            }
        }
        Ok(exec)
    }

    pub fn ground(&self) -> &GroundNet {
        &self.ground
    }

    pub fn marking(&self) -> &Marking {
        &self.marking
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut S {
        &mut self.state
    }

    pub fn into_state(self) -> S {
        self.state
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Trace {
        std::mem::take(&mut self.trace)
    }

    pub fn firings(&self) -> u64 {
        self.firings
    }

    pub fn running(&self) -> usize {
        self.running.len()
    }

    pub fn stop_handle(&self) -> StopHandle {
        self.stop.clone()
    }

    /// Token total expected from the firing history alone.
    pub fn expected_total(&self) -> u64 {
        (self.initial_total as i64 + self.net_change) as u64
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    fn record(&mut self, kind: EventKind, subject: String, detail: String) {
        let event = TraceEvent {
            seq: self.trace.events.len() as u64,
            step: self.steps,
            kind,
            subject,
            detail,
            wall_us: if self.record_wall {
                self.started.map(|s| s.elapsed().as_micros() as u64)
            } else {
                None
            },
        };
        if let Some(sink) = &mut self.live {
            // A broken live sink must not stop execution.
            let _ = writeln!(sink, "{event}");
        }
        self.trace.events.push(event);
    }

    /// Evaluates the condition of transition `t` on the current state.
    pub fn evaluate_condition(&self, t: usize) -> bool {
        match &self.conds[t] {
            None => true,
            Some(c) => c.expr.eval(&mut |k| (c.leaves[k])(&self.state)),
        }
    }

    pub fn active(&self) -> Vec<TransitionId> {
        (0..self.ground.transitions.len())
            .filter(|&t| tokens_ready(&self.ground, &self.marking, t) && self.evaluate_condition(t))
            .map(|t| TransitionId(t as u32))
            .collect()
    }

    fn launch(&mut self, place: usize) {
        let op = self.ops[place]
            .clone()
            .expect("pending tokens only on operation places");
        let key = self.ground.places[place].operation.clone().unwrap_or_default();
        self.marking.launch(place);
        self.record(EventKind::OpStart, self.ground.places[place].name.clone(), key);
        let job = op(&self.state);
        let (tx, rx) = channel();
        self.pool.spawn(move || {
            let result = catch_unwind(AssertUnwindSafe(job));
            let _ = tx.send(result);
        });
        self.running.push_back(Running { place, rx, done: None });
    }

    fn fire_transition(&mut self, t: TransitionId) {
        self.marking = fire(&self.ground, &self.marking, t).expect("only active transitions are fired");
        let tr = &self.ground.transitions[t.index()];
        self.net_change += tr.out_degree() as i64 - tr.in_degree() as i64;
        self.firings += 1;
        let name = tr.name.clone();
        let outputs: Vec<(usize, u32)> = tr.outputs.clone();
        self.record(EventKind::Fire, name, String::new());
        for (p, _) in outputs {
            while self.marking.pending(p) > 0 {
                self.launch(p);
            }
        }
    }

    fn accept(&mut self, index: usize) -> Result<usize, ExecError> {
        let running = self.running.remove(index).expect("valid running index");
        let place = running.place;
        let key = self.ground.places[place].operation.clone().unwrap_or_default();
        let name = self.ground.places[place].name.clone();
        let result = match running.done {
            Some(result) => Ok(result),
            None => running.rx.recv(),
        };
        let commit = match result {
            Ok(Ok(commit)) => commit,
            Ok(Err(payload)) => {
                return Err(ExecError::OperationPanicked {
                    place: name,
                    key,
                    message: panic_message(payload),
                })
            }
            Err(_) => {
                return Err(ExecError::OperationPanicked {
                    place: name,
                    key,
                    message: "worker dropped the result".into(),
                })
            }
        };
        let mut log = OpLog::default();
        let applied = catch_unwind(AssertUnwindSafe(|| commit(&mut self.state, &mut log)));
        if let Err(payload) = applied {
            return Err(ExecError::OperationPanicked {
                place: name,
                key,
                message: panic_message(payload),
            });
        }
        for (kind, subject, detail) in log.events {
            self.record(kind, subject, detail);
        }
        if log.stop {
            self.stop.stop();
        }
        self.marking.complete(place);
        self.record(EventKind::OpDone, name, key);
        Ok(place)
    }

    /// Commits every running operation, oldest first.
    pub fn drain(&mut self) -> Result<(), ExecError> {
        while !self.running.is_empty() {
            self.steps += 1;
            self.accept(0)?;
        }
        Ok(())
    }

    fn final_marked(&self) -> bool {
        self.ground
            .final_place
            .is_some_and(|p| self.marking.count(p) > 0 && self.marking.ready(p) > 0)
    }

    fn check_terminated(&mut self) -> Result<Option<Termination>, ExecError> {
        if self.stop.is_stopped() {
            self.drain()?;
            return Ok(Some(Termination::StopRequested));
        }
        if self.final_marked() {
            self.drain()?;
            return Ok(Some(Termination::FinalPlace));
        }
        if self.running.is_empty() && self.marking.total() == 0 {
            return Ok(Some(Termination::EmptyMarking));
        }
        Ok(None)
    }

    /// One scheduler action. When nothing is active, blocks until the
    /// operation chosen by the policy finishes.
    pub fn step(&mut self) -> Result<StepResult, ExecError> {
        self.step_inner(true)
    }

    /// Like [`step`](Self::step) but never blocks: returns `Quiescent`
    /// instead of waiting on a running operation.
    pub fn poll_step(&mut self) -> Result<StepResult, ExecError> {
        self.step_inner(false)
    }

    fn step_inner(&mut self, block: bool) -> Result<StepResult, ExecError> {
        if let Some(t) = self.check_terminated()? {
            return Ok(StepResult::Terminated(t));
        }
        let active = self.active();
        if active.is_empty() && self.running.is_empty() {
            return Ok(StepResult::Stalled);
        }
        let pick = match &mut self.rng {
            None if active.is_empty() => Pick::Complete(0),
            None => Pick::Fire(0),
            Some(rng) => {
                let k = rng.random_range(0..active.len() + self.running.len());
                if k < active.len() {
                    Pick::Fire(k)
                } else {
                    Pick::Complete(k - active.len())
                }
            }
        };
        match pick {
            Pick::Fire(k) => {
                self.steps += 1;
                self.fire_transition(active[k]);
                Ok(StepResult::Fired(active[k]))
            }
            Pick::Complete(index) => {
                if !block {
                    let slot = &mut self.running[index];
                    if slot.done.is_none() {
                        match slot.rx.try_recv() {
                            Ok(result) => slot.done = Some(result),
                            Err(TryRecvError::Empty) => return Ok(StepResult::Quiescent),
                            Err(TryRecvError::Disconnected) => {}
                        }
                    }
                }
                self.steps += 1;
                let place = self.accept(index)?;
                Ok(StepResult::Completed(place))
            }
        }
    }

    pub fn run(&mut self, limits: Limits) -> Result<RunOutcome, ExecError> {
        let start = Instant::now();
        loop {
            if limits.max_firings.is_some_and(|m| self.firings >= m) {
                self.drain()?;
                return Ok(RunOutcome::LimitReached(Limit::Firings));
            }
            if limits.wall_timeout.is_some_and(|w| start.elapsed() >= w) {
                self.drain()?;
                return Ok(RunOutcome::LimitReached(Limit::WallTime));
            }
            match self.step()? {
                StepResult::Terminated(t) => return Ok(RunOutcome::Terminated(t)),
                StepResult::Stalled => return Ok(RunOutcome::Stalled),
                _ => {}
            }
        }
    }
}
