//! The line-follower example: one agent with a control subsystem `c`, a
//! virtual sensor receptor and a virtual motor effector, driving a simulated
//! differential-drive robot along a dark line.
//!
//! Sign conventions: `x` forward, `y` to the robot's left, angles counter
//! clockwise. The sensor the control table calls *left* sits at lateral
//! offset `-sensor_lateral`, so seeing the line only on that sensor turns the
//! robot clockwise, towards the line.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::Deserialize;
use thiserror::Error;

use crate::agent::{
    system_registry, BufferRecord, RealLayer, Schema, SubsystemModel, SystemState, UserFunctions, Value,
};
use crate::analysis::{preflight, Budget, Report};
use crate::builder::{assemble, BuildError, SystemSpec};
use crate::exec::{ExecError, ExecOptions, Executor, Limits, OpLog, RunOutcome, Trace};
use crate::net::{Hpn, NetError};

pub const DEFAULT_CONFIG: &str = include_str!("../assets/line_follower.toml");
pub const DEFAULT_SPEC: &str = include_str!("../assets/line_follower.spec");

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub v: f64,
    pub omega: f64,
    pub wheel_radius: f64,
    pub axle_width: f64,
    pub sensor_ahead: f64,
    pub sensor_lateral: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub dt: f64,
    pub duration: f64,
    pub line_width: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrackConfig {
    Oval { straight: f64, radius: f64 },
    Polyline { points: Vec<[f64; 2]>, closed: bool },
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub lost_timeout: f64,
    pub step_budget: u64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SubsystemNames {
    pub receptor: String,
    pub effector: String,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LfConfig {
    pub robot: RobotConfig,
    pub world: WorldConfig,
    pub track: TrackConfig,
    pub start: Pose,
    pub control: ControlConfig,
    pub subsystems: SubsystemNames,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("track file line {line}: {message}")]
    Track { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LfConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: LfConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn default_config() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("bundled config is valid")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("robot.wheel_radius", self.robot.wheel_radius),
            ("robot.axle_width", self.robot.axle_width),
            ("world.dt", self.world.dt),
            ("world.duration", self.world.duration),
            ("world.line_width", self.world.line_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Number of world steps in one run.
    pub fn total_steps(&self) -> u64 {
        (self.world.duration / self.world.dt).round() as u64
    }

    pub fn control_name(&self) -> String {
        let agent = self.subsystems.effector.split('.').next().unwrap_or_default();
        format!("{agent}.c")
    }
}

fn short(name: &str) -> &str {
    name.split_once('.').map_or(name, |(_, s)| s)
}

/// Line geometry.
#[derive(Clone, Debug, PartialEq)]
pub enum Track {
    /// Stadium centred at the origin: straights along `x` at `y = ±radius`.
    Oval {
        straight: f64,
        radius: f64,
    },
    Polyline {
        points: Vec<(f64, f64)>,
        closed: bool,
    },
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

impl Track {
    pub fn from_config(cfg: &TrackConfig) -> Self {
        match cfg {
            TrackConfig::Oval { straight, radius } => Track::Oval {
                straight: *straight,
                radius: *radius,
            },
            TrackConfig::Polyline { points, closed } => Track::Polyline {
                points: points.iter().map(|p| (p[0], p[1])).collect(),
                closed: *closed,
            },
        }
    }

    /// `hpn-track 1`, an optional `closed` line, then one `x y` pair per line.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let err = |line: usize, message: &str| ConfigError::Track {
            line,
            message: message.to_string(),
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, "hpn-track 1")) => {}
            Some((n, _)) => return Err(err(n, "expected `hpn-track 1`")),
            None => return Err(err(1, "empty track file")),
        }
        let mut points = Vec::new();
        let mut closed = false;
        for (n, line) in lines {
            if line == "closed" {
                closed = true;
                continue;
            }
            let xy: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| err(n, "expected two numbers"))?;
            if xy.len() != 2 {
                return Err(err(n, "expected two numbers"));
            }
            points.push((xy[0], xy[1]));
        }
        if points.len() < 2 {
            return Err(err(1, "a track needs at least two points"));
        }
        Ok(Track::Polyline { points, closed })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Distance from `(x, y)` to the centre line.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        match self {
            Track::Oval { straight, radius } => {
                let half = straight / 2.0;
                if x.abs() <= half {
                    (y.abs() - radius).abs()
                } else {
                    let cx = half.copysign(x);
                    ((x - cx).hypot(y) - radius).abs()
                }
            }
            Track::Polyline { points, closed } => {
                let mut best = f64::INFINITY;
                for w in points.windows(2) {
                    best = best.min(segment_distance((x, y), w[0], w[1]));
                }
                if *closed {
                    best = best.min(segment_distance((x, y), points[points.len() - 1], points[0]));
                }
                best
            }
        }
    }
}

/// Wheel speeds `(w_left, w_right)` for a body velocity.
pub fn inverse_kinematics(v_lin: f64, v_ang: f64, r: f64, b: f64) -> (f64, f64) {
    ((v_lin - v_ang * b / 2.0) / r, (v_lin + v_ang * b / 2.0) / r)
}

/// Body velocity `(v, ω)` for wheel speeds.
pub fn forward_kinematics(w_left: f64, w_right: f64, r: f64, b: f64) -> (f64, f64) {
    ((w_left + w_right) * r / 2.0, (w_right - w_left) * r / b)
}

/// Unicycle motion over `dt` along an exact arc.
pub fn integrate(pose: Pose, v: f64, w: f64, dt: f64) -> Pose {
    if w.abs() < 1e-12 {
        return Pose {
            x: pose.x + v * dt * pose.theta.cos(),
            y: pose.y + v * dt * pose.theta.sin(),
            theta: pose.theta,
        };
    }
    let theta = pose.theta + w * dt;
    Pose {
        x: pose.x + v / w * (theta.sin() - pose.theta.sin()),
        y: pose.y - v / w * (theta.cos() - pose.theta.cos()),
        theta,
    }
}

/// World positions of the left, middle and right sensors.
pub fn sensor_points(pose: Pose, robot: &RobotConfig) -> [(f64, f64); 3] {
    let (s, c) = pose.theta.sin_cos();
    let at = |lateral: f64| {
        (
            pose.x + robot.sensor_ahead * c - lateral * s,
            pose.y + robot.sensor_ahead * s + lateral * c,
        )
    };
    [at(-robot.sensor_lateral), at(0.0), at(robot.sensor_lateral)]
}

/// Reflected light: 0 on the line (inclusive edge), 1 on the floor.
pub fn intensity(track: &Track, line_width: f64, p: (f64, f64)) -> f64 {
    if track.distance(p.0, p.1) <= line_width / 2.0 {
        0.0
    } else {
        1.0
    }
}

/// Dark reading means the sensor sees the line.
pub fn tf_sensor(intensities: [f64; 3], threshold: f64) -> [bool; 3] {
    intensities.map(|i| i < threshold)
}

/// The control case table: `(v_lin, v_ang)` from the three sensor bits.
pub fn tf_control(left: bool, middle: bool, right: bool, v: f64, omega: f64) -> (f64, f64) {
    match (left, middle, right) {
        (true, true, true) => (v, 0.0),
        (true, true, false) => (v, -omega / 15.0),
        (true, false, false) => (v, -omega),
        (false, true, true) => (v, omega / 15.0),
        (false, false, true) => (v, omega),
        _ => (-v, -omega / 2.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSample {
    pub time: f64,
    pub pose: Pose,
    pub middle_on_line: bool,
}

/// Kinematic world standing in for the physical robot.
#[derive(Clone, Debug, PartialEq)]
pub struct LineWorld {
    cfg: Arc<LfConfig>,
    track: Track,
    pose: Pose,
    steps: u64,
    on_line: u64,
    distance: f64,
    log: Vec<PoseSample>,
}

impl LineWorld {
    pub fn new(cfg: Arc<LfConfig>, track: Track) -> Self {
        let pose = cfg.start;
        LineWorld {
            cfg,
            track,
            pose,
            steps: 0,
            on_line: 0,
            distance: 0.0,
            log: Vec::new(),
        }
    }

    pub fn config(&self) -> &LfConfig {
        &self.cfg
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.cfg.world.dt
    }

    pub fn finished(&self) -> bool {
        self.steps >= self.cfg.total_steps()
    }

    pub fn distance_travelled(&self) -> f64 {
        self.distance
    }

    /// Share of world steps after which the middle sensor was on the line.
    pub fn on_line_fraction(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.on_line as f64 / self.steps as f64
        }
    }

    pub fn pose_log(&self) -> &[PoseSample] {
        &self.log
    }

    pub fn render_pose_log(&self) -> String {
        let mut out = String::from("hpn-poses 1\n");
        for s in &self.log {
            writeln!(
                out,
                "{:.2}\t{:.6}\t{:.6}\t{:.6}\t{}",
                s.time,
                s.pose.x,
                s.pose.y,
                s.pose.theta,
                u8::from(s.middle_on_line)
            )
            .unwrap();
        }
        out
    }

    pub fn intensities(&self) -> [f64; 3] {
        sensor_points(self.pose, &self.cfg.robot).map(|p| intensity(&self.track, self.cfg.world.line_width, p))
    }

    /// Advances the robot by one time step with the given wheel speeds.
    pub fn step(&mut self, w_left: f64, w_right: f64) {
        let r = &self.cfg.robot;
        let (v, w) = forward_kinematics(w_left, w_right, r.wheel_radius, r.axle_width);
        self.pose = integrate(self.pose, v, w, self.cfg.world.dt);
        self.steps += 1;
        self.distance += v.abs() * self.cfg.world.dt;
        let middle = sensor_points(self.pose, r)[1];
        let on = intensity(&self.track, self.cfg.world.line_width, middle) < r.threshold;
        if on {
            self.on_line += 1;
        }
        self.log.push(PoseSample {
            time: self.time(),
            pose: self.pose,
            middle_on_line: on,
        });
    }
}

impl RealLayer for LineWorld {
    fn sense(&self, model: &mut SubsystemModel) {
        if model.name == self.cfg.subsystems.receptor {
            let [l, m, r] = self.intensities();
            let mut raw = raw_schema().record();
            raw.set_scalar("i_left", l);
            raw.set_scalar("i_middle", m);
            raw.set_scalar("i_right", r);
            model.inputs.insert("R".into(), raw);
        }
    }

    fn actuate(&mut self, model: &SubsystemModel, log: &mut OpLog) {
        if model.name != self.cfg.subsystems.effector {
            return;
        }
        if !self.finished() {
            let wheels = model.outputs.get("E").cloned().unwrap_or_default();
            self.step(wheels.scalar("w_left"), wheels.scalar("w_right"));
        }
        if self.finished() {
            log.request_stop();
        }
    }
}

fn schema(cell: &'static OnceLock<Arc<Schema>>, slots: &[(&str, Value)]) -> Arc<Schema> {
    cell.get_or_init(|| Schema::new(slots)).clone()
}

pub fn raw_schema() -> Arc<Schema> {
    static S: OnceLock<Arc<Schema>> = OnceLock::new();
    schema(
        &S,
        &[
            ("i_left", Value::Scalar(1.0)),
            ("i_middle", Value::Scalar(1.0)),
            ("i_right", Value::Scalar(1.0)),
        ],
    )
}

pub fn sensor_schema() -> Arc<Schema> {
    static S: OnceLock<Arc<Schema>> = OnceLock::new();
    schema(
        &S,
        &[
            ("left", Value::Bool(false)),
            ("middle", Value::Bool(false)),
            ("right", Value::Bool(false)),
            ("valid", Value::Bool(false)),
        ],
    )
}

pub fn command_schema() -> Arc<Schema> {
    static S: OnceLock<Arc<Schema>> = OnceLock::new();
    schema(&S, &[("v_lin", Value::Scalar(0.0)), ("v_ang", Value::Scalar(0.0))])
}

pub fn wheel_schema() -> Arc<Schema> {
    static S: OnceLock<Arc<Schema>> = OnceLock::new();
    schema(&S, &[("w_left", Value::Scalar(0.0)), ("w_right", Value::Scalar(0.0))])
}

fn record_or_default(m: &SubsystemModel, peer: &str, schema: fn() -> Arc<Schema>) -> BufferRecord {
    m.inputs.get(peer).cloned().unwrap_or_else(|| schema().record())
}

/// Receptor: raw intensities to line bits for the control subsystem.
pub fn sensor_step(cfg: &LfConfig, m: &mut SubsystemModel) {
    let raw = record_or_default(m, "R", raw_schema);
    let bits = tf_sensor(
        [raw.scalar("i_left"), raw.scalar("i_middle"), raw.scalar("i_right")],
        cfg.robot.threshold,
    );
    let mut out = sensor_schema().record();
    out.set_bool("left", bits[0]);
    out.set_bool("middle", bits[1]);
    out.set_bool("right", bits[2]);
    out.set_bool("valid", true);
    m.outputs.insert(short(&cfg.control_name()).to_string(), out);
}

/// Establishes the connection with the robot.
pub fn init_step(m: &mut SubsystemModel) {
    m.memory.set_bool("connected", true);
}

pub fn connected(m: &SubsystemModel) -> bool {
    m.memory.bool("connected")
}

/// Control: case table on the latest sensor bits, command for the motor.
///
/// Until the first sensor reading arrives the command is zero.
pub fn control_step(cfg: &LfConfig, m: &mut SubsystemModel) {
    let x = record_or_default(m, short(&cfg.subsystems.receptor), sensor_schema);
    let (l, mid, r) = (x.bool("left"), x.bool("middle"), x.bool("right"));
    let (v_lin, v_ang) = if x.bool("valid") {
        tf_control(l, mid, r, cfg.robot.v, cfg.robot.omega)
    } else {
        (0.0, 0.0)
    };
    let mut y = command_schema().record();
    y.set_scalar("v_lin", v_lin);
    y.set_scalar("v_ang", v_ang);
    m.outputs.insert(short(&cfg.subsystems.effector).to_string(), y);
    let lost = x.bool("valid") && !(l || mid || r);
    let lost_steps = if lost { m.memory.scalar("lost_steps") + 1.0 } else { 0.0 };
    m.memory.set_scalar("lost_steps", lost_steps);
    let steps = m.memory.scalar("steps") + 1.0;
    m.memory.set_scalar("steps", steps);
}

/// Error condition: every sensor off the line for longer than the timeout,
/// counted in control iterations of one world step each.
pub fn lost(cfg: &LfConfig, m: &SubsystemModel) -> bool {
    m.memory.scalar("lost_steps") * cfg.world.dt > cfg.control.lost_timeout
}

/// Terminal condition: the control step budget is used up.
pub fn done(cfg: &LfConfig, m: &SubsystemModel) -> bool {
    m.memory.scalar("steps") >= cfg.control.step_budget as f64
}

/// Effector: inverse kinematics for the wheel motors.
pub fn motor_step(cfg: &LfConfig, m: &mut SubsystemModel) {
    let x = record_or_default(m, short(&cfg.control_name()), command_schema);
    let (wl, wr) = inverse_kinematics(
        x.scalar("v_lin"),
        x.scalar("v_ang"),
        cfg.robot.wheel_radius,
        cfg.robot.axle_width,
    );
    let mut y = wheel_schema().record();
    y.set_scalar("w_left", wl);
    y.set_scalar("w_right", wr);
    m.outputs.insert("E".into(), y);
}

/// All user keys of the bundled spec.
pub fn functions(cfg: &Arc<LfConfig>) -> UserFunctions {
    let mut u = UserFunctions::new();
    {
        let cfg = cfg.clone();
        u.tf("lf.sensor", move |m| sensor_step(&cfg, m));
    }
    u.tf("lf.init", init_step);
    {
        let cfg = cfg.clone();
        u.tf("lf.control", move |m| control_step(&cfg, m));
    }
    {
        let cfg = cfg.clone();
        u.tf("lf.motor", move |m| motor_step(&cfg, m));
    }
    u.cond("lf.connected", connected);
    {
        let cfg = cfg.clone();
        u.cond("lf.lost", move |m| lost(&cfg, m));
    }
    {
        let cfg = cfg.clone();
        u.cond("lf.done", move |m| done(&cfg, m));
    }
    u.cond("never", |_| false);
    u
}

pub fn default_spec() -> SystemSpec {
    crate::spec_file::parse_spec(DEFAULT_SPEC).expect("bundled spec is valid")
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("analysis failed:\n{}", .0.render())]
    Analysis(Report),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Default)]
pub struct SimOptions {
    pub exec: ExecOptions,
    pub max_firings: Option<u64>,
    /// Execute without the page and safeness checks.
    pub skip_analysis: bool,
}

pub struct SimResult {
    pub outcome: RunOutcome,
    pub trace: Trace,
    pub firings: u64,
    pub state: SystemState<LineWorld>,
}

impl SimResult {
    pub fn world(&self) -> &LineWorld {
        &self.state.world
    }

    pub fn summary(&self) -> String {
        let w = self.world();
        let p = w.pose();
        format!(
            "outcome={:?}\nsimulated_s={:.2}\non_line_fraction={:.4}\ndistance_m={:.4}\nfinal_pose={:.4} {:.4} {:.4}\nfirings={}\n",
            self.outcome,
            w.time(),
            w.on_line_fraction(),
            w.distance_travelled(),
            p.x,
            p.y,
            p.theta,
            self.firings
        )
    }
}

/// Checks, flattens and runs a line-follower hierarchy.
pub fn simulate_hpn(
    hpn: &Hpn,
    spec: Option<&SystemSpec>,
    user: &UserFunctions,
    cfg: Arc<LfConfig>,
    track: Track,
    options: SimOptions,
) -> Result<SimResult, SimError> {
    if !options.skip_analysis {
        let report = preflight(hpn, Budget::default())?;
        if !report.is_clean() {
            return Err(SimError::Analysis(report));
        }
    }
    let ground = hpn.flatten()?;
    let world = LineWorld::new(cfg, track);
    let state = match spec {
        Some(spec) => SystemState::from_spec(spec, &ground, world),
        None => SystemState::from_ground(&ground, world),
    };
    let registry = system_registry::<LineWorld>(user);
    let mut exec = Executor::new(ground, &registry, state, options.exec)?;
    let outcome = exec.run(Limits {
        max_firings: options.max_firings,
        wall_timeout: None,
    })?;
    let trace = exec.take_trace();
    let firings = exec.firings();
    Ok(SimResult {
        outcome,
        trace,
        firings,
        state: exec.into_state(),
    })
}

/// Assembles `spec` and runs it with the bundled functions.
pub fn simulate(
    spec: &SystemSpec,
    cfg: Arc<LfConfig>,
    track: Track,
    options: SimOptions,
) -> Result<SimResult, SimError> {
    let hpn = assemble(spec)?.hpn;
    let user = functions(&cfg);
    simulate_hpn(&hpn, Some(spec), &user, cfg, track, options)
}
