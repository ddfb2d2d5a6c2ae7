//! Controller source generation.
//!
//! A net is emitted element by element through small templates into a
//! standalone Rust crate that links this library, rebuilds the hierarchy
//! with [`runtime::NetWriter`], flattens it at startup and runs it with the
//! line-follower world. Transition-function bodies come from a fragments
//! file and are spliced verbatim.
//!
//! Templates use `${slot}` placeholders; each template may only use the
//! slots declared for its element kind.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::agent::parse_scoped;
use crate::format::{content_lines, expect_header, ParseError};
use crate::net::{Hpn, NetError, NetId, Node};

pub const FRAGMENTS_HEADER: &str = "hpn-fragments 1";
pub const LINE_FOLLOWER_FRAGMENTS: &str = include_str!("../assets/line_follower.fragments");

/// Per-element line budgets of the original C++ templates, for comparison.
pub const REFERENCE_PROFILE: SizeProfile = SizeProfile {
    constant: f64::NAN,
    per_place: 6.0,
    per_transition: 6.0,
    per_arc: 1.0,
    per_page: 48.0,
};

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("no fragment binds `{0}`")]
    UnresolvedBinding(String),
    #[error("fragment `{key}` is a {found} body but the net uses it as a {expected}")]
    BindingKind {
        key: String,
        expected: FragmentKind,
        found: FragmentKind,
    },
    #[error("template `{template}` uses undeclared slot `{slot}`")]
    SlotMismatch { template: &'static str, slot: String },
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("fragments {0}")]
    Fragments(#[from] ParseError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FragmentKind {
    Tf,
    Cond,
}

impl std::fmt::Display for FragmentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FragmentKind::Tf => "tf",
            FragmentKind::Cond => "cond",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub kind: FragmentKind,
    pub body: String,
}

/// Parses `@@ tf <key>` / `@@ cond <key>` sections; each body runs to the
/// next marker.
pub fn parse_fragments(text: &str) -> Result<BTreeMap<String, Fragment>, ParseError> {
    let mut lines = content_lines(text);
    expect_header(&mut lines, FRAGMENTS_HEADER)?;
    let mut out: BTreeMap<String, Fragment> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (n, line) in lines {
        if let Some(rest) = line.strip_prefix("@@") {
            let words: Vec<&str> = rest.split_whitespace().collect();
            let kind = match words.first() {
                Some(&"tf") => FragmentKind::Tf,
                Some(&"cond") => FragmentKind::Cond,
                _ => return Err(ParseError::new(n, "expected `@@ tf <key>` or `@@ cond <key>`")),
            };
            let [_, key] = words[..] else {
                return Err(ParseError::new(n, "expected exactly one key"));
            };
            if out.contains_key(key) {
                return Err(ParseError::new(n, format!("duplicate fragment `{key}`")));
            }
            out.insert(
                key.to_string(),
                Fragment {
                    kind,
                    body: String::new(),
                },
            );
            current = Some(key.to_string());
            continue;
        }
        let key = current
            .as_ref()
            .ok_or_else(|| ParseError::new(n, "body outside of a fragment"))?;
        let body = &mut out.get_mut(key).unwrap().body;
        if !body.is_empty() {
            body.push(' ');
        }
        body.push_str(line);
    }
    if let Some((key, _)) = out.iter().find(|(_, f)| f.body.is_empty()) {
        return Err(ParseError::new(0, format!("fragment `{key}` has no body")));
    }
    Ok(out)
}

/// Templates plus bindings and output layout.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionPlan {
    pub manifest: String,
    pub header: String,
    pub place: String,
    pub transition: String,
    pub arc: String,
    pub page: String,
    /// Inline value of a place's `${fusion}` slot.
    pub fusion: String,
    pub no_fusion: String,
    pub bindings_header: String,
    pub binding: String,
    pub footer: String,
    /// User key to spliced body.
    pub fragments: BTreeMap<String, Fragment>,
    pub package: String,
    /// Path of this library, used as the generated crate's dependency.
    pub runtime_path: String,
    /// Embedded default world configuration.
    pub config: String,
    /// Lockfile copied into the output, when given.
    pub lockfile: Option<String>,
}

const MANIFEST: &str = r#"[package]
name = "${package}"
version = "0.1.0"
edition = "2021"

[dependencies]
hpn-core = { path = ${runtime}, default-features = false }

[workspace]
"#;

const HEADER: &str = r#"// Generated by `hpn generate`. Do not edit.
#![allow(unused_variables)]

use hpn_core::codegen::runtime::*;

fn build_net() -> Result<Hpn, WriteError> {
    let mut w = NetWriter::new(${root})?;
"#;

const PLACE: &str = "    w.place(${net}, ${name}, ${operation}, ${initial}, ${flags}, ${fusion})?;\n";
const TRANSITION: &str = "    w.transition(${net}, ${name}, ${condition})?;\n";
const ARC: &str = "    w.arc(${net}, ${source}, ${target})?;\n";
const PAGE: &str = "    w.page(${net}, ${name}, ${inner})?;\n";
const FUSION: &str = "Some(${group})";
const NO_FUSION: &str = "None";

const BINDINGS_HEADER: &str = r#"    w.finish()
}

fn functions(cfg: &Arc<LfConfig>) -> UserFunctions {
    let mut u = UserFunctions::new();
"#;

const BINDING: &str = "    { let cfg = cfg.clone(); u.${kind}(${key}, move ${body}); }\n";

const FOOTER: &str = r#"    u
}

fn main() {
    std::process::exit(generated_main(build_net, functions, include_str!("../config.toml")));
}
"#;

impl EmissionPlan {
    /// Default templates with no bindings and the bundled world config.
    pub fn new(runtime_path: &Path) -> Self {
        EmissionPlan {
            manifest: MANIFEST.into(),
            header: HEADER.into(),
            place: PLACE.into(),
            transition: TRANSITION.into(),
            arc: ARC.into(),
            page: PAGE.into(),
            fusion: FUSION.into(),
            no_fusion: NO_FUSION.into(),
            bindings_header: BINDINGS_HEADER.into(),
            binding: BINDING.into(),
            footer: FOOTER.into(),
            fragments: BTreeMap::new(),
            package: "hpn-controller".into(),
            runtime_path: runtime_path.display().to_string(),
            config: crate::line_follower::DEFAULT_CONFIG.into(),
            lockfile: None,
        }
    }

    /// Default templates bound to the bundled line-follower fragments.
    pub fn line_follower(runtime_path: &Path) -> Self {
        let mut plan = Self::new(runtime_path);
        plan.fragments = parse_fragments(LINE_FOLLOWER_FRAGMENTS).expect("bundled fragments are valid");
        plan.package = "line-follower-controller".into();
        plan
    }

    /// Plan for this crate's own location.
    pub fn local() -> Self {
        Self::new(Path::new(env!("CARGO_MANIFEST_DIR")))
    }
}

fn lit(s: &str) -> String {
    format!("{s:?}")
}

fn render(template: &'static str, text: &str, slots: &[(&str, &str)]) -> Result<String, CodegenError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or_else(|| CodegenError::SlotMismatch {
            template,
            slot: after.chars().take(16).collect(),
        })?;
        let name = &after[..end];
        let value =
            slots
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| CodegenError::SlotMismatch {
                    template,
                    slot: name.to_string(),
                })?;
        out.push_str(value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Generated files by relative path.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SourceTree {
    pub files: BTreeMap<String, String>,
}

impl SourceTree {
    pub fn line_count(&self) -> usize {
        self.files.values().map(|f| f.lines().count()).sum()
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CodegenError> {
        for (rel, text) in &self.files {
            let path = dir.join(rel);
            let io = |source| CodegenError::Io {
                path: path.display().to_string(),
                source,
            };
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
            std::fs::write(&path, text).map_err(io)?;
        }
        Ok(())
    }
}

/// User keys referenced by the flattened net, by kind.
fn user_bindings(hpn: &Hpn) -> Result<BTreeSet<(String, FragmentKind)>, CodegenError> {
    let ground = hpn.flatten()?;
    let mut keys = BTreeSet::new();
    for key in ground.operation_keys() {
        if let Some((_, user)) = parse_scoped(key, "tf") {
            keys.insert((user.to_string(), FragmentKind::Tf));
        } else if key.starts_with("tick.") || key.starts_with("chan.") {
            continue;
        } else {
            return Err(CodegenError::UnresolvedBinding(key.to_string()));
        }
    }
    for key in ground.condition_keys() {
        match parse_scoped(key, "cond") {
            Some((_, user)) => keys.insert((user.to_string(), FragmentKind::Cond)),
            None => return Err(CodegenError::UnresolvedBinding(key.to_string())),
        };
    }
    Ok(keys)
}

/// Emits the controller crate for `hpn`.
pub fn generate(hpn: &Hpn, plan: &EmissionPlan) -> Result<SourceTree, CodegenError> {
    let bindings = user_bindings(hpn)?;
    let mut main = render("header", &plan.header, &[("root", &lit(hpn.net(hpn.root()).name()))])?;
    for (id, _) in hpn.page_tree()? {
        emit_net(hpn, id, plan, &mut main)?;
    }
    main.push_str(&render("bindings_header", &plan.bindings_header, &[])?);
    for (key, kind) in &bindings {
        let fragment = plan
            .fragments
            .get(key)
            .ok_or_else(|| CodegenError::UnresolvedBinding(key.clone()))?;
        if fragment.kind != *kind {
            return Err(CodegenError::BindingKind {
                key: key.clone(),
                expected: *kind,
                found: fragment.kind,
            });
        }
        main.push_str(&render(
            "binding",
            &plan.binding,
            &[
                ("kind", &kind.to_string()),
                ("key", &lit(key)),
                ("body", &fragment.body),
            ],
        )?);
    }
    main.push_str(&render("footer", &plan.footer, &[])?);

    let mut tree = SourceTree::default();
    tree.files.insert(
        "Cargo.toml".into(),
        render(
            "manifest",
            &plan.manifest,
            &[("package", &plan.package), ("runtime", &lit(&plan.runtime_path))],
        )?,
    );
    tree.files.insert("src/main.rs".into(), main);
    tree.files.insert("config.toml".into(), plan.config.clone());
    if let Some(lock) = &plan.lockfile {
        tree.files.insert("Cargo.lock".into(), lock.clone());
    }
    Ok(tree)
}

fn emit_net(hpn: &Hpn, id: NetId, plan: &EmissionPlan, out: &mut String) -> Result<(), CodegenError> {
    let net = hpn.net(id);
    let net_name = lit(net.name());
    for (i, p) in net.places().iter().enumerate() {
        let fusion = match hpn.fusion_of(id, crate::PlaceId(i as u32)) {
            Some(g) => render("fusion", &plan.fusion, &[("group", &lit(&hpn.fusions()[g].name))])?,
            None => render("no_fusion", &plan.no_fusion, &[])?,
        };
        let operation = match &p.operation {
            Some(op) => format!("Some({})", lit(op)),
            None => "None".into(),
        };
        let flags = format!(
            "{}{}",
            if p.is_input { "i" } else { "" },
            if p.is_output { "o" } else { "" }
        );
        out.push_str(&render(
            "place",
            &plan.place,
            &[
                ("net", &net_name),
                ("name", &lit(&p.name)),
                ("operation", &operation),
                ("initial", &p.initial.to_string()),
                ("flags", &lit(&flags)),
                ("fusion", &fusion),
            ],
        )?);
    }
    for t in net.transitions() {
        let condition = if t.condition.is_true() {
            "None".to_string()
        } else {
            format!("Some({})", lit(&t.condition.to_string()))
        };
        out.push_str(&render(
            "transition",
            &plan.transition,
            &[("net", &net_name), ("name", &lit(&t.name)), ("condition", &condition)],
        )?);
    }
    for g in net.pages() {
        out.push_str(&render(
            "page",
            &plan.page,
            &[
                ("net", &net_name),
                ("name", &lit(&g.name)),
                ("inner", &lit(hpn.net(g.inner).name())),
            ],
        )?);
    }
    for a in net.arcs() {
        let name = |n: Node| lit(net.node_name(n));
        out.push_str(&render(
            "arc",
            &plan.arc,
            &[
                ("net", &net_name),
                ("source", &name(a.source)),
                ("target", &name(a.target)),
            ],
        )?);
    }
    Ok(())
}

/// Affine line-count model `constant + Σ per_x · x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeProfile {
    pub constant: f64,
    pub per_place: f64,
    pub per_transition: f64,
    pub per_arc: f64,
    pub per_page: f64,
}

impl SizeProfile {
    pub fn predict(&self, places: usize, transitions: usize, arcs: usize, pages: usize) -> f64 {
        self.constant
            + self.per_place * places as f64
            + self.per_transition * transitions as f64
            + self.per_arc * arcs as f64
            + self.per_page * pages as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeSample {
    pub places: usize,
    pub transitions: usize,
    pub arcs: usize,
    pub pages: usize,
    pub lines: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeReport {
    pub measured: SizeProfile,
    /// Largest absolute deviation of a sample from the fitted model.
    pub max_residual: f64,
    pub samples: Vec<SizeSample>,
}

impl SizeReport {
    pub fn render(&self) -> String {
        let p = &self.measured;
        let r = &REFERENCE_PROFILE;
        let mut out = String::from("hpn-size 1\n");
        out.push_str(&format!(
            "measured constant={:.3} place={:.3} transition={:.3} arc={:.3} page={:.3}\n",
            p.constant, p.per_place, p.per_transition, p.per_arc, p.per_page
        ));
        out.push_str(&format!(
            "reference place={} transition={} arc={} page={}\n",
            r.per_place, r.per_transition, r.per_arc, r.per_page
        ));
        out.push_str(&format!(
            "max_residual={:.3e}\nsamples={}\n",
            self.max_residual,
            self.samples.len()
        ));
        for s in &self.samples {
            out.push_str(&format!(
                "sample places={} transitions={} arcs={} pages={} lines={}\n",
                s.places, s.transitions, s.arcs, s.pages, s.lines
            ));
        }
        out
    }
}

/// Generates every net and fits line count against element counts.
#[cfg(feature = "size-fit")]
pub fn measure_size(nets: &[Hpn], plan: &EmissionPlan) -> Result<SizeReport, CodegenError> {
    use nalgebra::{DMatrix, DVector};

    if nets.len() < 5 {
        return Err(CodegenError::DegenerateCorpus(format!(
            "{} nets given, at least 5 are needed",
            nets.len()
        )));
    }
    let mut samples = Vec::with_capacity(nets.len());
    for hpn in nets {
        let c = hpn.counts()?;
        samples.push(SizeSample {
            places: c.places,
            transitions: c.transitions,
            arcs: c.arcs,
            pages: c.pages,
            lines: generate(hpn, plan)?.line_count(),
        });
    }
    let x = DMatrix::from_fn(samples.len(), 5, |i, j| {
        let s = &samples[i];
        [1, s.places, s.transitions, s.arcs, s.pages][j] as f64
    });
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.lines as f64));
    let svd = x.clone().svd(true, true);
    let rank = svd.rank(1e-9 * svd.singular_values.max().max(1.0));
    if rank < 5 {
        return Err(CodegenError::DegenerateCorpus(format!(
            "element counts span rank {rank}, 5 is needed"
        )));
    }
    let c = svd
        .solve(&y, 1e-12)
        .map_err(|e| CodegenError::DegenerateCorpus(e.to_string()))?;
    let max_residual = (&x * &c - &y).amax();
    Ok(SizeReport {
        measured: SizeProfile {
            constant: c[0],
            per_place: c[1],
            per_transition: c[2],
            per_arc: c[3],
            per_page: c[4],
        },
        max_residual,
        samples,
    })
}

/// Items used by generated controllers.
pub mod runtime {
    use std::collections::HashMap;
    use std::io::Write as _;
    use std::path::PathBuf;

    use thiserror::Error;

    pub use crate::agent::{SubsystemModel, UserFunctions};
    pub use crate::line_follower::{self, LfConfig};
    pub use crate::net::Hpn;
    pub use std::sync::Arc;

    use crate::condition::{Condition, ConditionParseError};
    use crate::exec::{ExecOptions, Policy, RunOutcome};
    use crate::line_follower::{simulate_hpn, SimError, SimOptions, Track};
    use crate::net::{NetError, NetId, PlaceId};

    #[derive(Debug, Error)]
    pub enum WriteError {
        #[error(transparent)]
        Net(#[from] NetError),
        #[error(transparent)]
        Condition(#[from] ConditionParseError),
    }

    /// Rebuilds a hierarchy one element at a time. Nets are created on first
    /// mention and fusion groups are recorded when the writer finishes.
    pub struct NetWriter {
        hpn: Hpn,
        fusions: Vec<(String, Vec<(NetId, PlaceId)>)>,
    }

    impl NetWriter {
        pub fn new(root: &str) -> Result<Self, WriteError> {
            Ok(NetWriter {
                hpn: Hpn::new(root)?,
                fusions: Vec::new(),
            })
        }

        fn net(&mut self, name: &str) -> Result<NetId, WriteError> {
            match self.hpn.net_by_name(name) {
                Some(id) => Ok(id),
                None => Ok(self.hpn.add_net(name)?),
            }
        }

        pub fn place(
            &mut self,
            net: &str,
            name: &str,
            operation: Option<&str>,
            initial: u32,
            flags: &str,
            fusion: Option<&str>,
        ) -> Result<(), WriteError> {
            let id = self.net(net)?;
            let g = self.hpn.net_mut(id);
            let p = g.add_place(name, operation)?;
            if flags.contains('i') {
                g.set_input(p);
            }
            if flags.contains('o') {
                g.set_output(p);
            }
            if initial > 0 {
                g.set_initial(p, initial);
            }
            if let Some(group) = fusion {
                match self.fusions.iter_mut().find(|(n, _)| n == group) {
                    Some((_, members)) => members.push((id, p)),
                    None => self.fusions.push((group.to_string(), vec![(id, p)])),
                }
            }
            Ok(())
        }

        pub fn transition(&mut self, net: &str, name: &str, condition: Option<&str>) -> Result<(), WriteError> {
            let id = self.net(net)?;
            let condition = condition.map(Condition::parse).transpose()?;
            self.hpn.net_mut(id).add_transition(name, condition)?;
            Ok(())
        }

        pub fn page(&mut self, net: &str, name: &str, inner: &str) -> Result<(), WriteError> {
            let id = self.net(net)?;
            let inner = self.net(inner)?;
            self.hpn.net_mut(id).add_page(name, inner)?;
            Ok(())
        }

        pub fn arc(&mut self, net: &str, source: &str, target: &str) -> Result<(), WriteError> {
            let id = self.net(net)?;
            self.hpn.net_mut(id).connect_named(source, target)?;
            Ok(())
        }

        pub fn finish(mut self) -> Result<Hpn, WriteError> {
            for (name, members) in &self.fusions {
                self.hpn.fuse(name, members)?;
            }
            Ok(self.hpn)
        }
    }

    /// Default worker count: one per subsystem.
    pub fn subsystem_count(hpn: &Hpn) -> Result<usize, NetError> {
        let ground = hpn.flatten()?;
        let subs: std::collections::BTreeSet<String> = ground
            .operation_keys()
            .into_iter()
            .filter_map(|k| crate::agent::parse_scoped(k, "tick").map(|(s, _)| s))
            .collect();
        Ok(subs.len().max(1))
    }

    const USAGE: &str = "usage: <controller> [--config FILE] [--track FILE] [--seed N] [--workers N] \
[--max-firings N] [--trace-out FILE] [--pose-out FILE] [--skip-analysis]";

    #[derive(Debug, Default)]
    struct Args {
        config: Option<PathBuf>,
        track: Option<PathBuf>,
        seed: Option<u64>,
        workers: Option<usize>,
        max_firings: Option<u64>,
        trace_out: Option<PathBuf>,
        pose_out: Option<PathBuf>,
        skip_analysis: bool,
    }

    fn parse_args(mut it: impl Iterator<Item = String>) -> Result<Args, String> {
        let mut args = Args::default();
        while let Some(flag) = it.next() {
            if flag == "--skip-analysis" {
                args.skip_analysis = true;
                continue;
            }
            let value = it.next().ok_or_else(|| format!("{flag} needs a value"))?;
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| format!("{flag}: expected a number, found `{v}`"))
            };
            match flag.as_str() {
                "--config" => args.config = Some(value.into()),
                "--track" => args.track = Some(value.into()),
                "--seed" => args.seed = Some(num(&value)?),
                "--workers" => args.workers = Some(num(&value)? as usize),
                "--max-firings" => args.max_firings = Some(num(&value)?),
                "--trace-out" => args.trace_out = Some(value.into()),
                "--pose-out" => args.pose_out = Some(value.into()),
                other => return Err(format!("unknown flag `{other}`")),
            }
        }
        Ok(args)
    }

    /// Entry point of a generated controller. Returns the process exit code:
    /// 0 ok, 1 usage, 2 invalid input, 3 analysis violation, 4 limit reached.
    pub fn generated_main(
        build: fn() -> Result<Hpn, WriteError>,
        functions: fn(&Arc<LfConfig>) -> UserFunctions,
        default_config: &str,
    ) -> i32 {
        let args = match parse_args(std::env::args().skip(1)) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("{e}\n{USAGE}");
                return 1;
            }
        };
        let env: HashMap<String, String> = std::env::vars().collect();
        match run(args, &env, build, functions, default_config) {
            Ok(code) => code,
            Err((code, msg)) => {
                eprintln!("error: {msg}");
                code
            }
        }
    }

    fn run(
        args: Args,
        env: &HashMap<String, String>,
        build: fn() -> Result<Hpn, WriteError>,
        functions: fn(&Arc<LfConfig>) -> UserFunctions,
        default_config: &str,
    ) -> Result<i32, (i32, String)> {
        let invalid = |e: &dyn std::fmt::Display| (2, e.to_string());
        let config_path = args.config.or_else(|| env.get("HPN_CONFIG").map(PathBuf::from));
        let cfg = match config_path {
            Some(p) => LfConfig::load(&p),
            None => LfConfig::parse(default_config),
        }
        .map_err(|e| invalid(&e))?;
        let cfg = Arc::new(cfg);
        let track = match &args.track {
            Some(p) => Track::load(p).map_err(|e| invalid(&e))?,
            None => Track::from_config(&cfg.track),
        };
        let hpn = build().map_err(|e| invalid(&e))?;
        let workers = match args.workers {
            Some(w) => w,
            None => match env.get("HPN_WORKERS") {
                Some(w) => w
                    .parse()
                    .map_err(|_| (1, format!("HPN_WORKERS: expected a number, found `{w}`")))?,
                None => subsystem_count(&hpn).map_err(|e| invalid(&e))?,
            },
        };
        let options = SimOptions {
            exec: ExecOptions {
                policy: args.seed.map_or(Policy::Deterministic, Policy::Seeded),
                workers: workers.max(1),
                ..ExecOptions::default()
            },
            max_firings: args.max_firings,
            skip_analysis: args.skip_analysis,
        };
        let user = functions(&cfg);
        let result = simulate_hpn(&hpn, None, &user, cfg, track, options).map_err(|e| match e {
            SimError::Analysis(_) => (3, e.to_string()),
            other => (2, other.to_string()),
        })?;
        let io = |e: std::io::Error| (2, e.to_string());
        let trace = result.trace.render();
        match &args.trace_out {
            Some(p) => std::fs::write(p, trace).map_err(io)?,
            None => std::io::stdout().write_all(trace.as_bytes()).map_err(io)?,
        }
        if let Some(p) = &args.pose_out {
            std::fs::write(p, result.world().render_pose_log()).map_err(io)?;
        }
        eprint!("{}", result.summary());
        Ok(match result.outcome {
            RunOutcome::LimitReached(_) => 4,
            _ => 0,
        })
    }
}
