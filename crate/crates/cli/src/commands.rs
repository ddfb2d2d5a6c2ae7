use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use hpn_core::analysis::{analyze, Budget};
use hpn_core::builder::{assemble, validate, SystemSpec};
use hpn_core::codegen::{
    generate, measure_size, parse_fragments, runtime::subsystem_count, EmissionPlan, LINE_FOLLOWER_FRAGMENTS,
};
use hpn_core::dot::{ground_to_dot, net_to_dot};
use hpn_core::exec::{ExecOptions, Policy, RunOutcome};
use hpn_core::format::{parse_net, write_net};
use hpn_core::line_follower::{self, LfConfig, SimError, SimOptions, SimResult, Track};
use hpn_core::spec_file::parse_spec;
use hpn_core::Hpn;

use crate::{Command, Input, RunArgs};

pub const USAGE: u8 = 1;
pub const INVALID: u8 = 2;
pub const VIOLATION: u8 = 3;
pub const LIMIT: u8 = 4;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

trait Code<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn fail<T>(code: u8, error: anyhow::Error) -> Result<T, Failure> {
    Err(Failure { code, error })
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .code(INVALID)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("cannot write to stdout"),
    }
    .code(INVALID)
}

struct Loaded {
    hpn: Hpn,
    spec: Option<SystemSpec>,
    warnings: Vec<String>,
}

fn load_spec(path: &Path) -> Result<SystemSpec, Failure> {
    parse_spec(&read(path)?)
        .map_err(|e| anyhow!("{}: {e}", path.display()))
        .code(INVALID)
}

fn load_from_spec(spec: SystemSpec, origin: &str) -> Result<Loaded, Failure> {
    let assembly = assemble(&spec)
        .with_context(|| format!("{origin}: invalid system"))
        .code(INVALID)?;
    Ok(Loaded {
        hpn: assembly.hpn,
        spec: Some(spec),
        warnings: assembly.warnings,
    })
}

fn load(spec: Option<&Path>, net: Option<&Path>) -> Result<Loaded, Failure> {
    match (spec, net) {
        (Some(p), _) => load_from_spec(load_spec(p)?, &p.display().to_string()),
        (None, Some(p)) => {
            let hpn = parse_net(&read(p)?)
                .map_err(|e| anyhow!("{}: {e}", p.display()))
                .code(INVALID)?;
            Ok(Loaded {
                hpn,
                spec: None,
                warnings: Vec::new(),
            })
        }
        (None, None) => load_from_spec(line_follower::default_spec(), "bundled spec"),
    }
}

fn load_input(input: &Input) -> Result<Loaded, Failure> {
    load(input.spec.as_deref(), input.net.as_deref())
}

fn print_warnings(loaded: &Loaded) {
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
}

pub fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Build { spec, out } => {
            let loaded = load(Some(&spec), None)?;
            print_warnings(&loaded);
            write_or_print(out.as_deref(), &write_net(&loaded.hpn))
        }
        Command::Validate(input) => cmd_validate(&input),
        Command::Analyze { input, budget } => {
            let loaded = load_input(&input)?;
            print_warnings(&loaded);
            let report = analyze(&loaded.hpn, Budget::markings(budget)).code(INVALID)?;
            print!("{}", report.render());
            if report.is_clean() {
                Ok(())
            } else {
                fail(VIOLATION, anyhow!("{} violation(s)", report.violations.len()))
            }
        }
        Command::Run(args) => {
            let result = execute(&args, None)?;
            write_or_print(args.trace_out.as_deref(), &result.trace.render())?;
            eprintln!("outcome={:?} firings={}", result.outcome, result.firings);
            check_outcome(&result)
        }
        Command::Sim {
            run,
            duration,
            pose_out,
        } => {
            let result = execute(&run, duration)?;
            if let Some(p) = &run.trace_out {
                write_or_print(Some(p), &result.trace.render())?;
            }
            if let Some(p) = &pose_out {
                write_or_print(Some(p), &result.world().render_pose_log())?;
            }
            print!("{}", result.summary());
            check_outcome(&result)
        }
        Command::Generate {
            input,
            out,
            fragments,
            runtime,
            config,
        } => cmd_generate(&input, &out, fragments.as_deref(), runtime, config.as_deref()),
        Command::ExportDot {
            input,
            subnet,
            ground,
            out,
        } => {
            let loaded = load_input(&input)?;
            let dot = if ground {
                ground_to_dot(&loaded.hpn.flatten().code(INVALID)?)
            } else {
                let id = match &subnet {
                    Some(name) => loaded
                        .hpn
                        .net_by_name(name)
                        .ok_or_else(|| anyhow!("no net named `{name}`"))
                        .code(INVALID)?,
                    None => loaded.hpn.root(),
                };
                net_to_dot(&loaded.hpn, id)
            };
            write_or_print(out.as_deref(), &dot)
        }
        Command::MeasureSize { files } => {
            let mut nets = Vec::with_capacity(files.len());
            for f in &files {
                let loaded = if f.extension().is_some_and(|e| e == "spec") {
                    load(Some(f), None)?
                } else {
                    load(None, Some(f))?
                };
                nets.push(loaded.hpn);
            }
            let mut plan = EmissionPlan::new(&default_runtime());
            plan.fragments = parse_fragments(LINE_FOLLOWER_FRAGMENTS).code(INVALID)?;
            let report = measure_size(&nets, &plan).code(INVALID)?;
            print!("{}", report.render());
            Ok(())
        }
    }
}

fn cmd_validate(input: &Input) -> Result<(), Failure> {
    let warnings = match (&input.spec, &input.net) {
        (Some(p), _) => {
            let spec = load_spec(p)?;
            validate(&spec)
                .with_context(|| format!("{}: invalid system", p.display()))
                .code(INVALID)?
        }
        (None, Some(_)) => {
            let loaded = load_input(input)?;
            loaded.hpn.flatten().code(INVALID)?;
            Vec::new()
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    println!("ok");
    Ok(())
}

fn default_runtime() -> PathBuf {
    let core = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core");
    core.canonicalize().unwrap_or(core)
}

fn cmd_generate(
    input: &Input,
    out: &Path,
    fragments: Option<&Path>,
    runtime: Option<PathBuf>,
    config: Option<&Path>,
) -> Result<(), Failure> {
    let loaded = load_input(input)?;
    print_warnings(&loaded);
    let runtime = runtime.unwrap_or_else(default_runtime);
    let mut plan = EmissionPlan::new(&runtime);
    plan.fragments = match fragments {
        Some(p) => parse_fragments(&read(p)?)
            .map_err(|e| anyhow!("{}: {e}", p.display()))
            .code(INVALID)?,
        None => parse_fragments(LINE_FOLLOWER_FRAGMENTS).code(INVALID)?,
    };
    if let Some(p) = config {
        let text = read(p)?;
        LfConfig::parse(&text)
            .with_context(|| p.display().to_string())
            .code(INVALID)?;
        plan.config = text;
    }
    let tree = generate(&loaded.hpn, &plan).code(INVALID)?;
    tree.write_to(out).code(INVALID)?;
    println!(
        "wrote {} files, {} lines to {}",
        tree.files.len(),
        tree.line_count(),
        out.display()
    );
    Ok(())
}

fn execute(args: &RunArgs, duration: Option<f64>) -> Result<SimResult, Failure> {
    let mut cfg = match &args.config {
        Some(p) => LfConfig::load(p).code(INVALID)?,
        None => LfConfig::default_config(),
    };
    if let Some(d) = duration {
        if !(d > 0.0 && d.is_finite()) {
            return fail(USAGE, anyhow!("--duration must be positive"));
        }
        cfg.world.duration = d;
    }
    let track = match &args.track {
        Some(p) => Track::load(p).code(INVALID)?,
        None => Track::from_config(&cfg.track),
    };
    let loaded = load(args.spec.as_deref(), args.net.as_deref())?;
    print_warnings(&loaded);
    let workers = match args.workers {
        Some(0) => return fail(USAGE, anyhow!("--workers must be at least 1")),
        Some(w) => w,
        None => subsystem_count(&loaded.hpn).code(INVALID)?,
    };
    let cfg = Arc::new(cfg);
    let user = line_follower::functions(&cfg);
    let options = SimOptions {
        exec: ExecOptions {
            policy: args.seed.map_or(Policy::Deterministic, Policy::Seeded),
            workers,
            ..ExecOptions::default()
        },
        max_firings: args.budget,
        skip_analysis: args.skip_analysis,
    };
    line_follower::simulate_hpn(&loaded.hpn, loaded.spec.as_ref(), &user, cfg, track, options).map_err(|e| {
        let code = match e {
            SimError::Analysis(_) => VIOLATION,
            _ => INVALID,
        };
        Failure { code, error: e.into() }
    })
}

fn check_outcome(result: &SimResult) -> Result<(), Failure> {
    match result.outcome {
        RunOutcome::Terminated(_) => Ok(()),
        RunOutcome::Stalled => fail(LIMIT, anyhow!("execution stalled after {} firings", result.firings)),
        RunOutcome::LimitReached(limit) => fail(
            LIMIT,
            anyhow!("{limit:?} limit reached after {} firings", result.firings),
        ),
    }
}
