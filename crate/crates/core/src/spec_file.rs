//! Textual system specifications.
//!
//! ```text
//! hpn-spec 1
//! [agent]
//! a1
//! [subsystem]
//! a1.c kind=c initial=init terminal=control
//! a1.c: init -> control if lf.connected
//! [behaviour]
//! a1.c.init f=lf.init terminal=lf.connected
//! a1.c.control f=lf.control error=lf.lost terminal=lf.done
//! [comm]
//! comm a1.r_sensor.main -> a1.c.control : async
//! ```

use std::fmt::Write as _;

use crate::builder::{AgentSpec, BehaviourSpec, BehaviourSwitch, SubsystemKind, SubsystemSpec, SystemSpec};
use crate::comm::{CommModel, Composition, Endpoint};
use crate::format::{content_lines, expect_header, ParseError};

pub const SPEC_HEADER: &str = "hpn-spec 1";

fn fields(words: &[&str], n: usize) -> Result<Vec<(String, String)>, ParseError> {
    words
        .iter()
        .map(|w| {
            w.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| ParseError::new(n, format!("expected `key=value`, found `{w}`")))
        })
        .collect()
}

fn split_path<const N: usize>(path: &str, n: usize, what: &str) -> Result<[String; N], ParseError> {
    let parts: Vec<String> = path.split('.').map(str::to_string).collect();
    if parts.len() != N || parts.iter().any(|p| p.is_empty()) {
        return Err(ParseError::new(n, format!("expected {what}, found `{path}`")));
    }
    Ok(parts.try_into().unwrap())
}

pub fn parse_spec(text: &str) -> Result<SystemSpec, ParseError> {
    let mut lines = content_lines(text);
    expect_header(&mut lines, SPEC_HEADER)?;
    let mut spec = SystemSpec::default();
    let mut section = "";
    let mut comms = Vec::new();
    for (n, line) in lines {
        if line.starts_with('[') {
            section = match line {
                "[agent]" | "[subsystem]" | "[behaviour]" | "[comm]" => line,
                other => return Err(ParseError::new(n, format!("unknown section `{other}`"))),
            };
            continue;
        }
        match section {
            "[agent]" => {
                if line.contains(['.', ' ']) {
                    return Err(ParseError::new(n, format!("invalid agent name `{line}`")));
                }
                spec.agents.push(AgentSpec {
                    name: line.to_string(),
                    subsystems: Vec::new(),
                });
            }
            "[subsystem]" => {
                if let Some((path, rest)) = line.split_once(':') {
                    let [agent, sub] = split_path::<2>(path.trim(), n, "`agent.subsystem`")?;
                    let (edge, condition) = match rest.split_once(" if ") {
                        Some((e, c)) => (e, Some(c.trim().to_string())),
                        None => (rest, None),
                    };
                    let (from, to) = edge
                        .split_once("->")
                        .ok_or_else(|| ParseError::new(n, "expected `from -> to`"))?;
                    let s = subsystem_mut(&mut spec, &agent, &sub, n)?;
                    s.switches.push(BehaviourSwitch {
                        from: from.trim().to_string(),
                        condition,
                        to: to.trim().to_string(),
                    });
                    continue;
                }
                let words: Vec<&str> = line.split_whitespace().collect();
                let [agent, sub] = split_path::<2>(words[0], n, "`agent.subsystem`")?;
                let mut kind = None;
                let (mut initial, mut terminal) = (String::new(), String::new());
                for (k, v) in fields(&words[1..], n)? {
                    match k.as_str() {
                        "kind" => {
                            kind = Some(
                                v.parse::<SubsystemKind>()
                                    .map_err(|e| ParseError::new(n, e.to_string()))?,
                            )
                        }
                        "initial" => initial = v,
                        "terminal" => terminal = v,
                        other => return Err(ParseError::new(n, format!("unknown field `{other}`"))),
                    }
                }
                let kind = kind.ok_or_else(|| ParseError::new(n, "missing `kind=`"))?;
                if initial.is_empty() || terminal.is_empty() {
                    return Err(ParseError::new(n, "`initial=` and `terminal=` are required"));
                }
                let a = spec
                    .agents
                    .iter_mut()
                    .find(|a| a.name == agent)
                    .ok_or_else(|| ParseError::new(n, format!("unknown agent `{agent}`")))?;
                a.subsystems.push(SubsystemSpec {
                    name: sub,
                    kind,
                    behaviours: Vec::new(),
                    initial,
                    terminal,
                    switches: Vec::new(),
                });
            }
            "[behaviour]" => {
                let words: Vec<&str> = line.split_whitespace().collect();
                let [agent, sub, name] = split_path::<3>(words[0], n, "`agent.subsystem.behaviour`")?;
                let mut b = BehaviourSpec {
                    name,
                    ..Default::default()
                };
                for (k, v) in fields(&words[1..], n)? {
                    match k.as_str() {
                        "f" => b.function = v,
                        "error" => b.error = Some(v),
                        "terminal" => b.terminal = Some(v),
                        other => return Err(ParseError::new(n, format!("unknown field `{other}`"))),
                    }
                }
                if b.function.is_empty() {
                    return Err(ParseError::new(n, "missing `f=`"));
                }
                subsystem_mut(&mut spec, &agent, &sub, n)?.behaviours.push(b);
            }
            "[comm]" => comms.push((n, line)),
            _ => return Err(ParseError::new(n, format!("line outside of a section: `{line}`"))),
        }
    }
    for (n, line) in comms {
        let body = line
            .strip_prefix("comm ")
            .ok_or_else(|| ParseError::new(n, "expected `comm <producer> -> <consumer> : <model>`"))?;
        let (ends, mode) = body
            .split_once(':')
            .ok_or_else(|| ParseError::new(n, "expected `: <model>`"))?;
        let (p, c) = ends
            .split_once("->")
            .ok_or_else(|| ParseError::new(n, "expected `producer -> consumer`"))?;
        let endpoint = |s: &str| -> Result<Endpoint, ParseError> {
            let [a, v, w] = split_path::<3>(s.trim(), n, "`agent.subsystem.behaviour`")?;
            Ok(Endpoint::new(&a, &v, &w))
        };
        let mut words = mode.split_whitespace();
        let model: CommModel = words
            .next()
            .ok_or_else(|| ParseError::new(n, "missing communication model"))?
            .parse()
            .map_err(|e: crate::comm::CommError| ParseError::new(n, e.to_string()))?;
        let composition = match words.next() {
            Some(w) => w
                .parse::<Composition>()
                .map_err(|e| ParseError::new(n, e.to_string()))?,
            None => Composition::default(),
        };
        if let Some(extra) = words.next() {
            return Err(ParseError::new(n, format!("unexpected `{extra}`")));
        }
        spec.connect(&endpoint(p)?, &endpoint(c)?, model, composition)
            .map_err(|e| ParseError::new(n, e.to_string()))?;
    }
    Ok(spec)
}

fn subsystem_mut<'a>(
    spec: &'a mut SystemSpec,
    agent: &str,
    sub: &str,
    n: usize,
) -> Result<&'a mut SubsystemSpec, ParseError> {
    spec.agents
        .iter_mut()
        .find(|a| a.name == agent)
        .and_then(|a| a.subsystems.iter_mut().find(|s| s.name == sub))
        .ok_or_else(|| ParseError::new(n, format!("unknown subsystem `{agent}.{sub}`")))
}

pub fn write_spec(spec: &SystemSpec) -> String {
    let mut out = format!("{SPEC_HEADER}\n[agent]\n");
    for a in &spec.agents {
        writeln!(out, "{}", a.name).unwrap();
    }
    out.push_str("[subsystem]\n");
    for a in &spec.agents {
        for s in &a.subsystems {
            writeln!(
                out,
                "{}.{} kind={} initial={} terminal={}",
                a.name, s.name, s.kind, s.initial, s.terminal
            )
            .unwrap();
            for sw in &s.switches {
                write!(out, "{}.{}: {} -> {}", a.name, s.name, sw.from, sw.to).unwrap();
                if let Some(c) = &sw.condition {
                    write!(out, " if {c}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    out.push_str("[behaviour]\n");
    for a in &spec.agents {
        for s in &a.subsystems {
            for b in &s.behaviours {
                write!(out, "{}.{}.{} f={}", a.name, s.name, b.name, b.function).unwrap();
                if let Some(e) = &b.error {
                    write!(out, " error={e}").unwrap();
                }
                if let Some(t) = &b.terminal {
                    write!(out, " terminal={t}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    out.push_str("[comm]\n");
    for a in &spec.agents {
        for s in &a.subsystems {
            for b in &s.behaviours {
                for p in &b.send_peers {
                    writeln!(
                        out,
                        "comm {}.{}.{} -> {}.{}.{} : {} {}",
                        a.name,
                        s.name,
                        b.name,
                        a.name,
                        p.subsystem,
                        p.behaviour,
                        p.model,
                        p.composition.keyword()
                    )
                    .unwrap();
                }
            }
        }
    }
    out
}
