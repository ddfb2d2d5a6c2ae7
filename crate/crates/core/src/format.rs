//! Textual net files.
//!
//! ```text
//! hpn-net 1
//! root system
//!
//! net system
//! [places]
//! p_init input
//! p_final output
//! [transitions]
//! t_in
//! t_loop -> !cond.a.c.done
//! [pages]
//! a1 = a1
//! [arcs]
//! p_init -> t_in
//! [initial_marking]
//! p_init = 1
//!
//! [fusions]
//! group = net:place, net:place
//! ```
//!
//! Places are `name [input] [output] [-> operation]`. `#` starts a comment
//! line. Writing is deterministic, so `write(parse(write(h))) == write(h)`.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::condition::Condition;
use crate::net::{Hpn, NetError, NetId, Node};

pub const NET_HEADER: &str = "hpn-net 1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            message: message.into(),
        }
    }
}

/// Non-empty, non-comment lines with 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn expect_header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    header: &str,
) -> Result<(), ParseError> {
    match lines.next() {
        Some((_, l)) if l == header => Ok(()),
        Some((n, l)) => Err(ParseError::new(n, format!("expected `{header}`, found `{l}`"))),
        None => Err(ParseError::new(1, format!("empty file, expected `{header}`"))),
    }
}

pub fn write_net(hpn: &Hpn) -> String {
    let mut out = String::new();
    writeln!(out, "{NET_HEADER}").unwrap();
    writeln!(out, "root {}", hpn.net(hpn.root()).name()).unwrap();
    for net in hpn.nets() {
        writeln!(out, "\nnet {}", net.name()).unwrap();
        if !net.places().is_empty() {
            out.push_str("[places]\n");
            for p in net.places() {
                out.push_str(&p.name);
                if p.is_input {
                    out.push_str(" input");
                }
                if p.is_output {
                    out.push_str(" output");
                }
                if let Some(op) = &p.operation {
                    write!(out, " -> {op}").unwrap();
                }
                out.push('\n');
            }
        }
        if !net.transitions().is_empty() {
            out.push_str("[transitions]\n");
            for t in net.transitions() {
                if t.condition.is_true() {
                    writeln!(out, "{}", t.name).unwrap();
                } else {
                    writeln!(out, "{} -> {}", t.name, t.condition).unwrap();
                }
            }
        }
        if !net.pages().is_empty() {
            out.push_str("[pages]\n");
            for g in net.pages() {
                writeln!(out, "{} = {}", g.name, hpn.net(g.inner).name()).unwrap();
            }
        }
        if !net.arcs().is_empty() {
            out.push_str("[arcs]\n");
            for a in net.arcs() {
                writeln!(out, "{} -> {}", net.node_name(a.source), net.node_name(a.target)).unwrap();
            }
        }
        let marked: Vec<_> = net.places().iter().filter(|p| p.initial > 0).collect();
        if !marked.is_empty() {
            out.push_str("[initial_marking]\n");
            for p in marked {
                writeln!(out, "{} = {}", p.name, p.initial).unwrap();
            }
        }
    }
    if !hpn.fusions().is_empty() {
        out.push_str("\n[fusions]\n");
        for g in hpn.fusions() {
            let members: Vec<String> = g
                .members
                .iter()
                .map(|(n, p)| format!("{}:{}", hpn.net(*n).name(), hpn.net(*n).place(*p).name))
                .collect();
            writeln!(out, "{} = {}", g.name, members.join(", ")).unwrap();
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Places,
    Transitions,
    Pages,
    Arcs,
    Marking,
    Fusions,
}

#[derive(Default)]
struct NetDraft {
    line: usize,
    name: String,
    places: Vec<(usize, String, bool, bool, Option<String>)>,
    transitions: Vec<(usize, String, Option<Condition>)>,
    pages: Vec<(usize, String, String)>,
    arcs: Vec<(usize, String, String)>,
    marking: Vec<(usize, String, u32)>,
}

fn split_pair<'a>(line: &'a str, sep: &str, n: usize) -> Result<(&'a str, &'a str), ParseError> {
    line.split_once(sep)
        .map(|(a, b)| (a.trim(), b.trim()))
        .ok_or_else(|| ParseError::new(n, format!("expected `{sep}` in `{line}`")))
}

/// Line number, group name and `(net, place)` members.
type FusionDraft = (usize, String, Vec<(String, String)>);

pub fn parse_net(text: &str) -> Result<Hpn, ParseError> {
    let mut lines = content_lines(text);
    expect_header(&mut lines, NET_HEADER)?;
    let (root_line, root_name) = match lines.next() {
        Some((n, l)) => match l.strip_prefix("root ") {
            Some(r) => (n, r.trim().to_string()),
            None => return Err(ParseError::new(n, format!("expected `root <net>`, found `{l}`"))),
        },
        None => return Err(ParseError::new(1, "missing `root` line")),
    };

    let mut drafts: Vec<NetDraft> = Vec::new();
    let mut fusions: Vec<FusionDraft> = Vec::new();
    let mut section: Option<Section> = None;
    for (n, line) in lines {
        if let Some(name) = line.strip_prefix("net ") {
            drafts.push(NetDraft {
                line: n,
                name: name.trim().to_string(),
                ..Default::default()
            });
            section = None;
            continue;
        }
        if line.starts_with('[') {
            section = Some(match line {
                "[places]" => Section::Places,
                "[transitions]" => Section::Transitions,
                "[pages]" => Section::Pages,
                "[arcs]" => Section::Arcs,
                "[initial_marking]" => Section::Marking,
                "[fusions]" => Section::Fusions,
                other => return Err(ParseError::new(n, format!("unknown section `{other}`"))),
            });
            if section != Some(Section::Fusions) && drafts.is_empty() {
                return Err(ParseError::new(n, "section outside of a `net` block"));
            }
            continue;
        }
        let Some(sec) = section else {
            return Err(ParseError::new(n, format!("line outside of a section: `{line}`")));
        };
        if sec == Section::Fusions {
            let (name, members) = split_pair(line, "=", n)?;
            let members = members
                .split(',')
                .map(|m| {
                    let (net, place) = split_pair(m, ":", n)?;
                    Ok((net.to_string(), place.to_string()))
                })
                .collect::<Result<Vec<_>, ParseError>>()?;
            fusions.push((n, name.to_string(), members));
            continue;
        }
        let draft = drafts.last_mut().expect("checked when the section opened");
        match sec {
            Section::Places => {
                let (decl, op) = match line.split_once("->") {
                    Some((d, o)) => (d.trim(), Some(o.trim().to_string())),
                    None => (line, None),
                };
                let mut words = decl.split_whitespace();
                let name = words.next().ok_or_else(|| ParseError::new(n, "missing place name"))?;
                let (mut input, mut output) = (false, false);
                for w in words {
                    match w {
                        "input" => input = true,
                        "output" => output = true,
                        other => return Err(ParseError::new(n, format!("unknown place flag `{other}`"))),
                    }
                }
                draft.places.push((n, name.to_string(), input, output, op));
            }
            Section::Transitions => {
                let (name, cond) = match line.split_once("->") {
                    Some((t, c)) => {
                        let cond = Condition::parse(c.trim()).map_err(|e| ParseError::new(n, e.to_string()))?;
                        (t.trim(), Some(cond))
                    }
                    None => (line, None),
                };
                draft.transitions.push((n, name.to_string(), cond));
            }
            Section::Pages => {
                let (page, inner) = split_pair(line, "=", n)?;
                draft.pages.push((n, page.to_string(), inner.to_string()));
            }
            Section::Arcs => {
                let (a, b) = split_pair(line, "->", n)?;
                draft.arcs.push((n, a.to_string(), b.to_string()));
            }
            Section::Marking => {
                let (p, v) = split_pair(line, "=", n)?;
                let v = v
                    .parse::<u32>()
                    .map_err(|_| ParseError::new(n, format!("invalid token count `{v}`")))?;
                draft.marking.push((n, p.to_string(), v));
            }
            Section::Fusions => unreachable!(),
        }
    }

    let at = |n: usize| move |e: NetError| ParseError::new(n, e.to_string());
    let first = drafts
        .first()
        .ok_or_else(|| ParseError::new(root_line, "no `net` blocks"))?;
    let mut hpn = Hpn::new(&first.name).map_err(at(first.line))?;
    let mut ids: HashMap<String, NetId> = HashMap::new();
    ids.insert(first.name.clone(), hpn.root());
    for d in drafts.iter().skip(1) {
        let id = hpn.add_net(&d.name).map_err(at(d.line))?;
        ids.insert(d.name.clone(), id);
    }
    let root = *ids
        .get(&root_name)
        .ok_or_else(|| ParseError::new(root_line, format!("root net `{root_name}` is not defined")))?;
    hpn.set_root(root);

    for d in &drafts {
        let id = ids[&d.name];
        for (n, name, input, output, op) in &d.places {
            let net = hpn.net_mut(id);
            let p = net.add_place(name, op.as_deref()).map_err(at(*n))?;
            if *input {
                net.set_input(p);
            }
            if *output {
                net.set_output(p);
            }
        }
        for (n, name, cond) in &d.transitions {
            hpn.net_mut(id).add_transition(name, cond.clone()).map_err(at(*n))?;
        }
        for (n, page, inner) in &d.pages {
            let inner = *ids
                .get(inner)
                .ok_or_else(|| ParseError::new(*n, format!("unknown net `{inner}`")))?;
            hpn.net_mut(id).add_page(page, inner).map_err(at(*n))?;
        }
        for (n, a, b) in &d.arcs {
            hpn.net_mut(id).connect_named(a, b).map_err(at(*n))?;
        }
        for (n, p, v) in &d.marking {
            let net = hpn.net_mut(id);
            let place = net.resolve_place(p).map_err(at(*n))?;
            net.set_initial(place, *v);
        }
    }
    for (n, name, members) in &fusions {
        let mut resolved = Vec::new();
        for (net, place) in members {
            let id = *ids
                .get(net)
                .ok_or_else(|| ParseError::new(*n, format!("unknown net `{net}`")))?;
            let p = hpn.net(id).resolve_place(place).map_err(at(*n))?;
            resolved.push((id, p));
        }
        hpn.fuse(name, &resolved).map_err(at(*n))?;
    }
    Ok(hpn)
}

/// Element lookup by hierarchical net/node name, used by tests and tools.
pub fn node_of(hpn: &Hpn, net: &str, node: &str) -> Option<Node> {
    hpn.net_by_name(net).and_then(|id| hpn.net(id).lookup(node))
}
