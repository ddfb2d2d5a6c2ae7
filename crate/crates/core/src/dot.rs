//! Graphviz export. Places are circles, pages double circles, transitions
//! boxes labelled `name [condition]`.

use std::fmt::Write as _;

use crate::net::{GroundNet, Hpn, NetId};

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\\\""))
}

fn transition_label(name: &str, cond: &crate::Condition) -> String {
    if cond.is_true() {
        name.to_string()
    } else {
        format!("{name} [{cond}]")
    }
}

/// One net of the hierarchy, with pages left unexpanded.
pub fn net_to_dot(hpn: &Hpn, id: NetId) -> String {
    let net = hpn.net(id);
    let mut out = format!("digraph {} {{\n", quote(net.name()));
    for (i, p) in net.places().iter().enumerate() {
        let mut label = p.name.clone();
        if p.initial > 0 {
            write!(label, " ({})", p.initial).unwrap();
        }
        if let Some(g) = hpn.fusion_of(id, crate::PlaceId(i as u32)) {
            write!(label, "\\nfusion {}", hpn.fusions()[g].name).unwrap();
        }
        writeln!(out, "  {} [shape=circle, label={}];", quote(&p.name), quote(&label)).unwrap();
    }
    for g in net.pages() {
        let label = format!("{}\\n{}", g.name, hpn.net(g.inner).name());
        writeln!(
            out,
            "  {} [shape=doublecircle, label={}];",
            quote(&g.name),
            quote(&label)
        )
        .unwrap();
    }
    for t in net.transitions() {
        writeln!(
            out,
            "  {} [shape=box, label={}];",
            quote(&t.name),
            quote(&transition_label(&t.name, &t.condition))
        )
        .unwrap();
    }
    for a in net.arcs() {
        writeln!(
            out,
            "  {} -> {};",
            quote(net.node_name(a.source)),
            quote(net.node_name(a.target))
        )
        .unwrap();
    }
    out.push_str("}\n");
    out
}

/// The flattened net. Arc weights above one are written as edge labels.
pub fn ground_to_dot(ground: &GroundNet) -> String {
    let mut out = String::from("digraph ground {\n");
    for (i, p) in ground.places.iter().enumerate() {
        let mut label = p.name.clone();
        if p.initial > 0 {
            write!(label, " ({})", p.initial).unwrap();
        }
        writeln!(out, "  p{i} [shape=circle, label={}];", quote(&label)).unwrap();
    }
    for (i, t) in ground.transitions.iter().enumerate() {
        writeln!(
            out,
            "  t{i} [shape=box, label={}];",
            quote(&transition_label(&t.name, &t.condition))
        )
        .unwrap();
    }
    for (i, t) in ground.transitions.iter().enumerate() {
        for (edges, inbound) in [(&t.inputs, true), (&t.outputs, false)] {
            for (p, w) in edges {
                let (a, b) = if inbound {
                    (format!("p{p}"), format!("t{i}"))
                } else {
                    (format!("t{i}"), format!("p{p}"))
                };
                if *w > 1 {
                    writeln!(out, "  {a} -> {b} [label=\"{w}\"];").unwrap();
                } else {
                    writeln!(out, "  {a} -> {b};").unwrap();
                }
            }
        }
    }
    out.push_str("}\n");
    out
}

/// Node and edge counts of a DOT graph produced by this module.
pub fn dot_counts(dot: &str) -> (usize, usize) {
    let nodes = dot.lines().filter(|l| l.contains("[shape=")).count();
    let edges = dot.lines().filter(|l| l.contains(" -> ")).count();
    (nodes, edges)
}
