//! Shared inputs for the benchmarks.

use std::sync::Arc;

use hpn_core::builder::assemble;
use hpn_core::comm::CommModel;
use hpn_core::line_follower::{default_spec, LfConfig};
use hpn_core::spec_file::parse_spec;
use hpn_core::Hpn;

/// Hierarchy of the bundled line-follower system.
pub fn line_follower() -> Hpn {
    assemble(&default_spec()).expect("bundled spec assembles").hpn
}

/// `agents` copies of a two-subsystem agent joined by a channel of `model`.
pub fn chain_system(agents: usize, model: CommModel) -> Hpn {
    let mut text = String::from("hpn-spec 1\n[agent]\n");
    for a in 0..agents {
        text.push_str(&format!("a{a}\n"));
    }
    text.push_str("[subsystem]\n");
    for a in 0..agents {
        text.push_str(&format!("a{a}.c kind=c initial=main terminal=main\n"));
        text.push_str(&format!("a{a}.e kind=e initial=main terminal=main\n"));
    }
    text.push_str("[behaviour]\n");
    for a in 0..agents {
        text.push_str(&format!("a{a}.c.main f=produce terminal=never\n"));
        text.push_str(&format!("a{a}.e.main f=consume terminal=never\n"));
    }
    text.push_str("[comm]\n");
    for a in 0..agents {
        text.push_str(&format!("comm a{a}.c.main -> a{a}.e.main : {model}\n"));
    }
    assemble(&parse_spec(&text).expect("generated spec parses"))
        .expect("generated spec assembles")
        .hpn
}

/// Bundled configuration shortened to `seconds` of simulated time.
pub fn short_config(seconds: f64) -> Arc<LfConfig> {
    let mut cfg = LfConfig::default_config();
    cfg.world.duration = seconds;
    Arc::new(cfg)
}
