//! Hierarchical Petri nets for composing robotic agents.

pub mod agent;
pub mod analysis;
pub mod builder;
pub mod codegen;
pub mod comm;
pub mod condition;
pub mod dot;
pub mod exec;
pub mod format;
pub mod line_follower;
pub mod net;
pub mod spec_file;

pub use condition::Condition;
pub use net::{GroundNet, Hpn, Marking, NetError, NetGraph, NetId, Node, PageId, PlaceId, TransitionId};
