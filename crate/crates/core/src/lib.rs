//! Deterministic emulation of an in-switch data visibility layer for
//! storage systems that keep data and metadata on separate nodes.

pub mod datanode;
pub mod metanode;
pub mod mutant;
pub mod trace;
pub mod vswitch;
pub mod wire;
pub mod client;
pub mod netsim;
pub mod checker;
pub mod bench;
