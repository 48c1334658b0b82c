//! Core of the organic ambient-intelligence stack.
//!
//! Cells host addressable resources (`/L/` local memory, `/S/` system I/O,
//! `/A/` agent rules). Agent rules are event-condition-action scripts whose
//! firings chain into metabolic computation flows across a simulated
//! wireless sensor/actor network. On top of that substrate the crate provides
//! Petri-net analysis of choreographies, pseudo-Boolean deployment mapping,
//! an artificial neural controller and a consensus-based voting procedure.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, scenario loading
//! and the command line live in the `orgami` companion crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod anc;
pub mod crm;
pub mod deploy;
pub mod engine;
pub mod netsim;
pub mod petri;
pub mod rule;
pub mod value;
pub mod voting;

pub use crm::{
    Cell, CellId, CrmError, Interaction, IoRole, Kind, MutationEvent, Name, Operation, Payload,
    Resource, ResourceAddress, Snapshot, Writer,
};
pub use rule::{parse_rule, AgentRule};
pub use value::Value;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Simulated time in integer ticks.
pub type Tick = u64;
