//! Metabolic mapping: placing a location-free choreography on a target
//! network so that hop-weighted rule traffic is minimal, then deploying it
//! either by supervisor writes or by a self-unpacking deployer agent.
//!
//! In a choreography every rule reference is host-relative (`K/name`) and
//! denotes the logical resource of that key wherever it ends up. `/S/`
//! resources are hardware: they are pinned to the node their binding names
//! and exist there before deployment.

mod dna;
mod pbo;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crm::{CellId, IoRole, Kind, Name, Payload};
use crate::engine::EngineError;
use crate::netsim::Topology;
use crate::rule::{AgentRule, CellRef, Post, Ref};

pub use dna::{
    compose_dna, deploy, hardware_cells, PlacementReport, Strategy, DEPLOYER_NAME, DNA_NAME,
};
pub use pbo::{brute_force_mapping, formulate_pbo, solve_pbo, PboInstance, BRUTE_FORCE_LIMIT};

/// Kind and name of a resource, without a cell.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourceKey {
    pub kind: Kind,
    pub name: Name,
}

impl ResourceKey {
    pub fn new(kind: Kind, name: Name) -> ResourceKey {
        ResourceKey { kind, name }
    }

    fn of(r: &Ref) -> ResourceKey {
        ResourceKey::new(r.kind, r.name.clone())
    }
}

impl fmt::Display for ResourceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.name)
    }
}

impl FromStr for ResourceKey {
    type Err = DeployError;

    fn from_str(s: &str) -> Result<ResourceKey, DeployError> {
        let bad = || DeployError::InvalidChoreography(alloc::format!("bad resource key {s:?}"));
        let (k, n) = s.split_once('/').ok_or_else(bad)?;
        let kind = Kind::from_letter(k).ok_or_else(bad)?;
        let name = Name::new(n).map_err(|_| bad())?;
        Ok(ResourceKey::new(kind, name))
    }
}

impl Serialize for ResourceKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ResourceKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<ResourceKey, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One resource of a choreography. Without an initial payload the resource
/// is only reserved a place (something creates it at run time).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceDecl {
    pub key: ResourceKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Payload>,
    /// Direction of an `/S/` resource.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub io: Option<IoRole>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choreography {
    pub resources: Vec<ResourceDecl>,
}

impl Choreography {
    pub fn decl(&self, key: &ResourceKey) -> Option<&ResourceDecl> {
        self.resources.iter().find(|d| &d.key == key)
    }

    pub fn rules(&self) -> impl Iterator<Item = (&ResourceKey, &AgentRule)> {
        self.resources
            .iter()
            .filter_map(|d| Some((&d.key, d.initial.as_ref()?.as_rule()?)))
    }
}

/// Nodes, their capacities and the hardware bindings of `/S/` resources.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeployTarget {
    pub topology: Topology,
    /// Maximum resident resources per node; absent means unbounded.
    pub capacities: BTreeMap<CellId, usize>,
    /// Node of every `/S/` resource.
    pub bindings: BTreeMap<Name, CellId>,
}

impl DeployTarget {
    pub fn new(topology: Topology) -> DeployTarget {
        DeployTarget {
            topology,
            capacities: BTreeMap::new(),
            bindings: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeployError {
    #[error("/S/{0} has no binding on the target")]
    UnboundSensor(Name),
    #[error("{0} is referenced but not declared")]
    UnknownResource(ResourceKey),
    #[error("{0} is declared twice")]
    DuplicateResource(ResourceKey),
    #[error("choreography rules must use host-relative references, found {0}")]
    LocatedReference(String),
    #[error("{0} must sit on two different nodes at once")]
    ColocationConflict(ResourceKey),
    #[error("{0} is not a node of the target")]
    UnknownNode(CellId),
    #[error("the target topology is not connected")]
    DisconnectedTarget,
    #[error("no placement satisfies the capacities")]
    Infeasible,
    #[error("search space of {0} assignments exceeds the brute-force limit")]
    TooLarge(u128),
    #[error("{0} is reserved for the deployer agents")]
    ReservedName(ResourceKey),
    #[error("invalid choreography: {0}")]
    InvalidChoreography(String),
    #[error("deployment incomplete at t={}: {} of {} resources placed", .0.finished_at, .0.placed.len(), .0.expected)]
    DeploymentTimeout(PlacementReport),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Resources as vertices, expected traffic as weighted edges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InstantiationGraph {
    /// Vertices in ascending key order.
    pub vertices: Vec<ResourceKey>,
    /// Node each pinned vertex must occupy.
    pub pins: BTreeMap<usize, CellId>,
    /// Messages per trigger between two vertices, keyed `(u, v)` with `u < v`.
    pub weights: BTreeMap<(usize, usize), u64>,
    /// Pairs that must share a node, keyed `(u, v)` with `u < v`.
    pub colocated: BTreeSet<(usize, usize)>,
}

impl InstantiationGraph {
    pub fn index(&self, key: &ResourceKey) -> Option<usize> {
        self.vertices.binary_search(key).ok()
    }

    /// Replaces the weight between two vertices, e.g. with message counts
    /// measured in a profiling run. A zero weight removes the edge.
    pub fn set_weight(&mut self, a: usize, b: usize, w: u64) {
        if a == b {
            return;
        }
        let e = (a.min(b), a.max(b));
        if w == 0 {
            self.weights.remove(&e);
        } else {
            self.weights.insert(e, w);
        }
    }

    fn add_weight(&mut self, a: usize, b: usize, w: u64) {
        if a != b {
            *self.weights.entry((a.min(b), a.max(b))).or_insert(0) += w;
        }
    }

    fn colocate(&mut self, a: usize, b: usize) {
        if a != b {
            self.colocated.insert((a.min(b), a.max(b)));
        }
    }

    pub fn free_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertices.len()).filter(|v| !self.pins.contains_key(v))
    }
}

/// Builds the instantiation graph. Each action of a rule adds one message of
/// weight between the rule and its target. Everything a rule reads must sit
/// with the rule, except an action reading its own target.
pub fn build_instantiation_graph(
    choreo: &Choreography,
    target: &DeployTarget,
) -> Result<InstantiationGraph, DeployError> {
    if !target.topology.is_connected() {
        return Err(DeployError::DisconnectedTarget);
    }
    let mut keys = BTreeSet::new();
    for d in &choreo.resources {
        if !keys.insert(d.key.clone()) {
            return Err(DeployError::DuplicateResource(d.key.clone()));
        }
        if d.key.kind == Kind::A && [DNA_NAME, DEPLOYER_NAME].contains(&d.key.name.as_str()) {
            return Err(DeployError::ReservedName(d.key.clone()));
        }
        let fits = match &d.initial {
            None => true,
            Some(p) => p.fits(d.key.kind),
        };
        if !fits {
            return Err(DeployError::InvalidChoreography(alloc::format!(
                "payload of {} does not match its kind",
                d.key
            )));
        }
    }
    let mut g = InstantiationGraph {
        vertices: keys.into_iter().collect(),
        pins: BTreeMap::new(),
        weights: BTreeMap::new(),
        colocated: BTreeSet::new(),
    };
    for (i, key) in g.vertices.clone().iter().enumerate() {
        if key.kind == Kind::S {
            let node = target
                .bindings
                .get(&key.name)
                .ok_or_else(|| DeployError::UnboundSensor(key.name.clone()))?;
            if target.topology.index_of(node).is_none() {
                return Err(DeployError::UnknownNode(node.clone()));
            }
            g.pins.insert(i, node.clone());
        }
    }
    for (key, rule) in choreo.rules() {
        let host = g.index(key).expect("declared");
        link_rule(&mut g, host, rule)?;
    }
    Ok(g)
}

fn vertex(g: &InstantiationGraph, r: &Ref) -> Result<usize, DeployError> {
    if r.cell != CellRef::Host {
        return Err(DeployError::LocatedReference(alloc::format!(
            "{}/{}", r.kind, r.name
        )));
    }
    g.index(&ResourceKey::of(r))
        .ok_or_else(|| DeployError::UnknownResource(ResourceKey::of(r)))
}

fn link_rule(g: &mut InstantiationGraph, host: usize, rule: &AgentRule) -> Result<(), DeployError> {
    let mut reads: Vec<&Ref> = rule.on.iter().collect();
    rule.pre.visit_refs(&mut |r, _| reads.push(r));
    for r in reads {
        let v = vertex(g, r)?;
        g.colocate(host, v);
    }
    for a in &rule.actions {
        let t = vertex(g, &a.target)?;
        g.add_weight(host, t, 1);
        match &a.post {
            Some(Post::Expr(e)) => {
                let mut refs = Vec::new();
                e.visit_refs(&mut |r, _| refs.push(r));
                for r in refs {
                    let v = vertex(g, r)?;
                    if v != t {
                        g.colocate(host, v);
                    }
                }
            }
            Some(Post::Rule(nested)) => link_rule(g, t, nested)?,
            None => {}
        }
    }
    Ok(())
}

/// Resource-to-node assignment with its hop-weighted traffic.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub assignment: BTreeMap<ResourceKey, CellId>,
    pub objective: u64,
}

impl Mapping {
    pub fn node_of(&self, key: &ResourceKey) -> Option<&CellId> {
        self.assignment.get(key)
    }
}
