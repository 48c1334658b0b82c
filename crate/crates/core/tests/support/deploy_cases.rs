//! Seeded placement instances and deployable choreographies.

use std::collections::BTreeMap;

use orgami_core::deploy::{
    Choreography, DeployTarget, InstantiationGraph, ResourceDecl, ResourceKey,
};
use orgami_core::netsim::{Topology, TopologyKind, TopologyParams};
use orgami_core::{parse_rule, CellId, IoRole, Kind, Name, Payload, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn key(s: &str) -> ResourceKey {
    s.parse().unwrap()
}

fn random_connected(rng: &mut ChaCha8Rng, n: usize) -> Topology {
    let nodes: Vec<CellId> = (0..n)
        .map(|i| CellId::new(format!("n{i}")).unwrap())
        .collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(0.25) && !edges.contains(&(u, v)) {
                edges.push((u, v));
            }
        }
    }
    Topology::custom(nodes, &edges).unwrap()
}

/// Up to 4 nodes, up to 6 free resources, a few pinned ones, random
/// weights, occasional co-location pairs and capacities.
pub fn random_pbo_case(seed: u64) -> (InstantiationGraph, DeployTarget) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4usize);
    let topology = random_connected(&mut rng, n);
    let n_free = rng.random_range(0..=6usize);
    let n_pinned = rng.random_range(0..=3usize);
    let mut vertices: Vec<ResourceKey> = (0..n_free)
        .map(|i| key(&format!("L/r{i}")))
        .chain((0..n_pinned).map(|i| key(&format!("S/s{i}"))))
        .collect();
    vertices.sort();
    let mut target = DeployTarget::new(topology.clone());
    let mut pins = BTreeMap::new();
    for (i, k) in vertices.iter().enumerate() {
        if k.kind == Kind::S {
            let node = topology.nodes()[rng.random_range(0..n)].clone();
            target.bindings.insert(k.name.clone(), node.clone());
            pins.insert(i, node);
        }
    }
    let mut g = InstantiationGraph {
        vertices,
        pins,
        weights: BTreeMap::new(),
        colocated: Default::default(),
    };
    let m = g.vertices.len();
    if m >= 2 {
        for _ in 0..rng.random_range(0..=2 * m) {
            let (a, b) = (rng.random_range(0..m), rng.random_range(0..m));
            g.set_weight(a, b, rng.random_range(1..=5));
        }
        if rng.random_bool(0.3) {
            let free: Vec<usize> = g.free_vertices().collect();
            if !free.is_empty() {
                let a = free[rng.random_range(0..free.len())];
                let b = rng.random_range(0..m);
                if a != b {
                    g.colocated.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    if rng.random_bool(0.3) {
        for node in topology.nodes() {
            target
                .capacities
                .insert(node.clone(), rng.random_range(1..=4));
        }
    }
    (g, target)
}

fn decl(k: &str, initial: Option<Payload>, io: Option<IoRole>) -> ResourceDecl {
    ResourceDecl {
        key: key(k),
        initial,
        io,
    }
}

/// Choreography whose rules only wake on sensors nobody drives, so that
/// deployment itself never fires them.
pub fn random_inert_choreo(seed: u64, nodes: &[CellId]) -> (Choreography, BTreeMap<Name, CellId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sensors = rng.random_range(1..=3usize);
    let n_locals = rng.random_range(0..=4usize);
    let n_rules = rng.random_range(0..=4usize);
    let mut resources = Vec::new();
    let mut bindings = BTreeMap::new();
    for s in 0..n_sensors {
        resources.push(decl(
            &format!("S/s{s}"),
            Some(Payload::Value(Value::Int(rng.random_range(0..10)))),
            Some(IoRole::Input),
        ));
        bindings.insert(
            Name::new(format!("s{s}")).unwrap(),
            nodes[rng.random_range(0..nodes.len())].clone(),
        );
    }
    for l in 0..n_locals {
        resources.push(decl(
            &format!("L/x{l}"),
            Some(Payload::Value(Value::Int(rng.random_range(-5..5)))),
            None,
        ));
    }
    for r in 0..n_rules {
        let s = rng.random_range(0..n_sensors);
        let mut actions = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            if n_locals == 0 {
                break;
            }
            let x = rng.random_range(0..n_locals);
            actions.push(match rng.random_range(0..3) {
                0 => format!("UPDATE L/x{x} = L/x{x} + S/s{s}"),
                1 => format!("UPDATE L/x{x} = {}", rng.random_range(0..9)),
                _ => format!("DELETE L/x{x}"),
            });
        }
        if actions.is_empty() {
            actions.push(format!("DELETE A/r{r}"));
        }
        let src = format!("ON S/s{s} IF S/s{s} > 4 THEN {}", actions.join("; "));
        resources.push(decl(
            &format!("A/r{r}"),
            Some(Payload::from(parse_rule(&src).unwrap())),
            None,
        ));
    }
    (Choreography { resources }, bindings)
}

pub fn ring(n: usize) -> Topology {
    Topology::generate(TopologyKind::Ring, n, TopologyParams::default(), 0).unwrap()
}
