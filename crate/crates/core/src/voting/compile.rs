//! The voting procedure as a service choreography: per cell, one consensus
//! agent per candidate, an aggregation-control agent and a selection agent.
//!
//! Every cell stores its iterates in `L/x<c>` and the last values received
//! from neighbor `j` in `L/m<c>_<j>`. A tick driver writes `L/tick` on every
//! cell once per period; each consensus agent then computes its next
//! iterate from the mailboxes and sends it to itself and to every neighbor.
//! With lossless links delivered within one period this is the synchronous
//! consensus step.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use super::{default_epsilon, PreferenceProfile, VoteError, VoteParams};
use crate::crm::{Cell, CellId, Kind, Name, Operation, Payload, ResourceAddress, Writer};
use crate::engine::World;
use crate::netsim::{LinkModel, Network, Topology};
use crate::rule::{parse_rule, AgentRule};
use crate::value::Value;
use crate::Tick;

/// Located agent rules plus what is needed to instantiate them.
#[derive(Clone, Debug, PartialEq)]
pub struct VpChoreography {
    pub topology: Topology,
    pub candidates: usize,
    pub epsilon: f64,
    /// Local stopping threshold on the largest neighbor disagreement.
    pub local_tolerance: f64,
    pub params: VoteParams,
    pub rules: BTreeMap<ResourceAddress, AgentRule>,
}

fn name(s: &str) -> Name {
    Name::new(s).expect("generated names are valid")
}

fn x(c: usize) -> String {
    format!("x{c}")
}

fn mailbox(c: usize, j: usize) -> String {
    format!("m{c}_{j}")
}

fn parse(src: &str) -> AgentRule {
    parse_rule(src).expect("generated rules parse")
}

/// `n x (K + 2)` rules over the cells of `topology`. The local tolerance is
/// the global one divided by the node count, so nodes that all stop agree
/// within the global tolerance.
pub fn compile_vp_to_sc(
    topology: &Topology,
    candidates: usize,
    params: &VoteParams,
) -> Result<VpChoreography, VoteError> {
    if candidates < 2 {
        return Err(VoteError::InvalidProfile(
            "fewer than two candidates".into(),
        ));
    }
    let epsilon = params
        .epsilon
        .unwrap_or_else(|| default_epsilon([topology]));
    super::check_epsilon(epsilon, topology)?;
    let local_tolerance = params.tolerance / topology.len().max(1) as f64;
    let mut rules = BTreeMap::new();
    for i in 0..topology.len() {
        let cell = topology.nodes()[i].clone();
        let nbrs: Vec<usize> = topology.neighbors(i).collect();
        for c in 1..=candidates {
            let xc = x(c);
            let mut next = format!("L/{xc}");
            if !nbrs.is_empty() {
                let terms: Vec<String> = nbrs
                    .iter()
                    .map(|&j| format!("(L/{} - L/{xc})", mailbox(c, j)))
                    .collect();
                next = format!("L/{xc} + {epsilon:?} * ({})", terms.join(" + "));
            }
            let mut actions = alloc::vec![format!("UPDATE self/L/{xc} = {next}")];
            for &j in &nbrs {
                let peer = &topology.nodes()[j];
                actions.push(format!("UPDATE {peer}/L/{} = {next}", mailbox(c, i)));
            }
            let src = format!("ON L/tick IF L/tick <= L/limit THEN {}", actions.join("; "));
            rules.insert(
                ResourceAddress::new(cell.clone(), Kind::A, name(&format!("nac{c}"))),
                parse(&src),
            );
        }
        let stop = if nbrs.is_empty() {
            String::from("not L/done")
        } else {
            let gaps: Vec<String> = (1..=candidates)
                .flat_map(|c| {
                    nbrs.iter()
                        .map(move |&j| format!("abs(L/{} - L/{})", mailbox(c, j), x(c)))
                })
                .collect();
            format!(
                "not L/done and (L/tick >= L/limit or max({}) < L/tol)",
                gaps.join(", ")
            )
        };
        rules.insert(
            ResourceAddress::new(cell.clone(), Kind::A, name("control")),
            parse(&format!(
                "ON L/tick IF {stop} THEN UPDATE self/L/done = true"
            )),
        );
        let xs: Vec<String> = (1..=candidates).map(|c| format!("L/{}", x(c))).collect();
        let xs = xs.join(", ");
        let threshold = params.delta + params.tolerance;
        rules.insert(
            ResourceAddress::new(cell, Kind::A, name("select")),
            parse(&format!(
                "ON L/done IF L/done THEN UPDATE self/L/winner = argmax({xs}); \
                 UPDATE self/L/margin = gap({xs}); \
                 UPDATE self/L/decided = gap({xs}) > {threshold:?}"
            )),
        );
    }
    Ok(VpChoreography {
        topology: topology.clone(),
        candidates,
        epsilon,
        local_tolerance,
        params: params.clone(),
        rules,
    })
}

impl VpChoreography {
    /// One cell per node holding its utilities, its mailboxes seeded with
    /// the neighbors' utilities, the control resources and the rules.
    pub fn instantiate(&self, profile: &PreferenceProfile) -> Result<Vec<Cell>, VoteError> {
        let n = self.topology.len();
        if profile.decision_makers() != n {
            return Err(VoteError::SizeMismatch {
                expected: profile.decision_makers(),
                found: n,
            });
        }
        if profile.candidates() != self.candidates {
            return Err(VoteError::InvalidProfile(format!(
                "profile has {} candidates, choreography {}",
                profile.candidates(),
                self.candidates
            )));
        }
        let u = profile.rows();
        let real = |v: f64| Value::real(v).expect("validated utilities are finite");
        let mut cells = Vec::with_capacity(n);
        for i in 0..n {
            let id = self.topology.nodes()[i].clone();
            let mut cell = Cell::new(id.clone());
            let mut put = |n: &str, kind: Kind, p: Payload| {
                let a = ResourceAddress::new(id.clone(), kind, name(n));
                cell.apply(Operation::Create, &a, Some(p), Writer::System, 0)
                    .expect("fresh cell accepts generated resources");
            };
            for c in 1..=self.candidates {
                put(&x(c), Kind::L, Payload::Value(real(u[i][c - 1])));
                for j in self.topology.neighbors(i) {
                    put(&mailbox(c, j), Kind::L, Payload::Value(real(u[j][c - 1])));
                }
            }
            let limit = i64::try_from(self.params.max_iters).unwrap_or(i64::MAX);
            put("tick", Kind::L, Payload::Value(Value::Int(0)));
            put("done", Kind::L, Payload::Value(Value::Bool(false)));
            put("limit", Kind::L, Payload::Value(Value::Int(limit)));
            put("tol", Kind::L, Payload::Value(real(self.local_tolerance)));
            put("winner", Kind::L, Payload::Value(Value::Int(0)));
            put("margin", Kind::L, Payload::Value(real(0.0)));
            put("decided", Kind::L, Payload::Value(Value::Bool(false)));
            for (addr, rule) in self.rules.iter().filter(|(a, _)| a.cell == id) {
                put(addr.name.as_str(), Kind::A, Payload::from(rule.clone()));
            }
            cells.push(cell);
        }
        Ok(cells)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompiledOutcome {
    /// Winner reported by every cell, 1-based.
    pub winners: Vec<usize>,
    pub decided: Vec<bool>,
    /// Per cell, the tick count at which it stopped.
    pub stopped_at: Vec<usize>,
    /// Final iterates per cell.
    pub values: Vec<Vec<f64>>,
    pub finished_at: Tick,
}

impl CompiledOutcome {
    /// The common winner when every cell decided the same one.
    pub fn agreed_winner(&self) -> Option<usize> {
        let w = *self.winners.first()?;
        (self.decided.iter().all(|&d| d) && self.winners.iter().all(|&x| x == w)).then_some(w)
    }
}

fn read_value(world: &World, cell: &CellId, n: &str) -> Option<Value> {
    let a = ResourceAddress::new(cell.clone(), Kind::L, name(n));
    world.read(&a)?.as_value().cloned()
}

/// Runs the choreography on the simulated network, driving one tick per
/// `period` until every cell has stopped or `max_iters + 1` ticks passed.
pub fn run_compiled(
    choreo: &VpChoreography,
    profile: &PreferenceProfile,
    link: LinkModel,
    period: Tick,
    seed: u64,
) -> Result<CompiledOutcome, VoteError> {
    if period == 0 {
        return Err(VoteError::InvalidParameter(
            "period must be positive".into(),
        ));
    }
    let cells = choreo.instantiate(profile)?;
    let ids: Vec<CellId> = cells.iter().map(|c| c.id().clone()).collect();
    let net = Network::new(choreo.topology.clone(), link, seed)
        .map_err(|e| VoteError::Engine(e.into()))?;
    let mut world = World::new(cells, net)?;
    let done = |w: &World, id: &CellId| read_value(w, id, "done") == Some(Value::Bool(true));
    let mut tick = 0usize;
    while tick <= choreo.params.max_iters && !ids.iter().all(|id| done(&world, id)) {
        tick += 1;
        let at = tick as Tick * period;
        for id in &ids {
            let a = ResourceAddress::new(id.clone(), Kind::L, name("tick"));
            world.drive(at, a, Value::Int(tick as i64))?;
        }
        world.run_until(Some(at + period - 1));
    }
    world.run_until(None);
    let mut out = CompiledOutcome {
        winners: Vec::new(),
        decided: Vec::new(),
        stopped_at: Vec::new(),
        values: Vec::new(),
        finished_at: world.now(),
    };
    for id in &ids {
        let int = |n: &str| match read_value(&world, id, n) {
            Some(Value::Int(v)) => usize::try_from(v).unwrap_or(0),
            _ => 0,
        };
        out.winners.push(int("winner"));
        out.decided
            .push(read_value(&world, id, "decided") == Some(Value::Bool(true)));
        let stopped = world
            .events()
            .iter()
            .find(|e| e.address.cell == *id && e.address.name.as_str() == "done")
            .map_or(0, |e| (e.time / period) as usize);
        out.stopped_at.push(stopped);
        out.values.push(
            (1..=choreo.candidates)
                .map(|c| match read_value(&world, id, &x(c)) {
                    Some(Value::Real(v)) => v,
                    Some(Value::Int(v)) => v as f64,
                    _ => f64::NAN,
                })
                .collect(),
        );
    }
    Ok(out)
}
