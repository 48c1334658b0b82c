use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Choreography, DeployError, DeployTarget, Mapping, ResourceKey};
use crate::crm::{
    Cell, CellId, Interaction, IoRole, Kind, Name, Operation, Payload, ResourceAddress, Writer,
};
use crate::engine::World;
use crate::rule::{Action, AgentRule, CellRef, Expr, Post, Ref};
use crate::value::Value;
use crate::Tick;

/// Agent name of the composed deployer injected on the first cell.
pub const DNA_NAME: &str = "dna";
/// Agent name of the per-node deployers the DNA creates.
pub const DEPLOYER_NAME: &str = "dna_deployer";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// One supervisor write per resource.
    Direct,
    /// One nested deployer agent that unpacks itself across the network.
    Dna,
}

/// Where the deployable resources of a choreography ended up.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PlacementReport {
    pub strategy: Strategy,
    pub placed: BTreeMap<ResourceKey, CellId>,
    pub missing: Vec<ResourceKey>,
    pub expected: usize,
    /// Deployer agents still live after the bound.
    pub leftover_deployers: Vec<ResourceAddress>,
    pub finished_at: Tick,
}

impl PlacementReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty() && self.leftover_deployers.is_empty()
    }
}

fn name(s: &str) -> Name {
    Name::new(s).expect("constant names are valid")
}

fn host_ref(kind: Kind, n: &str) -> Ref {
    Ref::host(kind, name(n))
}

fn map_refs(e: &Expr, f: &impl Fn(&Ref) -> Result<Ref, DeployError>) -> Result<Expr, DeployError> {
    Ok(match e {
        Expr::Lit(v) => Expr::Lit(v.clone()),
        Expr::Ref(r) => Expr::Ref(f(r)?),
        Expr::Prev(r) => Expr::Prev(f(r)?),
        Expr::Exists(r) => Expr::Exists(f(r)?),
        Expr::ExistsPrev(r) => Expr::ExistsPrev(f(r)?),
        Expr::Unary(op, a) => Expr::Unary(*op, Box::new(map_refs(a, f)?)),
        Expr::Binary(op, a, b) => {
            Expr::Binary(*op, Box::new(map_refs(a, f)?), Box::new(map_refs(b, f)?))
        }
        Expr::Call(func, args) => Expr::Call(
            *func,
            args.iter()
                .map(|a| map_refs(a, f))
                .collect::<Result<_, _>>()?,
        ),
    })
}

/// Rewrites logical references of a rule hosted on `host` into concrete
/// ones: `self` when the resource sits on the host, its node otherwise.
fn localize(rule: &AgentRule, host: &CellId, mapping: &Mapping) -> Result<AgentRule, DeployError> {
    let node = |r: &Ref| -> Result<&CellId, DeployError> {
        if r.cell != CellRef::Host {
            return Err(DeployError::LocatedReference(alloc::format!(
                "{}/{}", r.kind, r.name
            )));
        }
        let key = ResourceKey::of(r);
        mapping
            .node_of(&key)
            .ok_or(DeployError::UnknownResource(key))
    };
    let place = |r: &Ref| -> Result<Ref, DeployError> {
        let n = node(r)?;
        Ok(Ref {
            cell: if n == host {
                CellRef::Host
            } else {
                CellRef::Cell(n.clone())
            },
            kind: r.kind,
            name: r.name.clone(),
        })
    };
    let mut actions = Vec::with_capacity(rule.actions.len());
    for a in &rule.actions {
        let target = place(&a.target)?;
        let post = match &a.post {
            None => None,
            Some(Post::Expr(e)) => Some(Post::Expr(map_refs(e, &place)?)),
            Some(Post::Rule(nested)) => {
                let at = node(&a.target)?;
                Some(Post::Rule(Arc::new(localize(nested, at, mapping)?)))
            }
        };
        actions.push(Action {
            operation: a.operation,
            target,
            post,
        });
    }
    Ok(AgentRule {
        on: rule.on.iter().map(place).collect::<Result<_, _>>()?,
        pre: map_refs(&rule.pre, &place)?,
        actions,
    })
}

/// Non-hardware resources with an initial payload, localized for their
/// node, in key order.
fn deployables(
    choreo: &Choreography,
    mapping: &Mapping,
) -> Result<Vec<(ResourceKey, CellId, Payload)>, DeployError> {
    let mut out = Vec::new();
    let mut decls: Vec<_> = choreo.resources.iter().collect();
    decls.sort_by(|a, b| a.key.cmp(&b.key));
    for d in decls {
        let Some(payload) = &d.initial else { continue };
        if d.key.kind == Kind::S {
            continue;
        }
        let node = mapping
            .node_of(&d.key)
            .ok_or_else(|| DeployError::UnknownResource(d.key.clone()))?
            .clone();
        let payload = match payload {
            Payload::Rule(r) => Payload::from(localize(r, &node, mapping)?),
            v => v.clone(),
        };
        out.push((d.key.clone(), node, payload));
    }
    Ok(out)
}

fn create(target: Ref, post: Post) -> Action {
    Action {
        operation: Operation::Create,
        target,
        post: Some(post),
    }
}

fn delete_self(n: &str) -> Action {
    Action {
        operation: Operation::Delete,
        target: host_ref(Kind::A, n),
        post: None,
    }
}

/// Agent that fires once, as soon as it is installed, and deletes itself.
fn one_shot(own: &str, mut actions: Vec<Action>) -> AgentRule {
    actions.push(delete_self(own));
    AgentRule {
        on: vec![host_ref(Kind::A, own)],
        pre: Expr::Lit(Value::Bool(true)),
        actions,
    }
}

/// Nests the whole deployment in one agent. Installed as `A/dna` on any
/// cell, it creates one `A/dna_deployer` per node that receives resources;
/// each deployer creates its node's resources and deletes itself, and the
/// DNA deletes itself after handing out the deployers.
pub fn compose_dna(choreo: &Choreography, mapping: &Mapping) -> Result<AgentRule, DeployError> {
    let mut per_node: BTreeMap<CellId, Vec<Action>> = BTreeMap::new();
    for (key, node, payload) in deployables(choreo, mapping)? {
        let post = match payload {
            Payload::Value(v) => Post::Expr(Expr::Lit(v)),
            Payload::Rule(r) => Post::Rule(r),
        };
        per_node
            .entry(node)
            .or_default()
            .push(create(Ref::host(key.kind, key.name), post));
    }
    let children = per_node
        .into_iter()
        .map(|(node, actions)| {
            create(
                Ref {
                    cell: CellRef::Cell(node),
                    kind: Kind::A,
                    name: name(DEPLOYER_NAME),
                },
                Post::Rule(Arc::new(one_shot(DEPLOYER_NAME, actions))),
            )
        })
        .collect();
    Ok(one_shot(DNA_NAME, children))
}

/// One cell per target node, holding the `/S/` resources bound to it.
pub fn hardware_cells(
    choreo: &Choreography,
    target: &DeployTarget,
) -> Result<Vec<Cell>, DeployError> {
    let mut cells: BTreeMap<CellId, Cell> = target
        .topology
        .nodes()
        .iter()
        .map(|n| (n.clone(), Cell::new(n.clone())))
        .collect();
    for d in choreo.resources.iter().filter(|d| d.key.kind == Kind::S) {
        let node = target
            .bindings
            .get(&d.key.name)
            .ok_or_else(|| DeployError::UnboundSensor(d.key.name.clone()))?;
        let cell = cells
            .get_mut(node)
            .ok_or_else(|| DeployError::UnknownNode(node.clone()))?;
        cell.bind_io(d.key.name.clone(), d.io.unwrap_or(IoRole::Input));
        if let Some(p) = &d.initial {
            let addr = cell.address(Kind::S, d.key.name.clone());
            cell.apply(Operation::Create, &addr, Some(p.clone()), Writer::System, 0)
                .map_err(|e| DeployError::InvalidChoreography(alloc::format!("{e}")))?;
        }
    }
    Ok(cells.into_values().collect())
}

/// Deploys `choreo` into `world` at time `at` and runs the world until
/// `at + bound`. The DNA is installed on `entry`. Fails with
/// `DeploymentTimeout` when some resource is missing or a deployer is still
/// live by then.
pub fn deploy(
    strategy: Strategy,
    choreo: &Choreography,
    mapping: &Mapping,
    world: &mut World,
    entry: &CellId,
    at: Tick,
    bound: Tick,
) -> Result<PlacementReport, DeployError> {
    let items = deployables(choreo, mapping)?;
    match strategy {
        Strategy::Direct => {
            for (key, node, payload) in &items {
                world.inject(
                    at,
                    Interaction {
                        target: ResourceAddress::new(node.clone(), key.kind, key.name.clone()),
                        operation: Operation::Create,
                        payload: Some(payload.clone()),
                    },
                )?;
            }
        }
        Strategy::Dna => {
            let dna = compose_dna(choreo, mapping)?;
            world.inject(
                at,
                Interaction {
                    target: ResourceAddress::new(entry.clone(), Kind::A, name(DNA_NAME)),
                    operation: Operation::Create,
                    payload: Some(Payload::from(dna)),
                },
            )?;
        }
    }
    world.run_until(Some(at + bound));

    let mut placed = BTreeMap::new();
    let mut missing = Vec::new();
    for (key, _, _) in &items {
        let home = world
            .cells()
            .find(|c| c.get(key.kind, &key.name).is_some())
            .map(|c| c.id().clone());
        match home {
            Some(c) => {
                placed.insert(key.clone(), c);
            }
            None => missing.push(key.clone()),
        }
    }
    let leftover_deployers = world
        .cells()
        .flat_map(|c| {
            [DNA_NAME, DEPLOYER_NAME]
                .into_iter()
                .filter(|n| c.get(Kind::A, &name(n)).is_some())
                .map(|n| c.address(Kind::A, name(n)))
        })
        .collect();
    let report = PlacementReport {
        strategy,
        placed,
        missing,
        expected: items.len(),
        leftover_deployers,
        finished_at: world.now(),
    };
    if report.is_complete() {
        Ok(report)
    } else {
        Err(DeployError::DeploymentTimeout(report))
    }
}
