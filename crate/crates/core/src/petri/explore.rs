use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{PetriError, PetriNet, PlaceId, Token};
use crate::crm::ResourceAddress;
use crate::value::Value;

pub const DEFAULT_MAX_STATES: usize = 100_000;

/// Finite value domain of a place.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Integers in `[lo, hi]`.
    Int {
        lo: i64,
        hi: i64,
    },
    Bool,
}

impl Domain {
    pub fn contains(&self, v: &Value) -> bool {
        match (self, v) {
            (Domain::Int { lo, hi }, Value::Int(i)) => lo <= i && i <= hi,
            (Domain::Bool, Value::Bool(_)) => true,
            _ => false,
        }
    }

    pub fn values(&self) -> Vec<Value> {
        match self {
            Domain::Int { lo, hi } => (*lo..=*hi).map(Value::Int).collect(),
            Domain::Bool => vec![Value::Bool(false), Value::Bool(true)],
        }
    }
}

/// How the environment may drive an input place during exploration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    /// Any domain value, at any time.
    AnyOf,
    /// The listed values, in order, each at any time after the previous.
    Sequence(Vec<Value>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExploreConfig {
    pub max_states: usize,
    pub domains: BTreeMap<ResourceAddress, Domain>,
    pub inputs: BTreeMap<ResourceAddress, InputSpec>,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            max_states: DEFAULT_MAX_STATES,
            domains: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }
}

/// Place tokens plus the position of each input sequence.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Marking {
    pub tokens: Vec<Token>,
    pub cursors: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeLabel {
    Transition(usize),
    Input(PlaceId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub label: EdgeLabel,
}

/// Reachable markings in BFS discovery order; vertex 0 is the initial
/// marking. Firings that change nothing are not recorded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StateGraph {
    pub markings: Vec<Marking>,
    pub edges: Vec<Edge>,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Terminates,
    /// A reachable cycle of agent firings, as vertex indices.
    MayNotTerminate {
        witness: Vec<usize>,
    },
    /// Exploration was truncated before a cycle was found.
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RangeReport {
    pub min: Option<Value>,
    pub max: Option<Value>,
    /// False when exploration was truncated.
    pub complete: bool,
}

/// Exhaustive breadth-first exploration up to `max_states` markings.
pub fn explore_states(net: &PetriNet, cfg: &ExploreConfig) -> Result<StateGraph, PetriError> {
    let mut inputs: Vec<(PlaceId, &InputSpec)> = Vec::new();
    for (addr, spec) in &cfg.inputs {
        let p = net
            .place(addr)
            .ok_or_else(|| PetriError::UnknownPlace(addr.clone()))?;
        inputs.push((p, spec));
    }
    let mut domains: BTreeMap<PlaceId, &Domain> = BTreeMap::new();
    for (addr, d) in &cfg.domains {
        if let Some(p) = net.place(addr) {
            domains.insert(p, d);
        }
    }
    let needs_domain: BTreeSet<PlaceId> = net
        .written_places()
        .into_iter()
        .chain(inputs.iter().map(|(p, _)| *p))
        .collect();
    for p in &needs_domain {
        if !domains.contains_key(p) {
            return Err(PetriError::DomainUnbounded(net.places[*p].address.clone()));
        }
    }
    let any_values: Vec<Vec<Value>> = inputs
        .iter()
        .map(|(p, spec)| match spec {
            InputSpec::AnyOf => domains[p].values(),
            InputSpec::Sequence(_) => Vec::new(),
        })
        .collect();
    let check = |before: &[Token], after: &[Token]| -> Result<(), PetriError> {
        for (p, (a, b)) in before.iter().zip(after).enumerate() {
            if let (true, Token::Value(v)) = (a != b, b) {
                if let Some(d) = domains.get(&p) {
                    if !d.contains(v) {
                        return Err(PetriError::DomainViolation {
                            address: net.places[p].address.clone(),
                            value: v.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    };

    let root = Marking {
        tokens: net.initial.clone(),
        cursors: vec![0; inputs.len()],
    };
    let mut graph = StateGraph {
        markings: vec![root.clone()],
        edges: Vec::new(),
        truncated: false,
    };
    let mut index: BTreeMap<Marking, usize> = BTreeMap::from([(root, 0)]);
    let mut frontier = VecDeque::from([0usize]);

    while let Some(from) = frontier.pop_front() {
        let current = graph.markings[from].clone();
        let mut successors: Vec<(Marking, EdgeLabel)> = Vec::new();
        for t in &net.transitions {
            if !net.is_enabled(t, &current.tokens) {
                continue;
            }
            let tokens = net.fire(t, &current.tokens);
            if tokens == current.tokens {
                continue;
            }
            check(&current.tokens, &tokens)?;
            successors.push((
                Marking {
                    tokens,
                    cursors: current.cursors.clone(),
                },
                EdgeLabel::Transition(t.id),
            ));
        }
        for (k, (p, spec)) in inputs.iter().enumerate() {
            let mut set = |v: Value, advance: bool| -> Result<(), PetriError> {
                let mut next = current.clone();
                next.tokens[*p] = Token::Value(v);
                if advance {
                    next.cursors[k] += 1;
                } else if next.tokens == current.tokens {
                    return Ok(());
                }
                check(&current.tokens, &next.tokens)?;
                successors.push((next, EdgeLabel::Input(*p)));
                Ok(())
            };
            match spec {
                InputSpec::Sequence(seq) => {
                    if let Some(v) = seq.get(current.cursors[k]) {
                        set(v.clone(), true)?;
                    }
                }
                InputSpec::AnyOf => {
                    for v in &any_values[k] {
                        set(v.clone(), false)?;
                    }
                }
            }
        }
        for (m, label) in successors {
            let to = match index.get(&m) {
                Some(&i) => i,
                None => {
                    if graph.markings.len() >= cfg.max_states {
                        graph.truncated = true;
                        continue;
                    }
                    let i = graph.markings.len();
                    index.insert(m.clone(), i);
                    graph.markings.push(m);
                    frontier.push_back(i);
                    i
                }
            };
            graph.edges.push(Edge { from, to, label });
        }
    }
    Ok(graph)
}

impl StateGraph {
    /// Looks for a cycle made of transition firings only.
    pub fn termination(&self) -> Termination {
        let n = self.markings.len();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            if let EdgeLabel::Transition(_) = e.label {
                adj[e.from].push(e.to);
            }
        }
        // 0 = unvisited, 1 = on stack, 2 = done.
        let mut color = vec![0u8; n];
        for start in 0..n {
            if color[start] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
            color[start] = 1;
            while let Some(&mut (u, ref mut next)) = stack.last_mut() {
                if let Some(&v) = adj[u].get(*next) {
                    *next += 1;
                    match color[v] {
                        0 => {
                            color[v] = 1;
                            stack.push((v, 0));
                        }
                        1 => {
                            let from = stack.iter().position(|&(w, _)| w == v).expect("on stack");
                            let witness = stack[from..].iter().map(|&(w, _)| w).collect();
                            return Termination::MayNotTerminate { witness };
                        }
                        _ => {}
                    }
                } else {
                    color[u] = 2;
                    stack.pop();
                }
            }
        }
        if self.truncated {
            Termination::Unknown
        } else {
            Termination::Terminates
        }
    }

    /// Markings with no outgoing transition firing.
    pub fn quiescent(&self) -> Vec<usize> {
        let busy: BTreeSet<usize> = self
            .edges
            .iter()
            .filter(|e| matches!(e.label, EdgeLabel::Transition(_)))
            .map(|e| e.from)
            .collect();
        (0..self.markings.len())
            .filter(|i| !busy.contains(i))
            .collect()
    }
}

pub fn check_termination(net: &PetriNet, cfg: &ExploreConfig) -> Result<Termination, PetriError> {
    Ok(explore_states(net, cfg)?.termination())
}

/// Extrema of a place's value over the reachable markings.
pub fn check_range(
    net: &PetriNet,
    place: &ResourceAddress,
    cfg: &ExploreConfig,
) -> Result<RangeReport, PetriError> {
    let p = net
        .place(place)
        .ok_or_else(|| PetriError::UnknownPlace(place.clone()))?;
    let graph = explore_states(net, cfg)?;
    let values = graph.markings.iter().filter_map(|m| match &m.tokens[p] {
        Token::Value(v) => Some(v),
        _ => None,
    });
    let (mut min, mut max): (Option<Value>, Option<Value>) = (None, None);
    for v in values {
        if min.as_ref().is_none_or(|m| v < m) {
            min = Some(v.clone());
        }
        if max.as_ref().is_none_or(|m| v > m) {
            max = Some(v.clone());
        }
    }
    Ok(RangeReport {
        min,
        max,
        complete: !graph.truncated,
    })
}
