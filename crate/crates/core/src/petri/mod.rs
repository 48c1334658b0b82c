//! Colored Petri-net view of a choreography.
//!
//! Resources become places whose tokens are full values; each agent
//! becomes a transition paired with an agent-place that holds the rule
//! currently installed at that `/A/` address. A transition is enabled when
//! its agent-place holds its template and the rule's PRE holds; firing
//! applies all of the rule's actions atomically. Markings are explored by
//! interleaving, one agent firing per edge.

mod explore;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::Serialize;
use thiserror::Error;

use crate::crm::{Cell, CellId, IoRole, Kind, Operation, Payload, ResourceAddress};
use crate::rule::{call_builtin, AgentRule, BinOp, Builtin, Expr, Post, Ref, UnOp};
use crate::value::Value;

pub use explore::{
    check_range, check_termination, explore_states, Domain, Edge, EdgeLabel, ExploreConfig,
    InputSpec, Marking, RangeReport, StateGraph, Termination, DEFAULT_MAX_STATES,
};

pub type PlaceId = usize;
pub type TemplateId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PetriError {
    #[error("rule {agent} cannot be translated: {reason}")]
    UntranslatableRule {
        agent: ResourceAddress,
        reason: String,
    },
    #[error("place {0} has no finite domain")]
    DomainUnbounded(ResourceAddress),
    #[error("value {value} written to {address} lies outside its domain")]
    DomainViolation {
        address: ResourceAddress,
        value: Value,
    },
    #[error("no place {0}")]
    UnknownPlace(ResourceAddress),
}

/// Marking of a single place.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Token {
    /// Resource absent; for an agent-place, the agent is dead.
    Absent,
    Value(Value),
    /// Agent-place holding a live rule template.
    Agent(TemplateId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Place {
    pub id: PlaceId,
    pub address: ResourceAddress,
    /// Direction of an `/S/` place, when bound.
    pub io: Option<IoRole>,
}

impl Place {
    pub fn is_agent(&self) -> bool {
        self.address.kind == Kind::A
    }
}

/// An expression whose references are resolved to places. Serialized in
/// its textual form, with places written `#id`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NetExpr {
    Lit(Value),
    Place(PlaceId),
    Exists(PlaceId),
    Unary(UnOp, alloc::boxed::Box<NetExpr>),
    Binary(
        BinOp,
        alloc::boxed::Box<NetExpr>,
        alloc::boxed::Box<NetExpr>,
    ),
    Call(Builtin, Vec<NetExpr>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum NetPost {
    Expr(NetExpr),
    Template(TemplateId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NetAction {
    pub operation: Operation,
    pub target: PlaceId,
    pub post: Option<NetPost>,
}

/// A rule as it can be installed at an agent-place.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Template {
    pub id: TemplateId,
    pub host: CellId,
    /// Rule source text.
    pub source: String,
    #[serde(skip)]
    pub rule: AgentRule,
    pub guard: NetExpr,
    pub actions: Vec<NetAction>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub id: usize,
    /// The agent-place this transition is paired with.
    pub agent_place: PlaceId,
    pub template: TemplateId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PetriNet {
    pub places: Vec<Place>,
    pub transitions: Vec<Transition>,
    pub templates: Vec<Template>,
    pub initial: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq)]
enum NetEvalError {
    Absent,
    Type,
    Value,
}

impl PetriNet {
    pub fn place(&self, address: &ResourceAddress) -> Option<PlaceId> {
        self.places
            .binary_search_by(|p| p.address.cmp(address))
            .ok()
    }

    /// Places written by some template action with a value payload.
    pub fn written_places(&self) -> BTreeSet<PlaceId> {
        self.templates
            .iter()
            .flat_map(|t| t.actions.iter())
            .filter(|a| matches!(a.post, Some(NetPost::Expr(_))))
            .map(|a| a.target)
            .filter(|&p| !self.places[p].is_agent())
            .collect()
    }

    fn eval(&self, e: &NetExpr, m: &[Token]) -> Result<Value, NetEvalError> {
        match e {
            NetExpr::Lit(v) => Ok(v.clone()),
            NetExpr::Place(p) => match &m[*p] {
                Token::Value(v) => Ok(v.clone()),
                Token::Absent => Err(NetEvalError::Absent),
                Token::Agent(_) => Err(NetEvalError::Type),
            },
            NetExpr::Exists(p) => Ok(Value::Bool(m[*p] != Token::Absent)),
            NetExpr::Unary(UnOp::Neg, a) => self.eval(a, m)?.neg().map_err(|_| NetEvalError::Value),
            NetExpr::Unary(UnOp::Not, a) => Ok(Value::Bool(!self.eval_bool(a, m)?)),
            NetExpr::Binary(BinOp::And, a, b) => {
                Ok(Value::Bool(self.eval_bool(a, m)? && self.eval_bool(b, m)?))
            }
            NetExpr::Binary(BinOp::Or, a, b) => {
                Ok(Value::Bool(self.eval_bool(a, m)? || self.eval_bool(b, m)?))
            }
            NetExpr::Binary(op, a, b) => {
                let (x, y) = (self.eval(a, m)?, self.eval(b, m)?);
                let r = match op {
                    BinOp::Add => x.add(&y),
                    BinOp::Sub => x.sub(&y),
                    BinOp::Mul => x.mul(&y),
                    BinOp::Div => x.div(&y),
                    BinOp::Rem => x.rem(&y),
                    cmp => x.compare(&y).map(|ord| {
                        Value::Bool(match cmp {
                            BinOp::Eq => ord == Ordering::Equal,
                            BinOp::Ne => ord != Ordering::Equal,
                            BinOp::Lt => ord == Ordering::Less,
                            BinOp::Le => ord != Ordering::Greater,
                            BinOp::Gt => ord == Ordering::Greater,
                            BinOp::Ge => ord != Ordering::Less,
                            _ => unreachable!("logical operators handled above"),
                        })
                    }),
                };
                r.map_err(|_| NetEvalError::Value)
            }
            NetExpr::Call(f, args) => {
                let vals = args
                    .iter()
                    .map(|a| self.eval(a, m))
                    .collect::<Result<Vec<_>, _>>()?;
                call_builtin(*f, &vals).map_err(|_| NetEvalError::Value)
            }
        }
    }

    fn eval_bool(&self, e: &NetExpr, m: &[Token]) -> Result<bool, NetEvalError> {
        self.eval(e, m)?.as_bool().ok_or(NetEvalError::Type)
    }

    pub fn is_enabled(&self, t: &Transition, m: &[Token]) -> bool {
        m[t.agent_place] == Token::Agent(t.template)
            && self.eval_bool(&self.templates[t.template].guard, m) == Ok(true)
    }

    /// Fires an enabled transition. Payloads are evaluated on the pre-firing
    /// marking; actions then apply in order with the middleware's rules, and
    /// failing ones are skipped.
    pub fn fire(&self, t: &Transition, m: &[Token]) -> Vec<Token> {
        let template = &self.templates[t.template];
        let payloads: Vec<Option<Option<Token>>> = template
            .actions
            .iter()
            .map(|a| match &a.post {
                None => Some(None),
                Some(NetPost::Template(id)) => Some(Some(Token::Agent(*id))),
                Some(NetPost::Expr(e)) => self.eval(e, m).ok().map(|v| Some(Token::Value(v))),
            })
            .collect();
        let mut next = m.to_vec();
        for (a, payload) in template.actions.iter().zip(payloads) {
            let Some(payload) = payload else { continue };
            let place = &self.places[a.target];
            if place.address.kind == Kind::S {
                let allowed = a.operation == Operation::Update && place.io == Some(IoRole::Output);
                if !allowed {
                    continue;
                }
            }
            let present = next[a.target] != Token::Absent;
            match (a.operation, payload) {
                (Operation::Create, Some(tok)) if !present => next[a.target] = tok,
                (Operation::Update, Some(tok)) if present => next[a.target] = tok,
                (Operation::Delete, None) if present => next[a.target] = Token::Absent,
                _ => {}
            }
        }
        next
    }

    /// Payload-level view of a marking: every present place with its value
    /// or installed rule.
    pub fn valuation(&self, m: &[Token]) -> BTreeMap<ResourceAddress, Payload> {
        self.places
            .iter()
            .filter_map(|p| {
                let payload = match &m[p.id] {
                    Token::Absent => return None,
                    Token::Value(v) => Payload::Value(v.clone()),
                    Token::Agent(t) => Payload::from(self.templates[*t].rule.clone()),
                };
                Some((p.address.clone(), payload))
            })
            .collect()
    }
}

struct Builder {
    templates: Vec<(CellId, AgentRule)>,
    addresses: BTreeSet<ResourceAddress>,
    /// Templates that may be installed at each agent address.
    holders: BTreeMap<ResourceAddress, BTreeSet<TemplateId>>,
}

impl Builder {
    fn template(&mut self, host: &CellId, rule: &AgentRule) -> TemplateId {
        if let Some(i) = self
            .templates
            .iter()
            .position(|(h, r)| h == host && r == rule)
        {
            return i;
        }
        self.templates.push((host.clone(), rule.clone()));
        self.templates.len() - 1
    }

    /// Registers every address a template touches, and nested templates.
    fn scan(&mut self, id: TemplateId, agent: &ResourceAddress) -> Result<(), PetriError> {
        let (host, rule) = self.templates[id].clone();
        let untranslatable = |reason: &str| PetriError::UntranslatableRule {
            agent: agent.clone(),
            reason: reason.to_string(),
        };
        let mut refs: Vec<(Ref, bool)> = Vec::new();
        rule.pre
            .visit_refs(&mut |r, prev| refs.push((r.clone(), prev)));
        for a in &rule.actions {
            if let Some(Post::Expr(e)) = &a.post {
                e.visit_refs(&mut |r, prev| refs.push((r.clone(), prev)));
            }
        }
        if refs.iter().any(|(_, prev)| *prev) {
            return Err(untranslatable(
                "prev() has no place; encode the memory in an /L/ resource",
            ));
        }
        for (r, _) in refs {
            self.addresses.insert(r.resolve(&host));
        }
        for r in &rule.on {
            self.addresses.insert(r.resolve(&host));
        }
        for a in &rule.actions {
            let target = a.target.resolve(&host);
            self.addresses.insert(target.clone());
            if let Some(Post::Rule(nested)) = &a.post {
                let before = self.templates.len();
                let child = self.template(&target.cell, nested);
                self.holders
                    .entry(target.clone())
                    .or_default()
                    .insert(child);
                if child == before {
                    self.scan(child, &target)?;
                }
            }
        }
        Ok(())
    }
}

fn compile(e: &Expr, host: &CellId, place: &impl Fn(&ResourceAddress) -> PlaceId) -> NetExpr {
    use alloc::boxed::Box;
    match e {
        Expr::Lit(v) => NetExpr::Lit(v.clone()),
        Expr::Ref(r) => NetExpr::Place(place(&r.resolve(host))),
        Expr::Exists(r) => NetExpr::Exists(place(&r.resolve(host))),
        Expr::Prev(_) | Expr::ExistsPrev(_) => unreachable!("rejected during scanning"),
        Expr::Unary(op, a) => NetExpr::Unary(*op, Box::new(compile(a, host, place))),
        Expr::Binary(op, a, b) => NetExpr::Binary(
            *op,
            Box::new(compile(a, host, place)),
            Box::new(compile(b, host, place)),
        ),
        Expr::Call(f, args) => {
            NetExpr::Call(*f, args.iter().map(|a| compile(a, host, place)).collect())
        }
    }
}

/// Translates a choreography, given as cells with their initial resources.
pub fn sc_to_petri<'a>(cells: impl IntoIterator<Item = &'a Cell>) -> Result<PetriNet, PetriError> {
    let cells: Vec<&Cell> = cells.into_iter().collect();
    let mut b = Builder {
        templates: Vec::new(),
        addresses: BTreeSet::new(),
        holders: BTreeMap::new(),
    };
    let mut initial_tokens: BTreeMap<ResourceAddress, Token> = BTreeMap::new();
    let mut io: BTreeMap<ResourceAddress, IoRole> = BTreeMap::new();
    for cell in &cells {
        for (name, role) in cell.io_bindings() {
            io.insert(cell.address(Kind::S, name.clone()), role);
        }
        for r in cell.resources() {
            b.addresses.insert(r.address.clone());
            let tok = match &r.payload {
                Payload::Value(v) => Token::Value(v.clone()),
                Payload::Rule(rule) => {
                    let id = b.template(cell.id(), rule);
                    b.holders.entry(r.address.clone()).or_default().insert(id);
                    b.scan(id, &r.address)?;
                    Token::Agent(id)
                }
            };
            initial_tokens.insert(r.address.clone(), tok);
        }
    }

    let places: Vec<Place> = b
        .addresses
        .iter()
        .enumerate()
        .map(|(id, a)| Place {
            id,
            address: a.clone(),
            io: io.get(a).copied(),
        })
        .collect();
    let index: BTreeMap<&ResourceAddress, PlaceId> =
        places.iter().map(|p| (&p.address, p.id)).collect();
    let place = |a: &ResourceAddress| index[a];

    let templates = b
        .templates
        .iter()
        .enumerate()
        .map(|(id, (host, rule))| {
            let actions = rule
                .actions
                .iter()
                .map(|a| {
                    let target = a.target.resolve(host);
                    let post = match &a.post {
                        None => None,
                        Some(Post::Expr(e)) => Some(NetPost::Expr(compile(e, host, &place))),
                        Some(Post::Rule(nested)) => Some(NetPost::Template(
                            b.templates
                                .iter()
                                .position(|(h, r)| h == &target.cell && r == nested.as_ref())
                                .expect("nested templates registered during scanning"),
                        )),
                    };
                    NetAction {
                        operation: a.operation,
                        target: place(&target),
                        post,
                    }
                })
                .collect();
            Template {
                id,
                host: host.clone(),
                source: rule.to_string(),
                rule: rule.clone(),
                guard: compile(&rule.pre, host, &place),
                actions,
            }
        })
        .collect();

    let mut transitions = Vec::new();
    for (addr, ts) in &b.holders {
        for &template in ts {
            transitions.push(Transition {
                id: transitions.len(),
                agent_place: place(addr),
                template,
            });
        }
    }
    let initial = places
        .iter()
        .map(|p| {
            initial_tokens
                .get(&p.address)
                .cloned()
                .unwrap_or(Token::Absent)
        })
        .collect();
    Ok(PetriNet {
        places,
        transitions,
        templates,
        initial,
    })
}

impl Serialize for NetExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl core::fmt::Display for NetExpr {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NetExpr::Lit(v) => write!(f, "{v}"),
            NetExpr::Place(p) => write!(f, "#{p}"),
            NetExpr::Exists(p) => write!(f, "exists(#{p})"),
            NetExpr::Unary(UnOp::Neg, a) => write!(f, "-({a})"),
            NetExpr::Unary(UnOp::Not, a) => write!(f, "not ({a})"),
            NetExpr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            NetExpr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
