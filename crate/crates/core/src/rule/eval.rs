use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use super::{Action, AgentRule, BinOp, Builtin, CellRef, Expr, Post, Ref, UnOp};
use crate::crm::{CellId, Interaction, Kind, Payload, ResourceAddress, Snapshot};
use crate::value::{Value, ValueError};

/// Pre-mutation payloads of the addresses mutated by the triggering event(s).
/// `None` means the address did not exist before.
pub type PrevValues = BTreeMap<ResourceAddress, Option<Payload>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unresolved reference {0}")]
    Unresolved(ResourceAddress),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("type error: {0}")]
    Type(&'static str),
}

/// Everything a rule may read while it is evaluated.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub host: &'a Snapshot,
    /// Last known snapshots of other cells, keyed by cell id.
    pub remote: &'a BTreeMap<CellId, Snapshot>,
    pub prev: &'a PrevValues,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionError {
    pub index: usize,
    pub target: ResourceAddress,
    pub error: EvalError,
}

/// Result of firing one agent: emitted interactions in action order, plus
/// the actions that failed to evaluate and were skipped.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Fired {
    pub interactions: Vec<Interaction>,
    pub errors: Vec<ActionError>,
}

impl<'a> EvalContext<'a> {
    fn lookup(&self, addr: &ResourceAddress) -> Option<&'a Payload> {
        if &addr.cell == self.host.cell() {
            self.host.get(addr.kind, &addr.name)
        } else {
            self.remote.get(&addr.cell)?.get(addr.kind, &addr.name)
        }
    }

    fn lookup_prev(&self, addr: &ResourceAddress) -> Option<&'a Payload> {
        match self.prev.get(addr) {
            Some(p) => p.as_ref(),
            None => self.lookup(addr),
        }
    }

    /// Lookup without building an address; the hot path of evaluation.
    fn lookup_ref(&self, r: &Ref) -> Option<&'a Payload> {
        match &r.cell {
            CellRef::Host => self.host.get(r.kind, &r.name),
            CellRef::Cell(c) if c == self.host.cell() => self.host.get(r.kind, &r.name),
            CellRef::Cell(c) => self.remote.get(c)?.get(r.kind, &r.name),
        }
    }

    fn resolve(&self, r: &Ref) -> ResourceAddress {
        r.resolve(self.host.cell())
    }

    fn value_of(&self, r: &Ref, prev: bool) -> Result<Value, EvalError> {
        if r.kind == Kind::A {
            return Err(EvalError::Type("agent resource used as a value"));
        }
        let payload = if prev && !self.prev.is_empty() {
            self.lookup_prev(&self.resolve(r))
        } else {
            self.lookup_ref(r)
        };
        match payload {
            Some(Payload::Value(v)) => Ok(v.clone()),
            Some(Payload::Rule(_)) => Err(EvalError::Type("agent resource used as a value")),
            None => Err(EvalError::Unresolved(self.resolve(r))),
        }
    }

    pub fn eval(&self, e: &Expr) -> Result<Value, EvalError> {
        match e {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Ref(r) => self.value_of(r, false),
            Expr::Prev(r) => self.value_of(r, true),
            Expr::Exists(r) => Ok(Value::Bool(self.lookup(&self.resolve(r)).is_some())),
            Expr::ExistsPrev(r) => Ok(Value::Bool(self.lookup_prev(&self.resolve(r)).is_some())),
            Expr::Unary(UnOp::Neg, a) => Ok(self.eval(a)?.neg()?),
            Expr::Unary(UnOp::Not, a) => Ok(Value::Bool(!self.eval_bool(a)?)),
            Expr::Binary(BinOp::And, a, b) => {
                Ok(Value::Bool(self.eval_bool(a)? && self.eval_bool(b)?))
            }
            Expr::Binary(BinOp::Or, a, b) => {
                Ok(Value::Bool(self.eval_bool(a)? || self.eval_bool(b)?))
            }
            Expr::Binary(op, a, b) => {
                let (x, y) = (self.eval(a)?, self.eval(b)?);
                Ok(match op {
                    BinOp::Add => x.add(&y)?,
                    BinOp::Sub => x.sub(&y)?,
                    BinOp::Mul => x.mul(&y)?,
                    BinOp::Div => x.div(&y)?,
                    BinOp::Rem => x.rem(&y)?,
                    cmp => {
                        let ord = x.compare(&y)?;
                        Value::Bool(match cmp {
                            BinOp::Eq => ord == Ordering::Equal,
                            BinOp::Ne => ord != Ordering::Equal,
                            BinOp::Lt => ord == Ordering::Less,
                            BinOp::Le => ord != Ordering::Greater,
                            BinOp::Gt => ord == Ordering::Greater,
                            BinOp::Ge => ord != Ordering::Less,
                            _ => unreachable!("logical operators handled above"),
                        })
                    }
                })
            }
            Expr::Call(f, args) => {
                let vals = args
                    .iter()
                    .map(|a| self.eval(a))
                    .collect::<Result<Vec<_>, _>>()?;
                call(*f, &vals)
            }
        }
    }

    fn eval_bool(&self, e: &Expr) -> Result<bool, EvalError> {
        self.eval(e)?
            .as_bool()
            .ok_or(EvalError::Type("expected a boolean"))
    }
}

pub(crate) fn call(f: Builtin, vals: &[Value]) -> Result<Value, EvalError> {
    if vals.iter().any(|v| !v.is_numeric()) {
        return Err(EvalError::Type("builtin expects numbers"));
    }
    if vals.is_empty() || (f == Builtin::Gap && vals.len() < 2) {
        return Err(EvalError::Type("wrong number of arguments"));
    }
    // Index of the first maximum.
    let argmax = |vals: &[Value]| -> Result<usize, EvalError> {
        let mut best = 0;
        for (i, v) in vals.iter().enumerate().skip(1) {
            if v.compare(&vals[best])? == Ordering::Greater {
                best = i;
            }
        }
        Ok(best)
    };
    Ok(match f {
        Builtin::Abs => {
            if vals[0].compare(&Value::Int(0))? == Ordering::Less {
                vals[0].neg()?
            } else {
                vals[0].clone()
            }
        }
        Builtin::Max => vals[argmax(vals)?].clone(),
        Builtin::Min => {
            let mut best = 0;
            for (i, v) in vals.iter().enumerate().skip(1) {
                if v.compare(&vals[best])? == Ordering::Less {
                    best = i;
                }
            }
            vals[best].clone()
        }
        Builtin::Argmax => Value::Int(argmax(vals)? as i64 + 1),
        Builtin::Gap => {
            let top = argmax(vals)?;
            let mut second: Option<usize> = None;
            for (i, v) in vals.iter().enumerate() {
                if i == top {
                    continue;
                }
                match second {
                    Some(s) if v.compare(&vals[s])? != Ordering::Greater => {}
                    _ => second = Some(i),
                }
            }
            vals[top].sub(&vals[second.expect("at least two arguments")])?
        }
    })
}

/// Evaluates the activation predicate. Pure.
pub fn evaluate_pre(rule: &AgentRule, ctx: &EvalContext<'_>) -> Result<bool, EvalError> {
    ctx.eval_bool(&rule.pre)
}

fn fire_action(action: &Action, ctx: &EvalContext<'_>) -> Result<Interaction, EvalError> {
    let target = ctx.resolve(&action.target);
    let payload = match &action.post {
        None => None,
        Some(Post::Expr(e)) => Some(Payload::Value(ctx.eval(e)?)),
        Some(Post::Rule(r)) => Some(Payload::Rule(r.clone())),
    };
    Ok(Interaction {
        target,
        operation: action.operation,
        payload,
    })
}

/// Evaluates every action's payload. A failing action is recorded and
/// skipped; the others are still emitted.
pub fn fire_agent(rule: &AgentRule, ctx: &EvalContext<'_>) -> Fired {
    let mut fired = Fired::default();
    for (index, action) in rule.actions.iter().enumerate() {
        match fire_action(action, ctx) {
            Ok(i) => fired.interactions.push(i),
            Err(error) => fired.errors.push(ActionError {
                index,
                target: ctx.resolve(&action.target),
                error,
            }),
        }
    }
    fired
}
