//! Event-condition-action agent rules.
//!
//! ```text
//! [ON ref, ...] IF <pre> THEN <action>; <action>; ...
//! action := CREATE ref = <post> | UPDATE ref = <post> | DELETE ref
//! post   := <expr> | { <nested rule> }
//! ref    := [cell/]K/name        (no cell or `self` means the host cell)
//! ```
//!
//! `PRE` may only read the host cell. Each action's `POST` may read the host
//! and the action's target cell. A `{ ... }` post installs a nested rule on
//! the target cell, where `self` then denotes that cell.

mod eval;
mod parse;

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::crm::{CellId, Kind, LocalKey, Name, Operation, ResourceAddress, Snapshot};
use crate::value::Value;

pub(crate) use eval::call as call_builtin;
pub use eval::{evaluate_pre, fire_agent, ActionError, EvalContext, EvalError, Fired, PrevValues};
pub use parse::parse_rule;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CellRef {
    Host,
    Cell(CellId),
}

/// A resource reference as written in a rule.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Ref {
    pub cell: CellRef,
    pub kind: Kind,
    pub name: Name,
}

impl Ref {
    pub fn host(kind: Kind, name: Name) -> Ref {
        Ref {
            cell: CellRef::Host,
            kind,
            name,
        }
    }

    pub fn resolve(&self, host: &CellId) -> ResourceAddress {
        let cell = match &self.cell {
            CellRef::Host => host.clone(),
            CellRef::Cell(c) => c.clone(),
        };
        ResourceAddress::new(cell, self.kind, self.name.clone())
    }

    pub fn key(&self) -> LocalKey {
        (self.kind, self.name.clone())
    }

    fn is_host(&self) -> bool {
        self.cell == CellRef::Host
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    pub fn is_arith(self) -> bool {
        matches!(
            self,
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem
        )
    }
}

/// Fixed numeric helpers. Rules cannot define functions of their own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Builtin {
    Abs,
    Min,
    Max,
    /// 1-based index of the first maximal argument.
    Argmax,
    /// Largest argument minus the second largest.
    Gap,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::Abs => "abs",
            Builtin::Min => "min",
            Builtin::Max => "max",
            Builtin::Argmax => "argmax",
            Builtin::Gap => "gap",
        }
    }

    fn from_name(s: &str) -> Option<Builtin> {
        Some(match s {
            "abs" => Builtin::Abs,
            "min" => Builtin::Min,
            "max" => Builtin::Max,
            "argmax" => Builtin::Argmax,
            "gap" => Builtin::Gap,
            _ => return None,
        })
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Builtin::Abs => n == 1,
            Builtin::Min | Builtin::Max | Builtin::Argmax => n >= 1,
            Builtin::Gap => n >= 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Expr {
    Lit(Value),
    Ref(Ref),
    /// Value of the reference before the mutation that woke the rule.
    Prev(Ref),
    Exists(Ref),
    ExistsPrev(Ref),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Builtin, Vec<Expr>),
}

impl Expr {
    /// Visits every reference, with a flag telling whether it sits under `prev`.
    pub fn visit_refs<'a>(&'a self, f: &mut impl FnMut(&'a Ref, bool)) {
        match self {
            Expr::Lit(_) => {}
            Expr::Ref(r) | Expr::Exists(r) => f(r, false),
            Expr::Prev(r) | Expr::ExistsPrev(r) => f(r, true),
            Expr::Unary(_, e) => e.visit_refs(f),
            Expr::Binary(_, a, b) => {
                a.visit_refs(f);
                b.visit_refs(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit_refs(f)),
        }
    }

    pub fn uses_prev(&self) -> bool {
        let mut found = false;
        self.visit_refs(&mut |_, prev| found |= prev);
        found
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Post {
    Expr(Expr),
    Rule(Arc<AgentRule>),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Action {
    pub operation: Operation,
    pub target: Ref,
    pub post: Option<Post>,
}

/// An agent: activation predicate `pre` over the host cell, and one
/// interaction per action when it holds.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct AgentRule {
    /// Explicit subscriptions, in addition to the addresses read by `pre`.
    pub on: Vec<Ref>,
    pub pre: Expr,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("type error: {0}")]
    Type(String),
    #[error("scope error: {0}")]
    Scope(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ty {
    Bool,
    Num,
    Text,
    Unknown,
}

impl Ty {
    fn of(v: &Value) -> Ty {
        match v {
            Value::Bool(_) => Ty::Bool,
            Value::Int(_) | Value::Real(_) => Ty::Num,
            Value::Text(_) => Ty::Text,
        }
    }

    fn admits(self, want: Ty) -> bool {
        self == want || self == Ty::Unknown
    }
}

fn infer(e: &Expr, env: &dyn Fn(&Ref) -> Option<Ty>) -> Result<Ty, RuleError> {
    let value_ref = |r: &Ref| -> Result<Ty, RuleError> {
        if r.kind == Kind::A {
            return Err(RuleError::Type(format!(
                "agent resource {}/{} used as a value",
                r.kind, r.name
            )));
        }
        Ok(env(r).unwrap_or(Ty::Unknown))
    };
    Ok(match e {
        Expr::Lit(v) => Ty::of(v),
        Expr::Ref(r) | Expr::Prev(r) => value_ref(r)?,
        Expr::Exists(_) | Expr::ExistsPrev(_) => Ty::Bool,
        Expr::Unary(UnOp::Neg, a) => {
            if !infer(a, env)?.admits(Ty::Num) {
                return Err(RuleError::Type("negation needs a number".into()));
            }
            Ty::Num
        }
        Expr::Unary(UnOp::Not, a) => {
            if !infer(a, env)?.admits(Ty::Bool) {
                return Err(RuleError::Type("`not` needs a boolean".into()));
            }
            Ty::Bool
        }
        Expr::Binary(op, a, b) => {
            let (ta, tb) = (infer(a, env)?, infer(b, env)?);
            match op {
                op if op.is_arith() => {
                    if !(ta.admits(Ty::Num) && tb.admits(Ty::Num)) {
                        return Err(RuleError::Type(format!("`{}` needs numbers", op.symbol())));
                    }
                    Ty::Num
                }
                BinOp::And | BinOp::Or => {
                    if !(ta.admits(Ty::Bool) && tb.admits(Ty::Bool)) {
                        return Err(RuleError::Type(format!("`{}` needs booleans", op.symbol())));
                    }
                    Ty::Bool
                }
                _ => {
                    if ta != Ty::Unknown && tb != Ty::Unknown && ta != tb {
                        return Err(RuleError::Type(format!(
                            "`{}` compares {:?} with {:?}",
                            op.symbol(),
                            ta,
                            tb
                        )));
                    }
                    Ty::Bool
                }
            }
        }
        Expr::Call(f, args) => {
            if !f.arity_ok(args.len()) {
                return Err(RuleError::Type(format!(
                    "wrong number of arguments to {}",
                    f.name()
                )));
            }
            for a in args {
                if !infer(a, env)?.admits(Ty::Num) {
                    return Err(RuleError::Type(format!("{} needs numbers", f.name())));
                }
            }
            Ty::Num
        }
    })
}

impl AgentRule {
    /// Host-cell keys whose mutation wakes this rule: explicit subscriptions
    /// plus everything `pre` reads.
    pub fn wake_keys(&self) -> BTreeSet<LocalKey> {
        let mut keys: BTreeSet<LocalKey> = self.on.iter().map(Ref::key).collect();
        self.pre.visit_refs(&mut |r, _| {
            keys.insert(r.key());
        });
        keys
    }

    /// Structural checks that need no knowledge of resource values.
    pub(crate) fn validate(&self) -> Result<(), RuleError> {
        self.check_scopes()?;
        self.check_types(&|_| None)
    }

    fn check_scopes(&self) -> Result<(), RuleError> {
        if self.actions.is_empty() {
            return Err(RuleError::Scope("a rule needs at least one action".into()));
        }
        if let Some(r) = self.on.iter().find(|r| !r.is_host()) {
            return Err(RuleError::Scope(format!(
                "ON may only subscribe to host resources, found {}",
                RefDisplay(r)
            )));
        }
        let mut bad = None;
        self.pre.visit_refs(&mut |r, _| {
            if !r.is_host() && bad.is_none() {
                bad = Some(r.clone());
            }
        });
        if let Some(r) = bad {
            return Err(RuleError::Scope(format!(
                "PRE may only read the host cell, found {}",
                RefDisplay(&r)
            )));
        }
        for action in &self.actions {
            match (&action.operation, &action.post, action.target.kind) {
                (Operation::Delete, Some(_), _) => {
                    return Err(RuleError::Type("DELETE takes no payload".into()))
                }
                (Operation::Create | Operation::Update, None, _) => {
                    return Err(RuleError::Type("CREATE/UPDATE need a payload".into()))
                }
                (_, Some(Post::Rule(_)), k) if k != Kind::A => {
                    return Err(RuleError::Type(
                        "a nested rule can only be written to an /A/ resource".into(),
                    ))
                }
                (_, Some(Post::Expr(_)), Kind::A) => {
                    return Err(RuleError::Type(
                        "an /A/ resource takes a nested rule payload".into(),
                    ))
                }
                _ => {}
            }
            match &action.post {
                Some(Post::Expr(e)) => {
                    let mut bad = None;
                    e.visit_refs(&mut |r, _| {
                        let ok = match &r.cell {
                            CellRef::Host => true,
                            CellRef::Cell(c) => action.target.cell == CellRef::Cell(c.clone()),
                        };
                        if !ok && bad.is_none() {
                            bad = Some(r.clone());
                        }
                    });
                    if let Some(r) = bad {
                        return Err(RuleError::Scope(format!(
                            "POST may read only the host and target cells, found {}",
                            RefDisplay(&r)
                        )));
                    }
                }
                Some(Post::Rule(nested)) => nested.check_scopes()?,
                None => {}
            }
        }
        Ok(())
    }

    fn check_types(&self, env: &dyn Fn(&Ref) -> Option<Ty>) -> Result<(), RuleError> {
        if !infer(&self.pre, env)?.admits(Ty::Bool) {
            return Err(RuleError::Type("PRE must be boolean".into()));
        }
        for action in &self.actions {
            match &action.post {
                Some(Post::Expr(e)) => {
                    infer(e, env)?;
                }
                Some(Post::Rule(nested)) => nested.check_types(&|_| None)?,
                None => {}
            }
        }
        Ok(())
    }

    /// Type-checks against the current values of the host cell.
    pub fn typecheck(&self, host: &Snapshot) -> Result<(), RuleError> {
        let env = |r: &Ref| -> Option<Ty> {
            match &r.cell {
                CellRef::Host => {}
                CellRef::Cell(c) if c == host.cell() => {}
                CellRef::Cell(_) => return None,
            }
            host.get(r.kind, &r.name)
                .and_then(|p| p.as_value())
                .map(Ty::of)
        };
        self.check_scopes()?;
        self.check_types(&env)
    }
}

struct RefDisplay<'a>(&'a Ref);

impl fmt::Display for RefDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0.cell {
            CellRef::Host => write!(f, "{}/{}", self.0.kind, self.0.name),
            CellRef::Cell(c) => write!(f, "{}/{}/{}", c, self.0.kind, self.0.name),
        }
    }
}

impl fmt::Display for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        RefDisplay(self).fmt(f)
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized, so that parsing the output yields the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Ref(r) => write!(f, "{r}"),
            Expr::Prev(r) => write!(f, "prev({r})"),
            Expr::Exists(r) => write!(f, "exists({r})"),
            Expr::ExistsPrev(r) => write!(f, "exists(prev({r}))"),
            Expr::Unary(UnOp::Neg, e) => write!(f, "-({e})"),
            Expr::Unary(UnOp::Not, e) => write!(f, "not ({e})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
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

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verb = match self.operation {
            Operation::Create => "CREATE",
            Operation::Update => "UPDATE",
            Operation::Delete => "DELETE",
        };
        match &self.target.cell {
            CellRef::Host => write!(f, "{verb} self/{}/{}", self.target.kind, self.target.name)?,
            CellRef::Cell(_) => write!(f, "{verb} {}", self.target)?,
        }
        match &self.post {
            Some(Post::Expr(e)) => write!(f, " = {e}"),
            Some(Post::Rule(r)) => write!(f, " = {{ {r} }}"),
            None => Ok(()),
        }
    }
}

impl fmt::Display for AgentRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.on.is_empty() {
            f.write_str("ON ")?;
            for (i, r) in self.on.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{r}")?;
            }
            f.write_str(" ")?;
        }
        write!(f, "IF {} THEN ", self.pre)?;
        for (i, a) in self.actions.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}
