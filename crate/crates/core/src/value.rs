//! Tagged scalar values stored in `/L/` and `/S/` resources.

use alloc::string::String;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A logical or numerical resource value.
///
/// Reals are always finite and `-0.0` is normalized to `0.0`, which makes
/// the structural order total.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawValue", into = "RawValue")]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
    #[error("non-finite real")]
    NonFinite,
    #[error("type mismatch: {0}")]
    Type(&'static str),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
}

impl TryFrom<RawValue> for Value {
    type Error = ValueError;

    fn try_from(raw: RawValue) -> Result<Self, Self::Error> {
        Ok(match raw {
            RawValue::Bool(b) => Value::Bool(b),
            RawValue::Int(i) => Value::Int(i),
            RawValue::Real(r) => Value::real(r)?,
            RawValue::Text(t) => Value::Text(t),
        })
    }
}

impl From<Value> for RawValue {
    fn from(v: Value) -> Self {
        match v {
            Value::Bool(b) => RawValue::Bool(b),
            Value::Int(i) => RawValue::Int(i),
            Value::Real(r) => RawValue::Real(r),
            Value::Text(t) => RawValue::Text(t),
        }
    }
}

impl Value {
    pub fn real(x: f64) -> Result<Value, ValueError> {
        if !x.is_finite() {
            return Err(ValueError::NonFinite);
        }
        Ok(Value::Real(if x == 0.0 { 0.0 } else { x }))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Real(_) => "real",
            Value::Text(_) => "text",
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Value::Int(_) | Value::Real(_))
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Bool(_) => 0,
            Value::Int(_) => 1,
            Value::Real(_) => 2,
            Value::Text(_) => 3,
        }
    }

    fn arith(
        &self,
        other: &Value,
        int_op: fn(i64, i64) -> Result<i64, ValueError>,
        real_op: fn(f64, f64) -> Result<f64, ValueError>,
    ) -> Result<Value, ValueError> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => int_op(*a, *b).map(Value::Int),
            (a, b) if a.is_numeric() && b.is_numeric() => {
                Value::real(real_op(a.as_f64().unwrap(), b.as_f64().unwrap())?)
            }
            _ => Err(ValueError::Type("arithmetic on non-numeric value")),
        }
    }

    pub fn add(&self, other: &Value) -> Result<Value, ValueError> {
        self.arith(
            other,
            |a, b| a.checked_add(b).ok_or(ValueError::Overflow),
            |a, b| Ok(a + b),
        )
    }

    pub fn sub(&self, other: &Value) -> Result<Value, ValueError> {
        self.arith(
            other,
            |a, b| a.checked_sub(b).ok_or(ValueError::Overflow),
            |a, b| Ok(a - b),
        )
    }

    pub fn mul(&self, other: &Value) -> Result<Value, ValueError> {
        self.arith(
            other,
            |a, b| a.checked_mul(b).ok_or(ValueError::Overflow),
            |a, b| Ok(a * b),
        )
    }

    /// Euclidean division on integers, true division on reals.
    pub fn div(&self, other: &Value) -> Result<Value, ValueError> {
        self.arith(
            other,
            |a, b| {
                if b == 0 {
                    Err(ValueError::DivisionByZero)
                } else {
                    a.checked_div_euclid(b).ok_or(ValueError::Overflow)
                }
            },
            |a, b| {
                if b == 0.0 {
                    Err(ValueError::DivisionByZero)
                } else {
                    Ok(a / b)
                }
            },
        )
    }

    /// Euclidean remainder: the result is never negative for a non-zero divisor.
    pub fn rem(&self, other: &Value) -> Result<Value, ValueError> {
        self.arith(
            other,
            |a, b| {
                if b == 0 {
                    Err(ValueError::DivisionByZero)
                } else {
                    a.checked_rem_euclid(b).ok_or(ValueError::Overflow)
                }
            },
            |a, b| {
                if b == 0.0 {
                    Err(ValueError::DivisionByZero)
                } else {
                    let r = a % b;
                    Ok(if r < 0.0 { r + b.abs() } else { r })
                }
            },
        )
    }

    pub fn neg(&self) -> Result<Value, ValueError> {
        match self {
            Value::Int(a) => a.checked_neg().map(Value::Int).ok_or(ValueError::Overflow),
            Value::Real(a) => Value::real(-a),
            _ => Err(ValueError::Type("negation of non-numeric value")),
        }
    }

    /// Comparison used by the rule language. Numbers compare across
    /// int/real; bools and texts only with their own kind.
    pub fn compare(&self, other: &Value) -> Result<Ordering, ValueError> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => Ok(a.cmp(b)),
            (a, b) if a.is_numeric() && b.is_numeric() => {
                let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
                x.partial_cmp(&y).ok_or(ValueError::NonFinite)
            }
            (Value::Text(a), Value::Text(b)) => Ok(a.cmp(b)),
            (Value::Bool(a), Value::Bool(b)) => Ok(a.cmp(b)),
            _ => Err(ValueError::Type("comparison between incompatible values")),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Real(a), Value::Real(b)) => a.total_cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl fmt::Display for Value {
    /// Literal syntax of the rule language: reals always carry a `.` or an
    /// exponent so they never read back as integers.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r:?}"),
            Value::Text(t) => {
                f.write_str("\"")?;
                for c in t.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}
