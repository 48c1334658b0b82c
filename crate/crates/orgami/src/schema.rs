//! Validation of scenario documents against the published schema.
//!
//! The interpreter covers the keyword subset the schema uses: `type`,
//! `enum`, `properties`, `required`, `additionalProperties`, `items`,
//! `minItems`, `maxItems`, `minProperties`, `maxProperties`, `minimum`,
//! `maximum`, `exclusiveMinimum`, `minLength` and local `$ref`. Every
//! violation is collected, not just the first.

use std::fmt;
use std::sync::OnceLock;

use serde::Serialize;
use serde_json::{Map, Value};

pub const SCENARIO_SCHEMA: &str = include_str!("../schema/scenario.schema.json");

/// One schema violation at a JSON-pointer path.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Violation {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() {
            "/"
        } else {
            &self.path
        };
        write!(f, "{path}: {}", self.message)
    }
}

pub fn scenario_schema() -> &'static Value {
    static SCHEMA: OnceLock<Value> = OnceLock::new();
    SCHEMA.get_or_init(|| {
        serde_json::from_str(SCENARIO_SCHEMA).expect("bundled schema is valid JSON")
    })
}

/// All violations of `doc` against `schema`, in document order.
pub fn validate(schema: &Value, doc: &Value) -> Vec<Violation> {
    let mut out = Vec::new();
    Walker { root: schema }.check(schema, doc, "", &mut out);
    out
}

struct Walker<'a> {
    root: &'a Value,
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn has_type(v: &Value, ty: &str) -> bool {
    let actual = type_name(v);
    actual == ty || (ty == "number" && actual == "integer")
}

fn child(path: &str, key: &str) -> String {
    let escaped = key.replace('~', "~0").replace('/', "~1");
    format!("{path}/{escaped}")
}

impl<'a> Walker<'a> {
    fn resolve(&self, schema: &'a Value) -> &'a Value {
        let Some(r) = schema.get("$ref").and_then(Value::as_str) else {
            return schema;
        };
        let target = r
            .strip_prefix('#')
            .and_then(|p| self.root.pointer(p))
            .unwrap_or_else(|| panic!("unresolvable schema reference {r}"));
        self.resolve(target)
    }

    fn check(&self, schema: &'a Value, doc: &Value, path: &str, out: &mut Vec<Violation>) {
        let schema = self.resolve(schema);
        let Some(s) = schema.as_object() else {
            return;
        };
        if let Some(ty) = s.get("type") {
            let allowed: Vec<&str> = match ty {
                Value::String(t) => vec![t.as_str()],
                Value::Array(ts) => ts.iter().filter_map(Value::as_str).collect(),
                _ => Vec::new(),
            };
            if !allowed.iter().any(|t| has_type(doc, t)) {
                out.push(Violation::new(
                    path,
                    format!(
                        "expected {}, found {}",
                        allowed.join(" or "),
                        type_name(doc)
                    ),
                ));
                return;
            }
        }
        if let Some(Value::Array(options)) = s.get("enum") {
            if !options.contains(doc) {
                let names: Vec<String> = options.iter().map(Value::to_string).collect();
                out.push(Violation::new(
                    path,
                    format!("{doc} is not one of {}", names.join(", ")),
                ));
            }
        }
        match doc {
            Value::Object(map) => self.check_object(s, map, path, out),
            Value::Array(items) => self.check_array(s, items, path, out),
            Value::Number(n) => check_number(s, n.as_f64().unwrap_or(f64::NAN), path, out),
            Value::String(text) => {
                if let Some(min) = s.get("minLength").and_then(Value::as_u64) {
                    if (text.chars().count() as u64) < min {
                        out.push(Violation::new(
                            path,
                            format!("shorter than {min} characters"),
                        ));
                    }
                }
            }
            _ => {}
        }
    }

    fn check_object(
        &self,
        s: &'a Map<String, Value>,
        map: &Map<String, Value>,
        path: &str,
        out: &mut Vec<Violation>,
    ) {
        if let Some(Value::Array(required)) = s.get("required") {
            for key in required.iter().filter_map(Value::as_str) {
                if !map.contains_key(key) {
                    out.push(Violation::new(
                        path,
                        format!("missing required field `{key}`"),
                    ));
                }
            }
        }
        let bound = |k: &str| s.get(k).and_then(Value::as_u64);
        if let Some(min) = bound("minProperties") {
            if (map.len() as u64) < min {
                out.push(Violation::new(
                    path,
                    format!("needs at least {min} field(s)"),
                ));
            }
        }
        if let Some(max) = bound("maxProperties") {
            if map.len() as u64 > max {
                let keys: Vec<&str> = map.keys().map(String::as_str).collect();
                out.push(Violation::new(
                    path,
                    format!("at most {max} field(s) allowed, found {}", keys.join(", ")),
                ));
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (key, value) in map {
            let here = child(path, key);
            if let Some(sub) = props.and_then(|p| p.get(key)) {
                self.check(sub, value, &here, out);
                continue;
            }
            match s.get("additionalProperties") {
                Some(Value::Bool(false)) => {
                    out.push(Violation::new(path, format!("unknown field `{key}`")));
                }
                Some(extra @ Value::Object(_)) => self.check(extra, value, &here, out),
                _ => {}
            }
        }
    }

    fn check_array(
        &self,
        s: &'a Map<String, Value>,
        items: &[Value],
        path: &str,
        out: &mut Vec<Violation>,
    ) {
        if let Some(min) = s.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                out.push(Violation::new(
                    path,
                    format!("needs at least {min} item(s)"),
                ));
            }
        }
        if let Some(max) = s.get("maxItems").and_then(Value::as_u64) {
            if items.len() as u64 > max {
                out.push(Violation::new(
                    path,
                    format!("allows at most {max} item(s)"),
                ));
            }
        }
        if let Some(sub) = s.get("items") {
            for (i, item) in items.iter().enumerate() {
                self.check(sub, item, &child(path, &i.to_string()), out);
            }
        }
    }
}

fn check_number(s: &Map<String, Value>, x: f64, path: &str, out: &mut Vec<Violation>) {
    let get = |k: &str| s.get(k).and_then(Value::as_f64);
    if let Some(min) = get("minimum") {
        if x < min {
            out.push(Violation::new(
                path,
                format!("{x} is below the minimum {min}"),
            ));
        }
    }
    if let Some(max) = get("maximum") {
        if x > max {
            out.push(Violation::new(
                path,
                format!("{x} is above the maximum {max}"),
            ));
        }
    }
    if let Some(min) = get("exclusiveMinimum") {
        if x <= min {
            out.push(Violation::new(path, format!("{x} must exceed {min}")));
        }
    }
}
