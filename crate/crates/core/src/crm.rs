//! Cellular resource middleware.
//!
//! A [`Cell`] hosts resources of three kinds: `/L/` local memory, `/S/`
//! system input/output interfaces bound to drivers, and `/A/` agent rules.
//! Every mutation goes through [`Cell::apply`], which emits exactly one
//! [`MutationEvent`]; replaying the event log rebuilds the cell bit-exactly.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rule::{parse_rule, AgentRule};
use crate::value::Value;
use crate::Tick;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    /// Local memory.
    L,
    /// System input/output.
    S,
    /// Agent rule.
    A,
}

impl Kind {
    pub fn from_letter(s: &str) -> Option<Kind> {
        match s {
            "L" => Some(Kind::L),
            "S" => Some(Kind::S),
            "A" => Some(Kind::A),
            _ => None,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::L => "L",
            Kind::S => "S",
            Kind::A => "A",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("invalid cell id `{0}`")]
    CellId(String),
    #[error("invalid resource name `{0}` (expected [a-z0-9_]+)")]
    Name(String),
    #[error("invalid resource kind `{0}`")]
    Kind(String),
    #[error("malformed address `{0}` (expected cell/K/name)")]
    Malformed(String),
}

/// Identifier of a cell (a node of the network).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CellId(String);

impl CellId {
    pub fn new(id: impl Into<String>) -> Result<CellId, AddressError> {
        let id = id.into();
        let valid = !id.is_empty()
            && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
            && !matches!(id.as_str(), "self" | "L" | "S" | "A");
        if valid {
            Ok(CellId(id))
        } else {
            Err(AddressError::CellId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for CellId {
    type Err = AddressError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CellId::new(s)
    }
}

impl TryFrom<String> for CellId {
    type Error = AddressError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        CellId::new(s)
    }
}

impl From<CellId> for String {
    fn from(c: CellId) -> String {
        c.0
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Resource name, `[a-z0-9_]+`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Name(String);

impl Name {
    pub fn new(name: impl Into<String>) -> Result<Name, AddressError> {
        let name = name.into();
        if !name.is_empty()
            && name
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        {
            Ok(Name(name))
        } else {
            Err(AddressError::Name(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for Name {
    type Err = AddressError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Name::new(s)
    }
}

impl TryFrom<String> for Name {
    type Error = AddressError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Name::new(s)
    }
}

impl From<Name> for String {
    fn from(n: Name) -> String {
        n.0
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `cell/K/name`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ResourceAddress {
    pub cell: CellId,
    pub kind: Kind,
    pub name: Name,
}

impl ResourceAddress {
    pub fn new(cell: CellId, kind: Kind, name: Name) -> ResourceAddress {
        ResourceAddress { cell, kind, name }
    }

    /// Convenience constructor that panics on malformed parts; meant for
    /// fixtures and tests.
    pub fn parse(s: &str) -> ResourceAddress {
        s.parse().expect("valid resource address")
    }

    pub fn key(&self) -> LocalKey {
        (self.kind, self.name.clone())
    }
}

impl FromStr for ResourceAddress {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('/');
        let (Some(cell), Some(kind), Some(name), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(AddressError::Malformed(s.to_string()));
        };
        Ok(ResourceAddress {
            cell: CellId::new(cell)?,
            kind: Kind::from_letter(kind).ok_or_else(|| AddressError::Kind(kind.to_string()))?,
            name: Name::new(name)?,
        })
    }
}

impl TryFrom<String> for ResourceAddress {
    type Error = AddressError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ResourceAddress> for String {
    fn from(a: ResourceAddress) -> String {
        a.to_string()
    }
}

impl fmt::Display for ResourceAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.cell, self.kind, self.name)
    }
}

/// Cell-local part of an address.
pub type LocalKey = (Kind, Name);

/// Interaction operation of an agent or driver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Create,
    Update,
    Delete,
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operation::Create => "create",
            Operation::Update => "update",
            Operation::Delete => "delete",
        })
    }
}

/// Direction of an `/S/` resource.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoRole {
    /// Sensor: written by its driver only.
    Input,
    /// Actuator: agents may update it.
    Output,
}

/// Who performs a write. Agents are subject to the `/S/` access rules;
/// drivers and the supervisor are not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Writer {
    Agent,
    System,
}

/// Resource payload: a scalar for `/L/` and `/S/`, a rule for `/A/`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Payload {
    Value(Value),
    Rule(Arc<AgentRule>),
}

impl Payload {
    pub fn as_value(&self) -> Option<&Value> {
        match self {
            Payload::Value(v) => Some(v),
            Payload::Rule(_) => None,
        }
    }

    pub fn as_rule(&self) -> Option<&AgentRule> {
        match self {
            Payload::Rule(r) => Some(r),
            Payload::Value(_) => None,
        }
    }

    /// Rules go to `/A/`, values to `/L/` and `/S/`.
    pub fn fits(&self, kind: Kind) -> bool {
        matches!(
            (self, kind),
            (Payload::Rule(_), Kind::A) | (Payload::Value(_), Kind::L | Kind::S)
        )
    }
}

impl From<Value> for Payload {
    fn from(v: Value) -> Self {
        Payload::Value(v)
    }
}

impl From<AgentRule> for Payload {
    fn from(r: AgentRule) -> Self {
        Payload::Rule(Arc::new(r))
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Value(v) => write!(f, "{v}"),
            Payload::Rule(r) => write!(f, "{{ {r} }}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PayloadRepr {
    Value(Value),
    Rule(String),
}

impl Serialize for Payload {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Payload::Value(v) => PayloadRepr::Value(v.clone()).serialize(s),
            Payload::Rule(r) => PayloadRepr::Rule(r.to_string()).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match PayloadRepr::deserialize(d)? {
            PayloadRepr::Value(v) => Ok(Payload::Value(v)),
            PayloadRepr::Rule(src) => parse_rule(&src)
                .map(Payload::from)
                .map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Resource {
    pub address: ResourceAddress,
    pub payload: Payload,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrmError {
    #[error("{0} already exists")]
    AddressConflict(ResourceAddress),
    #[error("{0} not found")]
    NotFound(ResourceAddress),
    #[error("payload kind does not match {0}")]
    KindMismatch(ResourceAddress),
    #[error("{address} does not belong to cell {cell}")]
    ForeignAddress {
        address: ResourceAddress,
        cell: CellId,
    },
    #[error("agents may not perform {operation} on {address}")]
    ReadOnly {
        address: ResourceAddress,
        operation: Operation,
    },
    #[error("{0} needs a payload")]
    MissingPayload(Operation),
    #[error("delete carries no payload")]
    UnexpectedPayload,
}

/// One applied mutation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationEvent {
    pub time: Tick,
    pub address: ResourceAddress,
    pub operation: Operation,
    /// Present for create/update, absent for delete.
    pub value: Option<Payload>,
    /// Payload before the mutation, if the resource existed.
    pub previous: Option<Payload>,
    pub version: u64,
}

/// An interaction emitted by an agent (or a supervisor) towards a resource.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub target: ResourceAddress,
    pub operation: Operation,
    pub payload: Option<Payload>,
}

/// A cell: the resources of one node (its internal state `X_n`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    id: CellId,
    resources: BTreeMap<LocalKey, Resource>,
    last_version: BTreeMap<LocalKey, u64>,
    io: BTreeMap<Name, IoRole>,
}

impl Cell {
    pub fn new(id: CellId) -> Cell {
        Cell {
            id,
            resources: BTreeMap::new(),
            last_version: BTreeMap::new(),
            io: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &CellId {
        &self.id
    }

    /// Declares the direction of an `/S/` resource (driver binding).
    pub fn bind_io(&mut self, name: Name, role: IoRole) {
        self.io.insert(name, role);
    }

    pub fn io_role(&self, name: &Name) -> Option<IoRole> {
        self.io.get(name).copied()
    }

    pub fn io_bindings(&self) -> impl Iterator<Item = (&Name, IoRole)> {
        self.io.iter().map(|(n, r)| (n, *r))
    }

    pub fn address(&self, kind: Kind, name: Name) -> ResourceAddress {
        ResourceAddress::new(self.id.clone(), kind, name)
    }

    /// Applies one interaction operation and returns its event.
    pub fn apply(
        &mut self,
        operation: Operation,
        address: &ResourceAddress,
        payload: Option<Payload>,
        writer: Writer,
        time: Tick,
    ) -> Result<MutationEvent, CrmError> {
        if address.cell != self.id {
            return Err(CrmError::ForeignAddress {
                address: address.clone(),
                cell: self.id.clone(),
            });
        }
        match (operation, &payload) {
            (Operation::Delete, Some(_)) => return Err(CrmError::UnexpectedPayload),
            (Operation::Create | Operation::Update, None) => {
                return Err(CrmError::MissingPayload(operation))
            }
            (_, Some(p)) if !p.fits(address.kind) => {
                return Err(CrmError::KindMismatch(address.clone()))
            }
            _ => {}
        }
        if writer == Writer::Agent && address.kind == Kind::S {
            let allowed = operation == Operation::Update
                && self.io_role(&address.name) == Some(IoRole::Output);
            if !allowed {
                return Err(CrmError::ReadOnly {
                    address: address.clone(),
                    operation,
                });
            }
        }

        let key = address.key();
        let exists = self.resources.contains_key(&key);
        match operation {
            Operation::Create if exists => return Err(CrmError::AddressConflict(address.clone())),
            Operation::Update | Operation::Delete if !exists => {
                return Err(CrmError::NotFound(address.clone()))
            }
            _ => {}
        }

        let version = self.last_version.get(&key).copied().unwrap_or(0) + 1;
        self.last_version.insert(key.clone(), version);
        let previous = match operation {
            Operation::Delete => self.resources.remove(&key).map(|r| r.payload),
            _ => {
                let new = Resource {
                    address: address.clone(),
                    payload: payload.clone().expect("checked above"),
                    version,
                };
                self.resources.insert(key, new).map(|r| r.payload)
            }
        };
        Ok(MutationEvent {
            time,
            address: address.clone(),
            operation,
            value: payload,
            previous,
            version,
        })
    }

    pub fn read_resource(&self, address: &ResourceAddress) -> Result<&Payload, CrmError> {
        if address.cell != self.id {
            return Err(CrmError::ForeignAddress {
                address: address.clone(),
                cell: self.id.clone(),
            });
        }
        self.resources
            .get(&address.key())
            .map(|r| &r.payload)
            .ok_or_else(|| CrmError::NotFound(address.clone()))
    }

    pub fn get(&self, kind: Kind, name: &Name) -> Option<&Resource> {
        self.resources.get(&(kind, name.clone()))
    }

    pub fn resources(&self) -> impl Iterator<Item = &Resource> {
        self.resources.values()
    }

    /// Live agent rules in ascending name order.
    pub fn agents(&self) -> impl Iterator<Item = (&ResourceAddress, &AgentRule)> {
        self.resources
            .values()
            .filter_map(|r| r.payload.as_rule().map(|rule| (&r.address, rule)))
    }

    /// Agents with their shared rule handles.
    pub fn agent_handles(&self) -> impl Iterator<Item = (&ResourceAddress, &Arc<AgentRule>)> {
        self.resources.values().filter_map(|r| match &r.payload {
            Payload::Rule(rule) => Some((&r.address, rule)),
            Payload::Value(_) => None,
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(Arc::new(SnapshotInner {
            cell: self.id.clone(),
            entries: self
                .resources
                .iter()
                .map(|(k, r)| (k.clone(), (r.payload.clone(), r.version)))
                .collect(),
        }))
    }

    /// Rebuilds a cell from its initial state and an event log.
    pub fn replay<'a>(
        mut initial: Cell,
        events: impl IntoIterator<Item = &'a MutationEvent>,
    ) -> Result<Cell, CrmError> {
        for ev in events {
            if ev.address.cell != initial.id {
                continue;
            }
            let key = ev.address.key();
            initial.last_version.insert(key.clone(), ev.version);
            match ev.operation {
                Operation::Delete => {
                    initial
                        .resources
                        .remove(&key)
                        .ok_or_else(|| CrmError::NotFound(ev.address.clone()))?;
                }
                Operation::Create | Operation::Update => {
                    let payload = ev
                        .value
                        .clone()
                        .ok_or(CrmError::MissingPayload(ev.operation))?;
                    initial.resources.insert(
                        key,
                        Resource {
                            address: ev.address.clone(),
                            payload,
                            version: ev.version,
                        },
                    );
                }
            }
        }
        Ok(initial)
    }
}

#[derive(Debug, PartialEq, Eq)]
struct SnapshotInner {
    cell: CellId,
    entries: BTreeMap<LocalKey, (Payload, u64)>,
}

/// Immutable view of a cell's resources at one instant. Cheap to clone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot(Arc<SnapshotInner>);

impl Snapshot {
    pub fn empty(cell: CellId) -> Snapshot {
        Snapshot(Arc::new(SnapshotInner {
            cell,
            entries: BTreeMap::new(),
        }))
    }

    pub fn cell(&self) -> &CellId {
        &self.0.cell
    }

    pub fn get(&self, kind: Kind, name: &Name) -> Option<&Payload> {
        self.0.entries.get(&(kind, name.clone())).map(|(p, _)| p)
    }

    pub fn version(&self, kind: Kind, name: &Name) -> Option<u64> {
        self.0.entries.get(&(kind, name.clone())).map(|(_, v)| *v)
    }

    pub fn len(&self) -> usize {
        self.0.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ResourceAddress, &Payload)> + '_ {
        self.0.entries.iter().map(move |((k, n), (p, _))| {
            (ResourceAddress::new(self.0.cell.clone(), *k, n.clone()), p)
        })
    }
}
