//! Metabolic computation flows: agent rules woken by mutation events, with
//! their interactions travelling over the simulated network.
//!
//! The runtime proceeds in batches. A batch pops every pending interaction
//! due at the current tick, applies them, then evaluates each live rule woken
//! by those mutations against the post-batch snapshots, in ascending rule
//! address order. Interactions for the host cell are due in the next batch
//! at the same tick; remote ones are routed through [`Network`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::Serialize;
use thiserror::Error;

use crate::crm::{
    Cell, CellId, CrmError, Interaction, Kind, LocalKey, MutationEvent, Operation, Payload,
    ResourceAddress, Snapshot, Writer,
};
use crate::netsim::{EventQueue, MessageId, NetError, Network, SendOutcome, Topology};
use crate::rule::{evaluate_pre, fire_agent, AgentRule, EvalContext, PrevValues};
use crate::Tick;

pub const DEFAULT_TTL: u32 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("cell {0} is not a node of the topology")]
    UnplacedCell(CellId),
    #[error("unknown cell {0}")]
    UnknownCell(CellId),
    #[error("ttl must be at least 1")]
    ZeroTtl,
    #[error("trigger rejected: {0}")]
    Trigger(CrmError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// One agent firing within a flow.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlowStep {
    pub rule: ResourceAddress,
    pub fired_at: Tick,
    /// 1-based round of the flow in which the rule fired.
    pub round: u32,
    pub interactions: Vec<Interaction>,
    /// Actions whose payload failed to evaluate, as `target: error`.
    pub errors: Vec<String>,
}

/// Something in a flow that did not go through: a failed PRE, a rejected
/// mutation, or a lost message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlowFailure {
    pub time: Tick,
    pub rule: Option<ResourceAddress>,
    pub address: Option<ResourceAddress>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlowTrace {
    pub id: usize,
    pub trigger: MutationEvent,
    pub steps: Vec<FlowStep>,
    pub failures: Vec<FlowFailure>,
    pub rounds: u32,
    /// No interaction of this flow is pending and ttl was not exhausted.
    pub terminated: bool,
    pub ttl_exhausted: bool,
}

#[derive(Clone, Debug)]
struct FlowState {
    trace: FlowTrace,
    ttl: u32,
    pending: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Origin {
    /// Driver or supervisor write; starts a new flow when applied.
    Injection {
        id: u64,
        ttl: u32,
    },
    Flow(usize),
}

#[derive(Clone, Debug)]
struct Pending {
    origin: Origin,
    interaction: Interaction,
    writer: Writer,
    /// Create when absent, update otherwise (driver samples).
    upsert: bool,
    msg: Option<MessageId>,
    sender: Option<Snapshot>,
}

/// All cells of a system plus the network that connects them.
#[derive(Clone, Debug)]
pub struct World {
    initial: BTreeMap<CellId, Cell>,
    cells: BTreeMap<CellId, Cell>,
    node_of: BTreeMap<CellId, usize>,
    net: Network,
    queue: EventQueue<Pending>,
    switches: BTreeMap<Tick, Vec<(Topology, bool)>>,
    /// Per cell, the last known snapshots of the other cells.
    caches: BTreeMap<CellId, BTreeMap<CellId, Snapshot>>,
    /// Wake keys per rule, reused while the rule handle is unchanged.
    wake_cache: BTreeMap<ResourceAddress, (Arc<AgentRule>, Arc<BTreeSet<LocalKey>>)>,
    events: Vec<MutationEvent>,
    flows: Vec<FlowState>,
    injected: BTreeMap<u64, usize>,
    rejected: BTreeMap<u64, CrmError>,
    next_injection: u64,
    notes: Vec<String>,
    now: Tick,
    ttl: u32,
}

impl World {
    /// Every cell must be a node of the network's topology. Each cell starts
    /// with the initial snapshots of all others in its cache.
    pub fn new(cells: impl IntoIterator<Item = Cell>, net: Network) -> Result<World, EngineError> {
        let cells: BTreeMap<CellId, Cell> =
            cells.into_iter().map(|c| (c.id().clone(), c)).collect();
        let mut node_of = BTreeMap::new();
        for id in cells.keys() {
            let node = net
                .topology()
                .index_of(id)
                .ok_or_else(|| EngineError::UnplacedCell(id.clone()))?;
            node_of.insert(id.clone(), node);
        }
        let snaps: BTreeMap<CellId, Snapshot> = cells
            .iter()
            .map(|(id, c)| (id.clone(), c.snapshot()))
            .collect();
        let caches = cells
            .keys()
            .map(|id| {
                let others = snaps
                    .iter()
                    .filter(|(o, _)| *o != id)
                    .map(|(o, s)| (o.clone(), s.clone()))
                    .collect();
                (id.clone(), others)
            })
            .collect();
        Ok(World {
            initial: cells.clone(),
            cells,
            node_of,
            net,
            queue: EventQueue::new(),
            switches: BTreeMap::new(),
            caches,
            wake_cache: BTreeMap::new(),
            events: Vec::new(),
            flows: Vec::new(),
            injected: BTreeMap::new(),
            rejected: BTreeMap::new(),
            next_injection: 0,
            notes: Vec::new(),
            now: 0,
            ttl: DEFAULT_TTL,
        })
    }

    pub fn set_ttl(&mut self, ttl: u32) -> Result<(), EngineError> {
        if ttl == 0 {
            return Err(EngineError::ZeroTtl);
        }
        self.ttl = ttl;
        Ok(())
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn cell(&self, id: &CellId) -> Option<&Cell> {
        self.cells.get(id)
    }

    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.values()
    }

    pub fn initial_cells(&self) -> impl Iterator<Item = &Cell> {
        self.initial.values()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn events(&self) -> &[MutationEvent] {
        &self.events
    }

    /// Problems that belong to no flow (rejected injections, failed switches).
    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn flows(&self) -> Vec<FlowTrace> {
        self.flows.iter().map(Self::finish).collect()
    }

    pub fn flow(&self, id: usize) -> Option<FlowTrace> {
        self.flows.get(id).map(Self::finish)
    }

    fn finish(state: &FlowState) -> FlowTrace {
        let mut trace = state.trace.clone();
        trace.terminated = state.pending == 0 && !trace.ttl_exhausted;
        trace
    }

    pub fn read(&self, address: &ResourceAddress) -> Option<&Payload> {
        self.cells.get(&address.cell)?.read_resource(address).ok()
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    fn node(&self, cell: &CellId) -> Result<usize, EngineError> {
        self.node_of
            .get(cell)
            .copied()
            .ok_or_else(|| EngineError::UnknownCell(cell.clone()))
    }

    fn schedule_injection(
        &mut self,
        at: Tick,
        interaction: Interaction,
        upsert: bool,
    ) -> Result<u64, EngineError> {
        let node = self.node(&interaction.target.cell)?;
        let id = self.next_injection;
        self.next_injection += 1;
        self.queue.push(
            at.max(self.now),
            node,
            Pending {
                origin: Origin::Injection { id, ttl: self.ttl },
                interaction,
                writer: Writer::System,
                upsert,
                msg: None,
                sender: None,
            },
        );
        Ok(id)
    }

    /// Schedules a supervisor write; it starts a new flow when applied.
    pub fn inject(&mut self, at: Tick, interaction: Interaction) -> Result<(), EngineError> {
        self.schedule_injection(at, interaction, false).map(|_| ())
    }

    /// Schedules a driver sample on an `/S/` or `/L/` resource: created if
    /// absent, updated otherwise.
    pub fn drive(
        &mut self,
        at: Tick,
        address: ResourceAddress,
        value: crate::Value,
    ) -> Result<(), EngineError> {
        let interaction = Interaction {
            target: address,
            operation: Operation::Update,
            payload: Some(Payload::Value(value)),
        };
        self.schedule_injection(at, interaction, true).map(|_| ())
    }

    /// Schedules a topology switch. With `require_connected`, a disconnected
    /// replacement is rejected and noted.
    pub fn schedule_switch(&mut self, at: Tick, topology: Topology, require_connected: bool) {
        self.switches
            .entry(at.max(self.now))
            .or_default()
            .push((topology, require_connected));
    }

    /// Applies `trigger` now and runs until the resulting flow has nothing
    /// pending. Other scheduled work due in the meantime runs as well.
    pub fn run_flow(&mut self, trigger: Interaction, ttl: u32) -> Result<FlowTrace, EngineError> {
        if ttl == 0 {
            return Err(EngineError::ZeroTtl);
        }
        let saved = self.ttl;
        self.ttl = ttl;
        let scheduled = self.schedule_injection(self.now, trigger, false);
        self.ttl = saved;
        let id = scheduled?;
        while !self.injected.contains_key(&id) {
            if !self.step() {
                break;
            }
        }
        let Some(&flow) = self.injected.get(&id) else {
            let e = self
                .rejected
                .remove(&id)
                .expect("a scheduled injection is either applied or rejected");
            return Err(EngineError::Trigger(e));
        };
        while self.flows[flow].pending > 0 {
            if !self.step() {
                break;
            }
        }
        Ok(Self::finish(&self.flows[flow]))
    }

    /// Runs batches until the queue is empty or the next batch lies beyond
    /// `limit`.
    pub fn run_until(&mut self, limit: Option<Tick>) {
        loop {
            match self.next_time() {
                Some(t) if limit.is_none_or(|l| t <= l) => {
                    self.step();
                }
                _ => break,
            }
        }
        if let Some(l) = limit {
            self.now = self.now.max(l);
        }
    }

    fn next_time(&self) -> Option<Tick> {
        let a = self.queue.peek_time();
        let b = self.switches.keys().next().copied();
        match (a, b) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn apply_switches(&mut self, t: Tick) {
        while let Some(entry) = self.switches.first_entry() {
            if *entry.key() > t {
                break;
            }
            let (at, list) = entry.remove_entry();
            for (topology, require_connected) in list {
                match self.net.switch_topology(topology, at, require_connected) {
                    Ok(dropped) => {
                        let dropped: BTreeSet<MessageId> = dropped.into_iter().collect();
                        let flows = &mut self.flows;
                        self.queue.retain(|p| {
                            let cut = p.msg.is_some_and(|m| dropped.contains(&m));
                            if cut {
                                if let Origin::Flow(f) = p.origin {
                                    flows[f].pending -= 1;
                                    flows[f].trace.failures.push(FlowFailure {
                                        time: at,
                                        rule: None,
                                        address: Some(p.interaction.target.clone()),
                                        message: "dropped by topology switch".into(),
                                    });
                                }
                            }
                            !cut
                        });
                    }
                    Err(e) => self.notes.push(format!("t={at}: switch rejected: {e}")),
                }
            }
        }
    }

    /// Processes one batch. Returns false when nothing is left to do.
    pub fn step(&mut self) -> bool {
        let Some(t) = self.next_time() else {
            return false;
        };
        self.now = t;
        self.apply_switches(t);

        let mut batch = Vec::new();
        while self.queue.peek_time() == Some(t) {
            batch.push(self.queue.pop().expect("peeked").2);
        }

        // Apply, remembering per flow the events of this batch.
        let mut applied: Vec<(usize, MutationEvent)> = Vec::new();
        for p in batch {
            if let Some(f) = p.origin_flow() {
                self.flows[f].pending -= 1;
            }
            if let (Some(sender), Some(cache)) =
                (&p.sender, self.caches.get_mut(&p.interaction.target.cell))
            {
                cache.insert(sender.cell().clone(), sender.clone());
            }
            let target = &p.interaction.target;
            let result = match self.cells.get_mut(&target.cell) {
                None => Err(CrmError::NotFound(target.clone())),
                Some(cell) => {
                    let op = if p.upsert && cell.get(target.kind, &target.name).is_none() {
                        Operation::Create
                    } else {
                        p.interaction.operation
                    };
                    cell.apply(op, target, p.interaction.payload.clone(), p.writer, t)
                }
            };
            match (result, p.origin) {
                (Ok(ev), Origin::Flow(f)) => {
                    self.events.push(ev.clone());
                    applied.push((f, ev));
                }
                (Ok(ev), Origin::Injection { id, ttl }) => {
                    let f = self.flows.len();
                    self.flows.push(FlowState {
                        trace: FlowTrace {
                            id: f,
                            trigger: ev.clone(),
                            steps: Vec::new(),
                            failures: Vec::new(),
                            rounds: 0,
                            terminated: false,
                            ttl_exhausted: false,
                        },
                        ttl,
                        pending: 0,
                    });
                    self.injected.insert(id, f);
                    self.events.push(ev.clone());
                    applied.push((f, ev));
                }
                (Err(e), Origin::Flow(f)) => self.flows[f].trace.failures.push(FlowFailure {
                    time: t,
                    rule: None,
                    address: Some(target.clone()),
                    message: e.to_string(),
                }),
                (Err(e), Origin::Injection { id, .. }) => {
                    self.notes.push(format!("t={t}: injection rejected: {e}"));
                    self.rejected.insert(id, e);
                }
            }
        }

        self.evaluate(t, &applied);
        true
    }

    fn evaluate(&mut self, t: Tick, applied: &[(usize, MutationEvent)]) {
        let mut prevs: BTreeMap<usize, PrevValues> = BTreeMap::new();
        let mut woken: BTreeSet<(ResourceAddress, usize)> = BTreeSet::new();
        let mut subscriptions: BTreeMap<CellId, Vec<(ResourceAddress, Arc<BTreeSet<LocalKey>>)>> =
            BTreeMap::new();
        for (f, ev) in applied {
            prevs
                .entry(*f)
                .or_default()
                .entry(ev.address.clone())
                .or_insert_with(|| ev.previous.clone());
            let Some(cell) = self.cells.get(&ev.address.cell) else {
                continue;
            };
            let key = ev.address.key();
            let cache = &mut self.wake_cache;
            let subs = subscriptions
                .entry(ev.address.cell.clone())
                .or_insert_with(|| {
                    cell.agent_handles()
                        .map(|(a, r)| {
                            let keys = match cache.get(a) {
                                Some((cached, keys)) if Arc::ptr_eq(cached, r) => keys.clone(),
                                _ => {
                                    let keys = Arc::new(r.wake_keys());
                                    cache.insert(a.clone(), (r.clone(), keys.clone()));
                                    keys
                                }
                            };
                            (a.clone(), keys)
                        })
                        .collect()
                });
            for (addr, keys) in subs.iter() {
                if keys.contains(&key) {
                    woken.insert((addr.clone(), *f));
                }
            }
        }

        let flows_woken: BTreeSet<usize> = woken.iter().map(|(_, f)| *f).collect();
        let mut live_flows = BTreeSet::new();
        for f in flows_woken {
            let st = &mut self.flows[f];
            if st.trace.ttl_exhausted {
                continue;
            }
            if st.trace.rounds >= st.ttl {
                st.trace.ttl_exhausted = true;
                continue;
            }
            st.trace.rounds += 1;
            live_flows.insert(f);
        }

        let snaps: BTreeMap<CellId, Snapshot> = self
            .cells
            .iter()
            .map(|(id, c)| (id.clone(), c.snapshot()))
            .collect();
        let empty_prev = PrevValues::new();
        let empty_cache = BTreeMap::new();

        for (rule_addr, f) in woken {
            if !live_flows.contains(&f) {
                continue;
            }
            let host = &snaps[&rule_addr.cell];
            let Some(Payload::Rule(rule)) = host.get(Kind::A, &rule_addr.name) else {
                continue;
            };
            let ctx = EvalContext {
                host,
                remote: self.caches.get(&rule_addr.cell).unwrap_or(&empty_cache),
                prev: prevs.get(&f).unwrap_or(&empty_prev),
            };
            match evaluate_pre(rule, &ctx) {
                Ok(true) => {}
                Ok(false) => continue,
                Err(e) => {
                    self.flows[f].trace.failures.push(FlowFailure {
                        time: t,
                        rule: Some(rule_addr.clone()),
                        address: None,
                        message: format!("PRE: {e}"),
                    });
                    continue;
                }
            }
            let fired = fire_agent(rule, &ctx);
            let round = self.flows[f].trace.rounds;
            for i in &fired.interactions {
                self.dispatch(t, f, &rule_addr, host, i.clone());
            }
            self.flows[f].trace.steps.push(FlowStep {
                rule: rule_addr.clone(),
                fired_at: t,
                round,
                interactions: fired.interactions,
                errors: fired
                    .errors
                    .iter()
                    .map(|e| format!("{}: {}", e.target, e.error))
                    .collect(),
            });
        }
    }

    fn dispatch(
        &mut self,
        t: Tick,
        f: usize,
        rule: &ResourceAddress,
        host: &Snapshot,
        interaction: Interaction,
    ) {
        let fail = |world: &mut World, message: String| {
            world.flows[f].trace.failures.push(FlowFailure {
                time: t,
                rule: Some(rule.clone()),
                address: Some(interaction.target.clone()),
                message,
            });
        };
        let src = self.node_of[&rule.cell];
        let Some(&dst) = self.node_of.get(&interaction.target.cell) else {
            let msg = format!("unknown cell {}", interaction.target.cell);
            return fail(self, msg);
        };
        let (at, msg, sender) = if src == dst {
            (t, None, None)
        } else {
            match self.net.send(src, dst, t) {
                Ok(SendOutcome::Delivered(d)) => (d.at, Some(d.id), Some(host.clone())),
                Ok(SendOutcome::Dropped { id }) => {
                    return fail(self, format!("message {id} lost"));
                }
                Err(e) => return fail(self, e.to_string()),
            }
        };
        self.flows[f].pending += 1;
        self.queue.push(
            at,
            dst,
            Pending {
                origin: Origin::Flow(f),
                interaction,
                writer: Writer::Agent,
                upsert: false,
                msg,
                sender,
            },
        );
    }
}

impl Pending {
    fn origin_flow(&self) -> Option<usize> {
        match self.origin {
            Origin::Flow(f) => Some(f),
            Origin::Injection { .. } => None,
        }
    }
}
