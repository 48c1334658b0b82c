use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{node_rng, Topology};
use crate::crm::CellId;
use crate::Tick;

/// Per-hop latency distribution, in ticks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delay {
    Fixed(Tick),
    /// Uniform over the inclusive range `[lo, hi]`.
    Uniform {
        lo: Tick,
        hi: Tick,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub delay: Delay,
    pub loss_prob: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            delay: Delay::Fixed(1),
            loss_prob: 0.0,
        }
    }
}

impl LinkModel {
    pub fn lossless(delay: Tick) -> LinkModel {
        LinkModel {
            delay: Delay::Fixed(delay),
            loss_prob: 0.0,
        }
    }

    fn validate(&self) -> Result<(), NetError> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(NetError::InvalidParams(format!(
                "loss_prob {} outside [0,1]",
                self.loss_prob
            )));
        }
        if let Delay::Uniform { lo, hi } = self.delay {
            if lo > hi {
                return Err(NetError::InvalidParams(format!(
                    "delay range [{lo},{hi}] is empty"
                )));
            }
        }
        Ok(())
    }
}

pub type MessageId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub id: MessageId,
    pub at: Tick,
    pub hops: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SendOutcome {
    Delivered(Delivery),
    Dropped { id: MessageId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("no route from {src} to {dst}")]
    Unreachable { src: CellId, dst: CellId },
    #[error("source and destination are both {0}")]
    SameNode(CellId),
    #[error("unknown node {0}")]
    UnknownNode(CellId),
    #[error("invalid network parameters: {0}")]
    InvalidParams(String),
}

/// One line of the message log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub id: MessageId,
    pub send_time: Tick,
    pub src: CellId,
    pub dst: CellId,
    pub hops: usize,
    /// `None` when the message was dropped.
    pub delivered: Option<Tick>,
}

#[derive(Clone, Debug)]
struct InFlight {
    id: MessageId,
    at: Tick,
    /// `(from, to, arrival)` per hop.
    hops: Vec<(usize, usize, Tick)>,
}

/// The simulated multi-hop network: routing, loss and delay.
#[derive(Clone, Debug)]
pub struct Network {
    topology: Topology,
    link: LinkModel,
    rngs: Vec<ChaCha8Rng>,
    dist: Vec<Vec<Option<u32>>>,
    in_flight: Vec<InFlight>,
    log: Vec<MessageRecord>,
}

impl Network {
    pub fn new(topology: Topology, link: LinkModel, seed: u64) -> Result<Network, NetError> {
        link.validate()?;
        let rngs = (0..topology.len()).map(|i| node_rng(seed, i)).collect();
        let mut net = Network {
            topology,
            link,
            rngs,
            dist: Vec::new(),
            in_flight: Vec::new(),
            log: Vec::new(),
        };
        net.recompute_routes();
        Ok(net)
    }

    fn recompute_routes(&mut self) {
        self.dist = (0..self.topology.len())
            .map(|d| self.topology.hop_distances(d))
            .collect();
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn log(&self) -> &[MessageRecord] {
        &self.log
    }

    pub fn node(&self, cell: &CellId) -> Result<usize, NetError> {
        self.topology
            .index_of(cell)
            .ok_or_else(|| NetError::UnknownNode(cell.clone()))
    }

    /// Next node from `u` towards `dst` on a shortest path, lowest id first.
    pub fn next_hop(&self, u: usize, dst: usize) -> Option<usize> {
        let d = self.dist[dst][u]?;
        if d == 0 {
            return None;
        }
        self.topology
            .neighbors(u)
            .find(|&v| self.dist[dst][v] == Some(d - 1))
    }

    /// Full route from `src` to `dst`, excluding `src`.
    pub fn route(&self, src: usize, dst: usize) -> Option<Vec<usize>> {
        self.dist[dst][src]?;
        let mut path = Vec::new();
        let mut u = src;
        while u != dst {
            u = self.next_hop(u, dst)?;
            path.push(u);
        }
        Some(path)
    }

    fn draw_delay(&mut self, node: usize) -> Tick {
        match self.link.delay {
            Delay::Fixed(d) => d,
            Delay::Uniform { lo, hi } => self.rngs[node].random_range(lo..=hi),
        }
    }

    /// Sends one message. Each hop draws loss, then delay, from the stream
    /// of the node it leaves.
    pub fn send(&mut self, src: usize, dst: usize, now: Tick) -> Result<SendOutcome, NetError> {
        let name = |i: usize| self.topology.nodes()[i].clone();
        if src == dst {
            return Err(NetError::SameNode(name(src)));
        }
        let path = self.route(src, dst).ok_or_else(|| NetError::Unreachable {
            src: name(src),
            dst: name(dst),
        })?;
        self.in_flight.retain(|m| m.at >= now);
        let id = self.log.len() as MessageId;
        let mut record = MessageRecord {
            id,
            send_time: now,
            src: name(src),
            dst: name(dst),
            hops: path.len(),
            delivered: None,
        };
        let mut t = now;
        let mut from = src;
        let mut hops = Vec::with_capacity(path.len());
        for &to in &path {
            let lost = self.rngs[from].random::<f64>() < self.link.loss_prob;
            if lost {
                self.log.push(record);
                return Ok(SendOutcome::Dropped { id });
            }
            t += self.draw_delay(from);
            hops.push((from, to, t));
            from = to;
        }
        record.delivered = Some(t);
        self.log.push(record);
        self.in_flight.push(InFlight { id, at: t, hops });
        Ok(SendOutcome::Delivered(Delivery {
            id,
            at: t,
            hops: path.len(),
        }))
    }

    /// Replaces the topology at time `at`. Messages still travelling a hop
    /// over a removed edge (arrival `>= at`) are dropped; their ids are
    /// returned so the scheduler can cancel their deliveries.
    pub fn switch_topology(
        &mut self,
        new: Topology,
        at: Tick,
        require_connected: bool,
    ) -> Result<Vec<MessageId>, NetError> {
        if new.nodes() != self.topology.nodes() {
            return Err(NetError::InvalidParams(
                "replacement topology must have the same nodes".into(),
            ));
        }
        if require_connected && !new.is_connected() {
            return Err(NetError::InvalidParams(
                "replacement topology is disconnected".into(),
            ));
        }
        let mut dropped = Vec::new();
        self.in_flight.retain(|m| {
            if m.at < at {
                return false;
            }
            let cut = m
                .hops
                .iter()
                .any(|&(u, v, arrive)| arrive >= at && !new.has_edge(u, v));
            if cut {
                dropped.push(m.id);
            }
            !cut
        });
        for &id in &dropped {
            self.log[id as usize].delivered = None;
        }
        self.topology = new;
        self.recompute_routes();
        Ok(dropped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{TopologyKind, TopologyParams};

    fn ring(n: usize) -> Topology {
        Topology::generate(TopologyKind::Ring, n, TopologyParams::default(), 0).unwrap()
    }

    fn star(n: usize) -> Topology {
        Topology::generate(TopologyKind::Star, n, TopologyParams::default(), 0).unwrap()
    }

    #[test]
    fn adjacent_fixed_delay() {
        let mut net = Network::new(ring(5), LinkModel::lossless(1), 0).unwrap();
        assert_eq!(
            net.send(0, 1, 7).unwrap(),
            SendOutcome::Delivered(Delivery {
                id: 0,
                at: 8,
                hops: 1
            })
        );
    }

    #[test]
    fn total_loss_drops() {
        let link = LinkModel {
            delay: Delay::Fixed(1),
            loss_prob: 1.0,
        };
        let mut net = Network::new(ring(5), link, 0).unwrap();
        assert!(matches!(
            net.send(0, 2, 0).unwrap(),
            SendOutcome::Dropped { .. }
        ));
        assert_eq!(net.log()[0].delivered, None);
    }

    #[test]
    fn ties_route_through_lowest_id() {
        let net = Network::new(ring(6), LinkModel::lossless(1), 0).unwrap();
        // 0 -> 3 can go 0-1-2-3 or 0-5-4-3.
        assert_eq!(net.route(0, 3).unwrap(), [1, 2, 3]);
    }

    #[test]
    fn unreachable_and_same_node() {
        let nodes = ring(4).nodes().to_vec();
        let t = Topology::custom(nodes, &[(0, 1), (2, 3)]).unwrap();
        let mut net = Network::new(t, LinkModel::lossless(1), 0).unwrap();
        assert!(matches!(
            net.send(0, 2, 0),
            Err(NetError::Unreachable { .. })
        ));
        assert!(matches!(net.send(1, 1, 0), Err(NetError::SameNode(_))));
    }

    #[test]
    fn seeded_loss_pattern_is_reproducible() {
        let link = LinkModel {
            delay: Delay::Uniform { lo: 1, hi: 3 },
            loss_prob: 0.5,
        };
        let pattern = || {
            let mut net = Network::new(ring(5), link, 42).unwrap();
            (0..100)
                .map(|i| net.send(0, 1, i).unwrap())
                .collect::<Vec<_>>()
        };
        let a = pattern();
        assert_eq!(a, pattern());
        let drops = a
            .iter()
            .filter(|o| matches!(o, SendOutcome::Dropped { .. }))
            .count();
        assert!((25..=75).contains(&drops), "drops = {drops}");
    }

    #[test]
    fn switch_drops_in_flight_on_removed_edges() {
        let mut net = Network::new(ring(5), LinkModel::lossless(1), 0).unwrap();
        // n1-n2 exists in the ring but not in the star centred on n0.
        let SendOutcome::Delivered(d) = net.send(1, 2, 9).unwrap() else {
            panic!()
        };
        assert_eq!(d.at, 10);
        let dropped = net.switch_topology(star(5), 10, true).unwrap();
        assert_eq!(dropped, [d.id]);
        assert_eq!(net.log()[0].delivered, None);
        assert_eq!(net.route(1, 2).unwrap(), [0, 2]);
    }

    #[test]
    fn switch_to_same_topology_changes_nothing() {
        let mut net = Network::new(ring(5), LinkModel::lossless(1), 0).unwrap();
        net.send(1, 2, 9).unwrap();
        assert!(net.switch_topology(ring(5), 10, true).unwrap().is_empty());
        assert_eq!(net.log()[0].delivered, Some(10));
    }

    #[test]
    fn rejects_disconnected_replacement_when_required() {
        let mut net = Network::new(ring(4), LinkModel::lossless(1), 0).unwrap();
        let split = Topology::custom(ring(4).nodes().to_vec(), &[(0, 1), (2, 3)]).unwrap();
        assert!(net.switch_topology(split.clone(), 0, true).is_err());
        assert!(net.switch_topology(split, 0, false).is_ok());
    }
}
