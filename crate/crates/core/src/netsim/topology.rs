use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crm::CellId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Star,
    Grid,
    SmallWorld,
    Custom,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Star => "star",
            TopologyKind::Grid => "grid",
            TopologyKind::SmallWorld => "small_world",
            TopologyKind::Custom => "custom",
        })
    }
}

/// Watts–Strogatz parameters; ignored by the other generators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyParams {
    /// Mean degree of the initial ring lattice (even, `< n`).
    pub k: usize,
    /// Rewiring probability.
    pub beta: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        TopologyParams { k: 4, beta: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("invalid topology parameters: {0}")]
    InvalidParams(String),
}

fn invalid(msg: impl Into<String>) -> TopologyError {
    TopologyError::InvalidParams(msg.into())
}

/// Simple undirected graph over named nodes. Node ids are indices into
/// `nodes`; the lower index is the lower id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    kind: TopologyKind,
    nodes: Vec<CellId>,
    adj: Vec<BTreeSet<usize>>,
}

const MAX_REWIRE_ATTEMPTS: usize = 100;

fn default_names(n: usize) -> Vec<CellId> {
    (0..n)
        .map(|i| CellId::new(format!("n{i}")).expect("generated ids are valid"))
        .collect()
}

impl Topology {
    fn empty(kind: TopologyKind, nodes: Vec<CellId>) -> Topology {
        let adj = vec![BTreeSet::new(); nodes.len()];
        Topology { kind, nodes, adj }
    }

    fn link(&mut self, u: usize, v: usize) {
        self.adj[u].insert(v);
        self.adj[v].insert(u);
    }

    fn unlink(&mut self, u: usize, v: usize) {
        self.adj[u].remove(&v);
        self.adj[v].remove(&u);
    }

    /// Generates a connected topology with nodes named `n0..n{n-1}`.
    pub fn generate(
        kind: TopologyKind,
        n: usize,
        params: TopologyParams,
        seed: u64,
    ) -> Result<Topology, TopologyError> {
        if n < 3 {
            return Err(invalid(format!("need at least 3 nodes, got {n}")));
        }
        let mut t = Topology::empty(kind, default_names(n));
        match kind {
            TopologyKind::Ring => (0..n).for_each(|i| t.link(i, (i + 1) % n)),
            TopologyKind::Star => (1..n).for_each(|i| t.link(0, i)),
            TopologyKind::Grid => {
                let cols = (1..=n).find(|c| c * c >= n).expect("n >= 1");
                for i in 0..n {
                    if (i + 1) % cols != 0 && i + 1 < n {
                        t.link(i, i + 1);
                    }
                    if i + cols < n {
                        t.link(i, i + cols);
                    }
                }
            }
            TopologyKind::SmallWorld => return Topology::watts_strogatz(n, params, seed),
            TopologyKind::Custom => {
                return Err(invalid("custom topologies are built from an edge list"))
            }
        }
        Ok(t)
    }

    fn watts_strogatz(n: usize, p: TopologyParams, seed: u64) -> Result<Topology, TopologyError> {
        if p.k == 0 || p.k % 2 != 0 || p.k >= n {
            return Err(invalid(format!(
                "k must be even with 0 < k < n, got k={}",
                p.k
            )));
        }
        if !(0.0..=1.0).contains(&p.beta) {
            return Err(invalid(format!("beta must lie in [0,1], got {}", p.beta)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_REWIRE_ATTEMPTS {
            let mut t = Topology::empty(TopologyKind::SmallWorld, default_names(n));
            for j in 1..=p.k / 2 {
                for u in 0..n {
                    t.link(u, (u + j) % n);
                }
            }
            if p.beta > 0.0 {
                for j in 1..=p.k / 2 {
                    for u in 0..n {
                        let v = (u + j) % n;
                        if !t.adj[u].contains(&v) || rng.random::<f64>() >= p.beta {
                            continue;
                        }
                        if t.adj[u].len() >= n - 1 {
                            continue;
                        }
                        let w = loop {
                            let w = rng.random_range(0..n);
                            if w != u && !t.adj[u].contains(&w) {
                                break w;
                            }
                        };
                        t.unlink(u, v);
                        t.link(u, w);
                    }
                }
            }
            if t.is_connected() {
                return Ok(t);
            }
        }
        Err(invalid(format!(
            "no connected rewiring found in {MAX_REWIRE_ATTEMPTS} attempts"
        )))
    }

    /// Builds a topology from explicit nodes and index pairs.
    pub fn custom(nodes: Vec<CellId>, edges: &[(usize, usize)]) -> Result<Topology, TopologyError> {
        let distinct: BTreeSet<&CellId> = nodes.iter().collect();
        if distinct.len() != nodes.len() {
            return Err(invalid("duplicate node names"));
        }
        let mut t = Topology::empty(TopologyKind::Custom, nodes);
        for &(u, v) in edges {
            if u >= t.len() || v >= t.len() {
                return Err(invalid(format!("edge ({u},{v}) out of range")));
            }
            if u == v {
                return Err(invalid(format!("self-loop on node {u}")));
            }
            if t.adj[u].contains(&v) {
                return Err(invalid(format!("duplicate edge ({u},{v})")));
            }
            t.link(u, v);
        }
        Ok(t)
    }

    /// Parses an edge list, one `u v` pair of node names per line. Nodes are
    /// numbered in order of first appearance; `#` starts a comment.
    pub fn from_edge_list(text: &str) -> Result<Topology, TopologyError> {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [a, b] = parts[..] else {
                return Err(invalid(format!("line {}: expected `u v`", lineno + 1)));
            };
            let mut id = |name: &str| -> Result<usize, TopologyError> {
                if let Some(&i) = index.get(name) {
                    return Ok(i);
                }
                let cell =
                    CellId::new(name).map_err(|e| invalid(format!("line {}: {e}", lineno + 1)))?;
                index.insert(String::from(name), nodes.len());
                nodes.push(cell);
                Ok(nodes.len() - 1)
            };
            let (u, v) = (id(a)?, id(b)?);
            edges.push((u, v));
        }
        Topology::custom(nodes, &edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (u, v) in self.edges() {
            out.push_str(&format!("{} {}\n", self.nodes[u], self.nodes[v]));
        }
        out
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[CellId] {
        &self.nodes
    }

    pub fn index_of(&self, cell: &CellId) -> Option<usize> {
        self.nodes.iter().position(|c| c == cell)
    }

    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[u].iter().copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj.get(u).is_some_and(|a| a.contains(&v))
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).max().unwrap_or(0)
    }

    /// Edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, a)| a.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Hop distance from `src` to every node; `None` when unreachable.
    pub fn hop_distances(&self, src: usize) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.len()];
        let mut queue = VecDeque::from([src]);
        dist[src] = Some(0);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("queued nodes have a distance");
            for v in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.hop_distances(0).iter().all(Option::is_some)
    }

    /// Mean local clustering coefficient; nodes of degree < 2 count as 0.
    pub fn clustering_coefficient(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let total: f64 = (0..self.len())
            .map(|u| {
                let nb: Vec<usize> = self.neighbors(u).collect();
                let d = nb.len();
                if d < 2 {
                    return 0.0;
                }
                let mut links = 0usize;
                for (i, &a) in nb.iter().enumerate() {
                    for &b in &nb[i + 1..] {
                        if self.has_edge(a, b) {
                            links += 1;
                        }
                    }
                }
                2.0 * links as f64 / (d * (d - 1)) as f64
            })
            .sum();
        total / self.len() as f64
    }

    /// Mean hop distance over ordered pairs of distinct nodes; `None` when
    /// the graph is disconnected.
    pub fn mean_shortest_path(&self) -> Option<f64> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        let mut sum = 0u64;
        for u in 0..n {
            for d in self.hop_distances(u) {
                sum += u64::from(d?);
            }
        }
        Some(sum as f64 / (n * (n - 1)) as f64)
    }
}
