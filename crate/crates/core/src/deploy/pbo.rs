use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::Serialize;

use super::{DeployError, DeployTarget, InstantiationGraph, Mapping, ResourceKey};
use crate::crm::CellId;

/// Largest search space `brute_force_mapping` will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Placement problem over binary variables `x[r][v]` (free resource `r` on
/// node `v`): exactly one node per resource, pins, co-location and
/// capacities as constraints, and `sum w_rs * dist(v(r), v(s))` to minimize.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PboInstance {
    pub nodes: Vec<CellId>,
    pub resources: Vec<ResourceKey>,
    /// Unpinned resources, ascending; the order of the search.
    pub free: Vec<usize>,
    /// Node index of every pinned resource.
    pub pinned: BTreeMap<usize, usize>,
    /// Hop counts between nodes.
    pub dist: Vec<Vec<u64>>,
    /// `(r, s, w)` with `r < s` and `w > 0`.
    pub weights: Vec<(usize, usize, u64)>,
    pub colocated: Vec<(usize, usize)>,
    pub capacity: Vec<Option<usize>>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl PboInstance {
    /// Number of placement variables, `|free| * |nodes|`.
    pub fn variable_count(&self) -> usize {
        self.free.len() * self.nodes.len()
    }

    /// Objective of a complete assignment (node index per resource).
    pub fn objective(&self, at: &[usize]) -> u64 {
        self.weights
            .iter()
            .map(|&(r, s, w)| w * self.dist[at[r]][at[s]])
            .sum()
    }

    pub fn is_feasible(&self, at: &[usize]) -> bool {
        if self.pinned.iter().any(|(&r, &v)| at[r] != v) {
            return false;
        }
        if self.colocated.iter().any(|&(r, s)| at[r] != at[s]) {
            return false;
        }
        let mut load = vec![0usize; self.nodes.len()];
        for &v in at {
            load[v] += 1;
        }
        load.iter()
            .zip(&self.capacity)
            .all(|(l, c)| c.is_none_or(|c| *l <= c))
    }

    fn mapping(&self, at: &[usize]) -> Mapping {
        Mapping {
            assignment: self
                .resources
                .iter()
                .zip(at)
                .map(|(k, &v)| (k.clone(), self.nodes[v].clone()))
                .collect(),
            objective: self.objective(at),
        }
    }

    /// Node forced on each resource by pins through co-location chains.
    fn forced_nodes(&self) -> Result<Vec<Option<usize>>, DeployError> {
        let n = self.resources.len();
        let mut parent: Vec<usize> = (0..n).collect();
        for &(r, s) in &self.colocated {
            let (a, b) = (find(&mut parent, r), find(&mut parent, s));
            parent[a.max(b)] = a.min(b);
        }
        let mut group_pin: BTreeMap<usize, usize> = BTreeMap::new();
        for (&r, &v) in &self.pinned {
            let root = find(&mut parent, r);
            match group_pin.insert(root, v) {
                Some(w) if w != v => {
                    return Err(DeployError::ColocationConflict(self.resources[r].clone()))
                }
                _ => {}
            }
        }
        Ok((0..n)
            .map(|r| {
                let root = find(&mut parent, r);
                group_pin.get(&root).copied()
            })
            .collect())
    }

    /// Pseudo-Boolean competition text format. Products of placement
    /// variables are linearized with one and-variable each.
    pub fn to_opb(&self) -> String {
        let n = self.nodes.len();
        let slot: BTreeMap<usize, usize> =
            self.free.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let x = |r: usize, v: usize| slot[&r] * n + v + 1;
        let mut next = self.variable_count() + 1;
        let mut objective: BTreeMap<usize, u64> = BTreeMap::new();
        let mut constraints: Vec<String> = Vec::new();
        let mut constant = 0u64;
        for &(r, s, w) in &self.weights {
            match (self.pinned.get(&r), self.pinned.get(&s)) {
                (Some(&p), Some(&q)) => constant += w * self.dist[p][q],
                (Some(&p), None) | (None, Some(&p)) => {
                    let f = if self.pinned.contains_key(&r) { s } else { r };
                    for v in 0..n {
                        let c = w * self.dist[v][p];
                        if c > 0 {
                            *objective.entry(x(f, v)).or_insert(0) += c;
                        }
                    }
                }
                (None, None) => {
                    for v in 0..n {
                        for u in 0..n {
                            let c = w * self.dist[v][u];
                            if c == 0 {
                                continue;
                            }
                            let y = next;
                            next += 1;
                            let (a, b) = (x(r, v), x(s, u));
                            objective.insert(y, c);
                            constraints.push(format!("-1 x{y} +1 x{a} >= 0 ;"));
                            constraints.push(format!("-1 x{y} +1 x{b} >= 0 ;"));
                            constraints.push(format!("+1 x{y} -1 x{a} -1 x{b} >= -1 ;"));
                        }
                    }
                }
            }
        }
        for &r in &self.free {
            let terms: Vec<String> = (0..n).map(|v| format!("+1 x{}", x(r, v))).collect();
            constraints.push(format!("{} = 1 ;", terms.join(" ")));
        }
        for &(r, s) in &self.colocated {
            match (self.pinned.get(&r), self.pinned.get(&s)) {
                (Some(_), Some(_)) => {}
                (Some(&p), None) => constraints.push(format!("+1 x{} = 1 ;", x(s, p))),
                (None, Some(&p)) => constraints.push(format!("+1 x{} = 1 ;", x(r, p))),
                (None, None) => {
                    for v in 0..n {
                        constraints.push(format!("+1 x{} -1 x{} = 0 ;", x(r, v), x(s, v)));
                    }
                }
            }
        }
        for (v, cap) in self.capacity.iter().enumerate() {
            let Some(cap) = cap else { continue };
            let fixed = self.pinned.values().filter(|&&p| p == v).count();
            let room = *cap as i64 - fixed as i64;
            if self.free.is_empty() {
                continue;
            }
            let terms: Vec<String> = self
                .free
                .iter()
                .map(|&r| format!("-1 x{}", x(r, v)))
                .collect();
            constraints.push(format!("{} >= {} ;", terms.join(" "), -room));
        }

        let mut out = String::new();
        let _ = writeln!(
            out,
            "* #variable= {} #constraint= {}",
            next - 1,
            constraints.len()
        );
        let _ = writeln!(out, "* constant objective offset {constant}");
        for (i, &r) in self.free.iter().enumerate() {
            for (v, node) in self.nodes.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "* x{} = {} on {}",
                    i * n + v + 1,
                    self.resources[r],
                    node
                );
            }
        }
        out.push_str("min:");
        for (var, c) in &objective {
            let _ = write!(out, " +{c} x{var}");
        }
        out.push_str(" ;\n");
        for c in constraints {
            out.push_str(&c);
            out.push('\n');
        }
        out
    }
}

pub fn formulate_pbo(
    graph: &InstantiationGraph,
    target: &DeployTarget,
) -> Result<PboInstance, DeployError> {
    let topo = &target.topology;
    if !topo.is_connected() {
        return Err(DeployError::DisconnectedTarget);
    }
    let dist = (0..topo.len())
        .map(|u| {
            topo.hop_distances(u)
                .into_iter()
                .map(|d| u64::from(d.expect("connected")))
                .collect()
        })
        .collect();
    let mut pinned = BTreeMap::new();
    for (&r, node) in &graph.pins {
        let v = topo
            .index_of(node)
            .ok_or_else(|| DeployError::UnknownNode(node.clone()))?;
        pinned.insert(r, v);
    }
    for node in target.capacities.keys() {
        if topo.index_of(node).is_none() {
            return Err(DeployError::UnknownNode(node.clone()));
        }
    }
    Ok(PboInstance {
        nodes: topo.nodes().to_vec(),
        resources: graph.vertices.clone(),
        free: graph.free_vertices().collect(),
        pinned,
        dist,
        weights: graph
            .weights
            .iter()
            .filter(|(_, &w)| w > 0)
            .map(|(&(r, s), &w)| (r, s, w))
            .collect(),
        colocated: graph.colocated.iter().copied().collect(),
        capacity: topo
            .nodes()
            .iter()
            .map(|n| target.capacities.get(n).copied())
            .collect(),
    })
}

struct Search<'a> {
    inst: &'a PboInstance,
    forced: Vec<Option<usize>>,
    adj: Vec<Vec<(usize, u64)>>,
    /// Partners each resource must share a node with.
    partners: Vec<Vec<usize>>,
    at: Vec<Option<usize>>,
    load: Vec<usize>,
    best: Option<(u64, Vec<usize>)>,
}

impl Search<'_> {
    fn fits(&self, v: usize) -> bool {
        self.inst.capacity[v].is_none_or(|c| self.load[v] < c)
    }

    /// Nodes `r` may still take, in ascending order.
    fn choices(&self, r: usize) -> Vec<usize> {
        let tied = self.forced[r].or_else(|| self.partners[r].iter().find_map(|&s| self.at[s]));
        match tied {
            Some(v) => {
                if self.fits(v) {
                    vec![v]
                } else {
                    Vec::new()
                }
            }
            None => (0..self.inst.nodes.len())
                .filter(|&v| self.fits(v))
                .collect(),
        }
    }

    /// Cost of putting `r` on `v` against everything already placed.
    fn attach(&self, r: usize, v: usize) -> u64 {
        self.adj[r]
            .iter()
            .filter_map(|&(s, w)| self.at[s].map(|u| w * self.inst.dist[v][u]))
            .sum()
    }

    fn lower_bound(&self, depth: usize, cost: u64) -> Option<u64> {
        let mut lb = cost;
        for &r in &self.inst.free[depth..] {
            lb += self.choices(r).iter().map(|&v| self.attach(r, v)).min()?;
        }
        Some(lb)
    }

    fn dfs(&mut self, depth: usize, cost: u64) {
        let Some(lb) = self.lower_bound(depth, cost) else {
            return;
        };
        if self.best.as_ref().is_some_and(|(b, _)| lb >= *b) {
            return;
        }
        let Some(&r) = self.inst.free.get(depth) else {
            let at = self.at.iter().map(|v| v.expect("complete")).collect();
            self.best = Some((cost, at));
            return;
        };
        for v in self.choices(r) {
            let extra = self.attach(r, v);
            self.at[r] = Some(v);
            self.load[v] += 1;
            self.dfs(depth + 1, cost + extra);
            self.load[v] -= 1;
            self.at[r] = None;
        }
    }
}

/// Exact branch and bound. Resources are decided in ascending order, nodes
/// tried in ascending order, and only strict improvements replace the
/// incumbent, so ties resolve to the lexicographically smallest assignment.
pub fn solve_pbo(inst: &PboInstance) -> Result<Mapping, DeployError> {
    let n = inst.resources.len();
    let forced = inst.forced_nodes()?;
    let mut adj = vec![Vec::new(); n];
    for &(r, s, w) in &inst.weights {
        adj[r].push((s, w));
        adj[s].push((r, w));
    }
    let mut partners = vec![Vec::new(); n];
    for &(r, s) in &inst.colocated {
        partners[r].push(s);
        partners[s].push(r);
    }
    let mut at = vec![None; n];
    let mut load = vec![0; inst.nodes.len()];
    for (&r, &v) in &inst.pinned {
        at[r] = Some(v);
        load[v] += 1;
    }
    if load
        .iter()
        .zip(&inst.capacity)
        .any(|(l, c)| c.is_some_and(|c| *l > c))
    {
        return Err(DeployError::Infeasible);
    }
    let base: u64 = inst
        .weights
        .iter()
        .filter_map(|&(r, s, w)| Some(w * inst.dist[at[r]?][at[s]?]))
        .sum();
    let mut search = Search {
        inst,
        forced,
        adj,
        partners,
        at,
        load,
        best: None,
    };
    search.dfs(0, base);
    let (_, at) = search.best.ok_or(DeployError::Infeasible)?;
    debug_assert!(inst.is_feasible(&at));
    Ok(inst.mapping(&at))
}

/// Exhaustive enumeration of every assignment of the free resources, in
/// lexicographic order, keeping the first optimum.
pub fn brute_force_mapping(
    graph: &InstantiationGraph,
    target: &DeployTarget,
) -> Result<Mapping, DeployError> {
    let inst = formulate_pbo(graph, target)?;
    let n = inst.nodes.len();
    let space = (n as u128).saturating_pow(inst.free.len() as u32);
    if space > BRUTE_FORCE_LIMIT {
        return Err(DeployError::TooLarge(space));
    }
    let mut at = vec![0usize; inst.resources.len()];
    for (&r, &v) in &inst.pinned {
        at[r] = v;
    }
    let mut digits = vec![0usize; inst.free.len()];
    let mut best: Option<(u64, Vec<usize>)> = None;
    loop {
        for (&r, &v) in inst.free.iter().zip(&digits) {
            at[r] = v;
        }
        if inst.is_feasible(&at) {
            let cost = inst.objective(&at);
            if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                best = Some((cost, at.clone()));
            }
        }
        // Odometer with the last free resource turning fastest.
        let mut i = digits.len();
        loop {
            if i == 0 {
                let (_, at) = best.ok_or(DeployError::Infeasible)?;
                return Ok(inst.mapping(&at));
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < n {
                break;
            }
            digits[i] = 0;
        }
    }
}
