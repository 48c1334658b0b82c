//! Distributed voting: decision makers hold utility vectors over candidates,
//! network average consensus spreads the per-candidate means, and an
//! accuracy check either decides or narrows the vote to the candidates that
//! remain too close to call.

mod compile;

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineError;
use crate::netsim::{node_rng, Topology};

pub use compile::{compile_vp_to_sc, run_compiled, CompiledOutcome, VpChoreography};

pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_MAX_ROUNDS: usize = 5;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VoteError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("step size {epsilon} must lie in (0, {bound})")]
    StepTooLarge { epsilon: f64, bound: f64 },
    #[error("topology has {found} nodes, profile has {expected} decision makers")]
    SizeMismatch { expected: usize, found: usize },
    #[error("the union of the topologies is disconnected")]
    Disconnected,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("undecided after {} rounds among {:?}", .0.rounds.len(), .0.candidates)]
    Unresolved(Box<Unresolved>),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Utilities `u[i][c]` of decision maker `i` for candidate `c`, in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    utilities: Vec<Vec<f64>>,
}

impl PreferenceProfile {
    /// At least one decision maker and two candidates, rows of equal width.
    pub fn new(utilities: Vec<Vec<f64>>) -> Result<PreferenceProfile, VoteError> {
        let k = utilities.first().map_or(0, Vec::len);
        if utilities.is_empty() {
            return Err(VoteError::InvalidProfile("no decision makers".into()));
        }
        if k < 2 {
            return Err(VoteError::InvalidProfile(
                "fewer than two candidates".into(),
            ));
        }
        if let Some(i) = utilities.iter().position(|r| r.len() != k) {
            return Err(VoteError::InvalidProfile(format!(
                "row {i} has {} entries, expected {k}",
                utilities[i].len()
            )));
        }
        if utilities
            .iter()
            .flatten()
            .any(|u| !(u.is_finite() && (0.0..=1.0).contains(u)))
        {
            return Err(VoteError::InvalidProfile(
                "utilities must lie in [0, 1]".into(),
            ));
        }
        Ok(PreferenceProfile { utilities })
    }

    /// Uniform utilities, deterministic per seed.
    pub fn random(n: usize, k: usize, seed: u64) -> Result<PreferenceProfile, VoteError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PreferenceProfile::new(
            (0..n)
                .map(|_| (0..k).map(|_| rng.random_range(0.0..=1.0)).collect())
                .collect(),
        )
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.utilities
    }

    pub fn decision_makers(&self) -> usize {
        self.utilities.len()
    }

    pub fn candidates(&self) -> usize {
        self.utilities[0].len()
    }

    /// Per-candidate mean utility.
    pub fn column_means(&self) -> Vec<f64> {
        let n = self.decision_makers() as f64;
        (0..self.candidates())
            .map(|c| self.utilities.iter().map(|r| r[c]).sum::<f64>() / n)
            .collect()
    }
}

/// Iterates `x[i][c]` of every node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    pub x: Vec<Vec<f64>>,
    pub t: usize,
}

impl ConsensusState {
    pub fn new(profile: &PreferenceProfile) -> ConsensusState {
        ConsensusState {
            x: profile.utilities.clone(),
            t: 0,
        }
    }

    /// Per-candidate average over nodes.
    pub fn average(&self) -> Vec<f64> {
        let n = self.x.len() as f64;
        (0..self.x.first().map_or(0, Vec::len))
            .map(|c| self.x.iter().map(|r| r[c]).sum::<f64>() / n)
            .collect()
    }

    /// Largest distance of any iterate from its candidate's average.
    pub fn disagreement(&self) -> f64 {
        let avg = self.average();
        self.x
            .iter()
            .flat_map(|r| r.iter().zip(&avg).map(|(x, a)| (x - a).abs()))
            .fold(0.0, f64::max)
    }
}

/// Default step `1/(deg_max + 1)` over all topologies in use.
pub fn default_epsilon<'a>(topologies: impl IntoIterator<Item = &'a Topology>) -> f64 {
    let d = topologies
        .into_iter()
        .map(Topology::max_degree)
        .max()
        .unwrap_or(0);
    1.0 / (d as f64 + 1.0)
}

fn check_epsilon(epsilon: f64, topology: &Topology) -> Result<(), VoteError> {
    let d = topology.max_degree();
    let bound = if d == 0 {
        f64::INFINITY
    } else {
        1.0 / d as f64
    };
    if !(epsilon > 0.0 && epsilon < bound) {
        return Err(VoteError::StepTooLarge { epsilon, bound });
    }
    Ok(())
}

/// One synchronous consensus step. `lost(i, j)` tells whether node `i`
/// misses its neighbor `j`'s value this step.
fn step_with(
    state: &ConsensusState,
    topology: &Topology,
    epsilon: f64,
    lost: impl Fn(usize, usize) -> bool,
) -> ConsensusState {
    let x = &state.x;
    let next = (0..x.len())
        .map(|i| {
            let mut row = x[i].clone();
            for j in topology.neighbors(i).filter(|&j| !lost(i, j)) {
                for (c, v) in row.iter_mut().enumerate() {
                    *v += epsilon * (x[j][c] - x[i][c]);
                }
            }
            row
        })
        .collect();
    ConsensusState {
        x: next,
        t: state.t + 1,
    }
}

/// `x_i <- x_i + eps * sum_{j in N(i)} (x_j - x_i)` for all nodes at once.
pub fn nac_step(
    state: &ConsensusState,
    topology: &Topology,
    epsilon: f64,
) -> Result<ConsensusState, VoteError> {
    nac_step_dropping(state, topology, epsilon, &BTreeSet::new())
}

/// A step in which the exchanges over the undirected edges `lost` (as
/// `(lower, higher)` node pairs) vanish on both endpoints.
pub fn nac_step_dropping(
    state: &ConsensusState,
    topology: &Topology,
    epsilon: f64,
    lost: &BTreeSet<(usize, usize)>,
) -> Result<ConsensusState, VoteError> {
    if topology.len() != state.x.len() {
        return Err(VoteError::SizeMismatch {
            expected: state.x.len(),
            found: topology.len(),
        });
    }
    check_epsilon(epsilon, topology)?;
    Ok(step_with(state, topology, epsilon, |i, j| {
        lost.contains(&(i.min(j), i.max(j)))
    }))
}

/// Cycles through `topologies`, switching every `every` iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct Switching {
    pub every: usize,
    pub topologies: Vec<Topology>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct FaultConfig {
    /// Probability that one exchange is lost in a step.
    pub loss_prob: f64,
    /// Lost exchanges drop one direction only; sums are no longer conserved.
    pub asymmetric: bool,
    pub switching: Option<Switching>,
    pub seed: u64,
}

impl FaultConfig {
    pub fn lossless() -> FaultConfig {
        FaultConfig::default()
    }

    fn is_lossy(&self) -> bool {
        self.loss_prob > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteParams {
    /// Defaults to `1/(deg_max + 1)` over every topology in use.
    pub epsilon: Option<f64>,
    pub tolerance: f64,
    pub delta: f64,
    pub max_iters: usize,
    pub max_rounds: usize,
}

impl Default for VoteParams {
    fn default() -> Self {
        VoteParams {
            epsilon: None,
            tolerance: DEFAULT_TOLERANCE,
            delta: DEFAULT_DELTA,
            max_iters: DEFAULT_MAX_ITERS,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    pub state: ConsensusState,
    /// Per-candidate average of the final iterates.
    pub aggregated: Vec<f64>,
    pub iterations: usize,
    /// Final disagreement, below the tolerance when converged.
    pub residual: f64,
    pub converged: bool,
    /// Exchanges lost to faults.
    pub lost: usize,
}

/// Fault draws shared by the rounds of one vote: one stream per node.
struct Faults<'a> {
    config: &'a FaultConfig,
    streams: Vec<ChaCha8Rng>,
}

impl<'a> Faults<'a> {
    fn new(config: &'a FaultConfig, n: usize) -> Faults<'a> {
        Faults {
            config,
            streams: (0..n).map(|i| node_rng(config.seed, i)).collect(),
        }
    }

    fn topology(&self, base: &'a Topology, t: usize) -> &'a Topology {
        match &self.config.switching {
            Some(s) if !s.topologies.is_empty() => {
                &s.topologies[(t / s.every.max(1)) % s.topologies.len()]
            }
            _ => base,
        }
    }

    /// Lost directed pairs `(receiver, sender)` for one step. A symmetric
    /// loss is drawn once per edge from the lower endpoint's stream.
    fn draw(&mut self, topology: &Topology) -> BTreeSet<(usize, usize)> {
        let mut lost = BTreeSet::new();
        if !self.config.is_lossy() {
            return lost;
        }
        let p = self.config.loss_prob;
        for (u, v) in topology.edges() {
            if self.config.asymmetric {
                if self.streams[v].random_bool(p) {
                    lost.insert((v, u));
                }
                if self.streams[u].random_bool(p) {
                    lost.insert((u, v));
                }
            } else if self.streams[u.min(v)].random_bool(p) {
                lost.insert((u, v));
                lost.insert((v, u));
            }
        }
        lost
    }
}

fn union_connected(topologies: &[&Topology]) -> bool {
    let n = topologies[0].len();
    let edges: Vec<(usize, usize)> = topologies
        .iter()
        .flat_map(|t| t.edges())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let names = topologies[0].nodes().to_vec();
    n <= 1
        || Topology::custom(names, &edges)
            .map(|t| t.is_connected())
            .unwrap_or(false)
}

fn topologies_in_use<'a>(topology: &'a Topology, faults: &'a FaultConfig) -> Vec<&'a Topology> {
    match &faults.switching {
        Some(s) if !s.topologies.is_empty() => s.topologies.iter().collect(),
        _ => vec![topology],
    }
}

fn prepare(
    profile: &PreferenceProfile,
    topology: &Topology,
    params: &VoteParams,
    faults: &FaultConfig,
) -> Result<f64, VoteError> {
    let n = profile.decision_makers();
    let used = topologies_in_use(topology, faults);
    for t in used.iter().copied().chain([topology]) {
        if t.len() != n {
            return Err(VoteError::SizeMismatch {
                expected: n,
                found: t.len(),
            });
        }
    }
    if !union_connected(&used) {
        return Err(VoteError::Disconnected);
    }
    if !(0.0..=1.0).contains(&faults.loss_prob) {
        return Err(VoteError::InvalidParameter(
            "loss_prob outside [0, 1]".into(),
        ));
    }
    if !(params.tolerance > 0.0) || params.delta < 0.0 || params.max_rounds == 0 {
        return Err(VoteError::InvalidParameter(
            "tolerance must be positive, delta non-negative, max_rounds at least 1".into(),
        ));
    }
    let epsilon = params
        .epsilon
        .unwrap_or_else(|| default_epsilon(used.iter().copied()));
    for t in used {
        check_epsilon(epsilon, t)?;
    }
    Ok(epsilon)
}

fn aggregate<'a>(
    profile: &PreferenceProfile,
    topology: &'a Topology,
    epsilon: f64,
    tolerance: f64,
    max_iters: usize,
    faults: &mut Faults<'a>,
) -> Aggregation {
    let mut state = ConsensusState::new(profile);
    let mut lost_total = 0;
    let mut residual = state.disagreement();
    while residual >= tolerance && state.t < max_iters {
        let topo = faults.topology(topology, state.t);
        let lost = faults.draw(topo);
        lost_total += lost.len();
        state = step_with(&state, topo, epsilon, |i, j| lost.contains(&(i, j)));
        residual = state.disagreement();
    }
    Aggregation {
        aggregated: state.average(),
        iterations: state.t,
        residual,
        converged: residual < tolerance,
        lost: lost_total,
        state,
    }
}

/// Iterates until every node is within `tolerance` of the per-candidate
/// average or `max_iters` is reached (`converged` is then false).
pub fn run_aggregation(
    profile: &PreferenceProfile,
    topology: &Topology,
    params: &VoteParams,
    faults: &FaultConfig,
) -> Result<Aggregation, VoteError> {
    let epsilon = prepare(profile, topology, params, faults)?;
    let mut f = Faults::new(faults, profile.decision_makers());
    Ok(aggregate(
        profile,
        topology,
        epsilon,
        params.tolerance,
        params.max_iters,
        &mut f,
    ))
}

/// Candidates are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accuracy {
    Decided(usize),
    Ambiguous(BTreeSet<usize>),
}

/// Decided when the top value beats the runner-up by more than
/// `delta + residual`; otherwise every candidate within that band of the top
/// stays in play. An exact tie is never decided.
pub fn check_accuracy(values: &[f64], delta: f64, residual: f64) -> Accuracy {
    let band = delta + residual;
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let close: BTreeSet<usize> = values
        .iter()
        .enumerate()
        .filter(|&(_, &v)| top - v <= band)
        .map(|(c, _)| c + 1)
        .collect();
    if close.len() == 1 {
        Accuracy::Decided(*close.first().expect("one element"))
    } else {
        Accuracy::Ambiguous(close)
    }
}

/// Keeps the given 1-based candidates, in ascending order, and rescales
/// each decision maker's row to `[0, 1]` by min-max. A constant row maps to
/// 0.5 everywhere.
pub fn refine(
    profile: &PreferenceProfile,
    candidates: &BTreeSet<usize>,
) -> Result<PreferenceProfile, VoteError> {
    if candidates.len() < 2 {
        return Err(VoteError::InvalidParameter(
            "refinement needs two candidates".into(),
        ));
    }
    if candidates
        .iter()
        .any(|&c| c == 0 || c > profile.candidates())
    {
        return Err(VoteError::InvalidParameter("candidate out of range".into()));
    }
    let rows = profile
        .utilities
        .iter()
        .map(|r| {
            let sub: Vec<f64> = candidates.iter().map(|&c| r[c - 1]).collect();
            let lo = sub.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = sub.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                sub.iter().map(|v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.5; sub.len()]
            }
        })
        .collect();
    PreferenceProfile::new(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// Original 1-based ids of the candidates voted on in this round.
    pub candidates: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub aggregated: Vec<f64>,
    /// Each node's verdict on its own iterate, in original ids.
    pub node_verdicts: Vec<Accuracy>,
    pub lost: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteOutcome {
    /// Original 1-based id.
    pub winner: usize,
    pub rounds: Vec<RoundTrace>,
}

impl VoteOutcome {
    pub fn iterations(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.iterations).collect()
    }

    pub fn total_iterations(&self) -> usize {
        self.rounds.iter().map(|r| r.iterations).sum()
    }

    /// Aggregated utilities of the final round, in that round's order.
    pub fn aggregated(&self) -> &[f64] {
        self.rounds.last().map_or(&[], |r| &r.aggregated)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unresolved {
    /// Original ids still ambiguous after the last round.
    pub candidates: BTreeSet<usize>,
    pub rounds: Vec<RoundTrace>,
}

fn relabel(a: &Accuracy, ids: &[usize]) -> Accuracy {
    match a {
        Accuracy::Decided(c) => Accuracy::Decided(ids[c - 1]),
        Accuracy::Ambiguous(s) => Accuracy::Ambiguous(s.iter().map(|c| ids[c - 1]).collect()),
    }
}

/// Aggregation, accuracy check and refinement until every node decides the
/// same winner or `max_rounds` is exhausted. Each node judges its own
/// iterate with the final disagreement as residual.
pub fn vote(
    profile: &PreferenceProfile,
    topology: &Topology,
    params: &VoteParams,
    faults: &FaultConfig,
) -> Result<VoteOutcome, VoteError> {
    let epsilon = prepare(profile, topology, params, faults)?;
    let mut f = Faults::new(faults, profile.decision_makers());
    let mut current = profile.clone();
    let mut ids: Vec<usize> = (1..=profile.candidates()).collect();
    let mut rounds = Vec::new();
    loop {
        let agg = aggregate(
            &current,
            topology,
            epsilon,
            params.tolerance,
            params.max_iters,
            &mut f,
        );
        let verdicts: Vec<Accuracy> = agg
            .state
            .x
            .iter()
            .map(|x| relabel(&check_accuracy(x, params.delta, agg.residual), &ids))
            .collect();
        rounds.push(RoundTrace {
            candidates: ids.clone(),
            iterations: agg.iterations,
            converged: agg.converged,
            residual: agg.residual,
            aggregated: agg.aggregated.clone(),
            node_verdicts: verdicts.clone(),
            lost: agg.lost,
        });
        let first = &verdicts[0];
        if let Accuracy::Decided(w) = first {
            if verdicts.iter().all(|v| v == first) {
                return Ok(VoteOutcome { winner: *w, rounds });
            }
        }
        let open: BTreeSet<usize> = verdicts
            .iter()
            .flat_map(|v| match v {
                Accuracy::Decided(c) => vec![*c],
                Accuracy::Ambiguous(s) => s.iter().copied().collect(),
            })
            .collect();
        if rounds.len() >= params.max_rounds || open.len() < 2 {
            return Err(VoteError::Unresolved(Box::new(Unresolved {
                candidates: open,
                rounds,
            })));
        }
        let local: BTreeSet<usize> = open
            .iter()
            .map(|c| {
                ids.iter()
                    .position(|i| i == c)
                    .expect("open ids are current")
                    + 1
            })
            .collect();
        current = refine(&current, &local)?;
        ids = open.into_iter().collect();
    }
}
