//! Declarative scenarios: a topology, cells with resources and rules,
//! sensor drivers, faults, limits and exactly one experiment.
//!
//! Loading is all or nothing. A document is parsed, checked against the
//! published schema, then checked for references the schema cannot express
//! (cells, addresses, rule text, profile files). Every problem found is
//! reported; no partially loaded scenario is ever returned.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use orgami_core::deploy::ResourceKey;
use orgami_core::netsim::{Delay, LinkModel, Topology, TopologyKind, TopologyParams};
use orgami_core::voting::PreferenceProfile;
use orgami_core::{parse_rule, CellId, IoRole, Kind, Name, ResourceAddress, Value};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{scenario_schema, validate, Violation};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: not valid JSON: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {} violation(s):\n{}", .violations.len(), list(.violations))]
    Validation {
        path: PathBuf,
        violations: Vec<Violation>,
    },
}

fn list(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("  {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Generator seed; the scenario seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(String, String)>>,
}

impl TopologySpec {
    pub fn build(&self, default_seed: u64) -> Result<Topology, String> {
        if self.kind == TopologyKind::Custom {
            let (Some(nodes), Some(edges)) = (&self.nodes, &self.edges) else {
                return Err("custom topologies need `nodes` and `edges`".into());
            };
            let ids = nodes
                .iter()
                .map(|n| CellId::new(n.as_str()).map_err(|e| format!("node {n:?}: {e}")))
                .collect::<Result<Vec<_>, _>>()?;
            let index = |n: &str| {
                nodes
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| format!("edge endpoint {n:?} is not a node"))
            };
            let pairs = edges
                .iter()
                .map(|(u, v)| Ok((index(u)?, index(v)?)))
                .collect::<Result<Vec<_>, String>>()?;
            return Topology::custom(ids, &pairs).map_err(|e| e.to_string());
        }
        let n = self.n.ok_or("generated topologies need `n`")?;
        let defaults = TopologyParams::default();
        let params = TopologyParams {
            k: self.k.unwrap_or(defaults.k),
            beta: self.beta.unwrap_or(defaults.beta),
        };
        Topology::generate(self.kind, n, params, self.seed.unwrap_or(default_seed))
            .map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_max: Option<u64>,
    #[serde(default)]
    pub loss_prob: f64,
}

impl LinkSpec {
    pub fn model(&self) -> LinkModel {
        let lo = self.delay.unwrap_or(1);
        let delay = match self.delay_max {
            Some(hi) if hi != lo => Delay::Uniform { lo, hi },
            _ => Delay::Fixed(lo),
        };
        LinkModel {
            delay,
            loss_prob: self.loss_prob,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub id: String,
    #[serde(default)]
    pub io: BTreeMap<String, IoRole>,
    /// `K/name` to a scalar, or to rule text for `/A/`.
    #[serde(default)]
    pub resources: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub address: String,
    #[serde(default)]
    pub at: u64,
    #[serde(default = "one")]
    pub every: u64,
    pub values: Vec<Value>,
}

fn one() -> u64 {
    1
}

impl DriverSpec {
    /// `(tick, value)` samples in order.
    pub fn samples(&self) -> impl Iterator<Item = (u64, &Value)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (self.at + i as u64 * self.every, v))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub asymmetric: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_every: Option<u64>,
    #[serde(default)]
    pub switch_topologies: Vec<TopologySpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    #[serde(default = "Limits::default_max_ticks")]
    pub max_ticks: u64,
    #[serde(default = "Limits::default_ttl")]
    pub ttl: u32,
    #[serde(default = "Limits::default_max_states")]
    pub max_states: usize,
}

impl Limits {
    fn default_max_ticks() -> u64 {
        100_000
    }
    fn default_ttl() -> u32 {
        orgami_core::engine::DEFAULT_TTL
    }
    fn default_max_states() -> usize {
        orgami_core::petri::DEFAULT_MAX_STATES
    }
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_ticks: Limits::default_max_ticks(),
            ttl: Limits::default_ttl(),
            max_states: Limits::default_max_states(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowExpect {
    #[serde(default)]
    pub writes: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    pub present: Vec<String>,
    #[serde(default)]
    pub absent: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quiet_after: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<u64>,
    #[serde(default)]
    pub expect: FlowExpect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainType {
    Int,
    Bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    #[serde(rename = "type")]
    pub ty: DomainType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Any,
    Sequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpecJson {
    pub mode: InputMode,
    #[serde(default)]
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PetriExpect {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<String>,
    #[serde(default)]
    pub ranges: BTreeMap<String, (Value, Value)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PetriSpec {
    #[serde(default)]
    pub domains: BTreeMap<String, DomainSpec>,
    #[serde(default)]
    pub inputs: BTreeMap<String, InputSpecJson>,
    #[serde(default)]
    pub ranges: Vec<String>,
    #[serde(default)]
    pub expect: PetriExpect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclSpec {
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub io: Option<IoRole>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Pbo,
    BruteForce,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeployExpect {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<u64>,
    #[serde(default)]
    pub placement: BTreeMap<String, String>,
    #[serde(default)]
    pub writes: BTreeMap<String, Vec<Value>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploySpec {
    pub choreography: Vec<DeclSpec>,
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
    #[serde(default)]
    pub capacities: BTreeMap<String, usize>,
    #[serde(default = "DeploySpec::default_strategy")]
    pub strategy: orgami_core::deploy::Strategy,
    #[serde(default)]
    pub solver: Solver,
    /// Cell the DNA is installed on; the first node when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
    #[serde(default)]
    pub at: u64,
    #[serde(default = "DeploySpec::default_bound")]
    pub bound: u64,
    #[serde(default)]
    pub expect: DeployExpect,
}

impl DeploySpec {
    fn default_strategy() -> orgami_core::deploy::Strategy {
        orgami_core::deploy::Strategy::Dna
    }
    fn default_bound() -> u64 {
        100
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleSpec {
    pub radius: f64,
    pub period: usize,
    #[serde(default = "CircleSpec::default_turn")]
    pub turn: f64,
}

impl CircleSpec {
    fn default_turn() -> f64 {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circle: Option<CircleSpec>,
}

impl SignalSpec {
    /// State at step `t`; the signal repeats.
    pub fn at(&self, t: usize) -> Vec<f64> {
        if let Some(points) = &self.points {
            return points[t % points.len()].clone();
        }
        let c = self
            .circle
            .as_ref()
            .expect("validated signals have a shape");
        let a = c.turn * std::f64::consts::TAU * (t % c.period) as f64 / c.period as f64;
        vec![c.radius * a.cos(), c.radius * a.sin()]
    }

    pub fn width(&self) -> usize {
        match &self.points {
            Some(p) => p.first().map_or(0, Vec::len),
            None => 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_select: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_learn: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_behaviors: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction_tol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningSpec {
    #[serde(default = "MiningSpec::default_bins")]
    pub bins: usize,
    #[serde(default = "MiningSpec::default_support")]
    pub min_support: f64,
    #[serde(default = "MiningSpec::default_confidence")]
    pub min_confidence: f64,
}

impl MiningSpec {
    fn default_bins() -> usize {
        orgami_core::anc::DEFAULT_BINS
    }
    fn default_support() -> f64 {
        0.1
    }
    fn default_confidence() -> f64 {
        0.9
    }
}

impl Default for MiningSpec {
    fn default() -> Self {
        MiningSpec {
            bins: MiningSpec::default_bins(),
            min_support: MiningSpec::default_support(),
            min_confidence: MiningSpec::default_confidence(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AncExpect {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behaviors: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AncSpec {
    /// Cell the learnt behaviors are written to; the first node when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
    pub signals: Vec<SignalSpec>,
    #[serde(default = "AncSpec::default_presentations")]
    pub presentations: usize,
    #[serde(default = "AncSpec::default_segment")]
    pub segment: usize,
    #[serde(default)]
    pub settle: usize,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub rules: MiningSpec,
    #[serde(default)]
    pub expect: AncExpect,
}

impl AncSpec {
    fn default_presentations() -> usize {
        2
    }
    fn default_segment() -> usize {
        64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomProfile {
    pub candidates: usize,
    /// The scenario seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Random(RandomProfile),
    /// Resolved to `Rows` while loading.
    Csv(String),
    Rows(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteParamsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<usize>,
}

impl VoteParamsSpec {
    pub fn params(&self) -> orgami_core::voting::VoteParams {
        let d = orgami_core::voting::VoteParams::default();
        orgami_core::voting::VoteParams {
            epsilon: self.epsilon.or(d.epsilon),
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            delta: self.delta.unwrap_or(d.delta),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            max_rounds: self.max_rounds.unwrap_or(d.max_rounds),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompiledSpec {
    #[serde(default = "CompiledSpec::default_period")]
    pub period: u64,
    #[serde(default = "one")]
    pub delay: u64,
}

impl CompiledSpec {
    fn default_period() -> u64 {
        3
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub seeds: u64,
    pub topologies: Vec<TopologySpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteExpect {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<usize>,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub compiled_agrees: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteSpec {
    pub profile: ProfileSpec,
    #[serde(default)]
    pub params: VoteParamsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compiled: Option<CompiledSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkSpec>,
    #[serde(default)]
    pub expect: VoteExpect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Flow(FlowSpec),
    Petri(PetriSpec),
    Deploy(DeploySpec),
    Anc(AncSpec),
    Vote(VoteSpec),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Flow(_) => "flow",
            Experiment::Petri(_) => "petri",
            Experiment::Deploy(_) => "deploy",
            Experiment::Anc(_) => "anc",
            Experiment::Vote(_) => "vote",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub topology: TopologySpec,
    #[serde(default)]
    pub link: LinkSpec,
    #[serde(default)]
    pub cells: Vec<CellSpec>,
    #[serde(default)]
    pub drivers: Vec<DriverSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faults: Option<FaultSpec>,
    #[serde(default)]
    pub limits: Limits,
    pub experiment: Experiment,
}

/// Reads a scenario file. Relative profile paths resolve against the
/// file's directory.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&text, base).map_err(|e| match e {
        LoadError::Parse { message, .. } => LoadError::Parse {
            path: path.to_path_buf(),
            message,
        },
        LoadError::Validation { violations, .. } => LoadError::Validation {
            path: path.to_path_buf(),
            violations,
        },
        io => io,
    })
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, LoadError> {
    let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| LoadError::Parse {
        path: PathBuf::new(),
        message: e.to_string(),
    })?;
    let invalid = |violations| LoadError::Validation {
        path: PathBuf::new(),
        violations,
    };
    let violations = validate(scenario_schema(), &doc);
    if !violations.is_empty() {
        return Err(invalid(violations));
    }
    let mut scenario: Scenario = serde_json::from_value(doc)
        .map_err(|e| invalid(vec![Violation::new("", e.to_string())]))?;
    let violations = check_references(&mut scenario, base_dir);
    if violations.is_empty() {
        Ok(scenario)
    } else {
        Err(invalid(violations))
    }
}

/// Parses `text` as a `cell/K/name` address.
pub fn address(text: &str) -> Result<ResourceAddress, String> {
    text.parse()
        .map_err(|e| format!("bad address {text:?}: {e}"))
}

/// Parses a `K/name` key.
pub fn local_key(text: &str) -> Result<(Kind, Name), String> {
    let bad = || format!("bad resource key {text:?}, expected K/name");
    let (k, n) = text.split_once('/').ok_or_else(bad)?;
    let kind = Kind::from_letter(k).ok_or_else(bad)?;
    let name = Name::new(n).map_err(|_| bad())?;
    Ok((kind, name))
}

/// Profile CSV: one row per decision maker, one column per candidate. A
/// first row that is not numeric is taken as a header.
pub fn read_profile_csv(path: &Path) -> Result<PreferenceProfile, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(format!("{} row {}: {e}", path.display(), i + 1)),
        }
    }
    PreferenceProfile::new(rows).map_err(|e| format!("{}: {e}", path.display()))
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn err(&mut self, path: impl Into<String>, msg: impl Into<String>) {
        self.out.push(Violation::new(path, msg));
    }

    fn address(
        &mut self,
        path: &str,
        text: &str,
        nodes: &BTreeSet<CellId>,
    ) -> Option<ResourceAddress> {
        match address(text) {
            Ok(a) if nodes.contains(&a.cell) => Some(a),
            Ok(a) => {
                self.err(path, format!("cell {} of {text} is not a node", a.cell));
                None
            }
            Err(e) => {
                self.err(path, e);
                None
            }
        }
    }

    fn node(&mut self, path: &str, text: &str, nodes: &BTreeSet<CellId>) {
        if !CellId::new(text).is_ok_and(|c| nodes.contains(&c)) {
            self.err(path, format!("{text:?} is not a node of the topology"));
        }
    }
}

fn check_references(s: &mut Scenario, base_dir: &Path) -> Vec<Violation> {
    let mut c = Checker { out: Vec::new() };
    let topology = match s.topology.build(s.seed) {
        Ok(t) => Some(t),
        Err(e) => {
            c.err("/topology", e);
            None
        }
    };
    let nodes: BTreeSet<CellId> = topology
        .as_ref()
        .map(|t| t.nodes().iter().cloned().collect())
        .unwrap_or_default();
    let known = topology.is_some();

    let mut seen = BTreeSet::new();
    for (i, cell) in s.cells.iter().enumerate() {
        let path = format!("/cells/{i}");
        if !seen.insert(cell.id.clone()) {
            c.err(
                format!("{path}/id"),
                format!("duplicate cell {:?}", cell.id),
            );
        }
        if known {
            c.node(&format!("{path}/id"), &cell.id, &nodes);
        }
        for name in cell.io.keys() {
            if Name::new(name.as_str()).is_err() {
                c.err(format!("{path}/io"), format!("bad resource name {name:?}"));
            }
        }
        for (key, value) in &cell.resources {
            let here = format!("{path}/resources/{key}");
            match local_key(key) {
                Ok((Kind::A, _)) => match value {
                    Value::Text(src) => {
                        if let Err(e) = parse_rule(src) {
                            c.err(here, format!("rule does not parse: {e}"));
                        }
                    }
                    _ => c.err(here, "agent resources hold rule text"),
                },
                Ok(_) => {}
                Err(e) => c.err(here, e),
            }
        }
    }
    if known {
        for (i, d) in s.drivers.iter().enumerate() {
            c.address(&format!("/drivers/{i}/address"), &d.address, &nodes);
        }
    }
    if let (Some(f), Some(t)) = (&s.faults, &topology) {
        if f.switch_every.is_some() != !f.switch_topologies.is_empty() {
            c.err("/faults", "switch_every and switch_topologies go together");
        }
        for (i, spec) in f.switch_topologies.iter().enumerate() {
            match spec.build(s.seed) {
                Ok(alt) if alt.nodes() == t.nodes() => {}
                Ok(_) => c.err(
                    format!("/faults/switch_topologies/{i}"),
                    "must have the same nodes as the topology",
                ),
                Err(e) => c.err(format!("/faults/switch_topologies/{i}"), e),
            }
        }
    }
    if known {
        match &mut s.experiment {
            Experiment::Flow(f) => check_flow(&mut c, f, &nodes),
            Experiment::Petri(p) => check_petri(&mut c, p, &nodes),
            Experiment::Deploy(d) => check_deploy(&mut c, d, &nodes),
            Experiment::Anc(a) => check_anc(&mut c, a, &nodes),
            Experiment::Vote(v) => check_vote(&mut c, v, nodes.len(), s.seed, base_dir),
        }
    }
    c.out
}

fn check_flow(c: &mut Checker, f: &FlowSpec, nodes: &BTreeSet<CellId>) {
    let p = "/experiment/flow/expect";
    for a in f.expect.writes.keys() {
        c.address(&format!("{p}/writes"), a, nodes);
    }
    for a in f.expect.present.iter().chain(&f.expect.absent) {
        c.address(p, a, nodes);
    }
}

fn check_petri(c: &mut Checker, s: &PetriSpec, nodes: &BTreeSet<CellId>) {
    let p = "/experiment/petri";
    for (a, d) in &s.domains {
        c.address(&format!("{p}/domains"), a, nodes);
        if d.ty == DomainType::Int {
            match (d.lo, d.hi) {
                (Some(lo), Some(hi)) if lo <= hi => {}
                (Some(_), Some(_)) => c.err(format!("{p}/domains/{a}"), "lo exceeds hi"),
                _ => c.err(format!("{p}/domains/{a}"), "int domains need lo and hi"),
            }
        }
    }
    for (a, i) in &s.inputs {
        c.address(&format!("{p}/inputs"), a, nodes);
        if i.mode == InputMode::Any && !i.values.is_empty() {
            c.err(format!("{p}/inputs/{a}"), "mode any takes no values");
        }
    }
    for a in s.ranges.iter().chain(s.expect.ranges.keys()) {
        c.address(&format!("{p}/ranges"), a, nodes);
    }
    if let Some(t) = &s.expect.termination {
        if !["terminates", "may_not_terminate", "unknown"].contains(&t.as_str()) {
            c.err(
                format!("{p}/expect/termination"),
                format!("unknown verdict {t:?}"),
            );
        }
    }
}

fn check_deploy(c: &mut Checker, d: &DeploySpec, nodes: &BTreeSet<CellId>) {
    let p = "/experiment/deploy";
    for (i, decl) in d.choreography.iter().enumerate() {
        let here = format!("{p}/choreography/{i}");
        let key: Result<ResourceKey, _> = decl.key.parse();
        let Ok(key) = key else {
            c.err(&here, format!("bad resource key {:?}", decl.key));
            continue;
        };
        match (key.kind, &decl.initial, &decl.rule) {
            (Kind::A, None, Some(src)) => {
                if let Err(e) = parse_rule(src) {
                    c.err(&here, format!("rule does not parse: {e}"));
                }
            }
            (Kind::A, _, _) => c.err(&here, "agent resources need `rule` and no `initial`"),
            (_, _, Some(_)) => c.err(&here, "only agent resources take `rule`"),
            _ => {}
        }
        if decl.io.is_some() && key.kind != Kind::S {
            c.err(&here, "only /S/ resources take `io`");
        }
    }
    for (name, node) in &d.bindings {
        if Name::new(name.as_str()).is_err() {
            c.err(
                format!("{p}/bindings"),
                format!("bad resource name {name:?}"),
            );
        }
        c.node(&format!("{p}/bindings/{name}"), node, nodes);
    }
    for node in d.capacities.keys() {
        c.node(&format!("{p}/capacities"), node, nodes);
    }
    if let Some(e) = &d.entry {
        c.node(&format!("{p}/entry"), e, nodes);
    }
    for node in d.expect.placement.values() {
        c.node(&format!("{p}/expect/placement"), node, nodes);
    }
    for a in d.expect.writes.keys() {
        c.address(&format!("{p}/expect/writes"), a, nodes);
    }
}

fn check_anc(c: &mut Checker, a: &AncSpec, nodes: &BTreeSet<CellId>) {
    let p = "/experiment/anc";
    if let Some(cell) = &a.cell {
        c.node(&format!("{p}/cell"), cell, nodes);
    }
    let mut widths = BTreeSet::new();
    for (i, s) in a.signals.iter().enumerate() {
        let here = format!("{p}/signals/{i}");
        match (&s.points, &s.circle) {
            (Some(points), None) => {
                let w: BTreeSet<usize> = points.iter().map(Vec::len).collect();
                if w.len() > 1 {
                    c.err(&here, "points have different widths");
                }
                widths.extend(w);
            }
            (None, Some(_)) => {
                widths.insert(2);
            }
            _ => c.err(&here, "a signal needs exactly one of `points` and `circle`"),
        }
    }
    if widths.len() > 1 {
        c.err(format!("{p}/signals"), "signals have different widths");
    }
    if a.settle >= a.segment {
        c.err(
            format!("{p}/settle"),
            "settle must be shorter than the segment",
        );
    }
}

fn check_vote(c: &mut Checker, v: &mut VoteSpec, n: usize, seed: u64, base_dir: &Path) {
    let p = "/experiment/vote/profile";
    if let ProfileSpec::Csv(file) = &v.profile {
        match read_profile_csv(&base_dir.join(file)) {
            Ok(profile) => v.profile = ProfileSpec::Rows(profile.rows().to_vec()),
            Err(e) => {
                c.err(format!("{p}/csv"), e);
                return;
            }
        }
    }
    match &v.profile {
        ProfileSpec::Rows(rows) => {
            if let Err(e) = PreferenceProfile::new(rows.clone()) {
                c.err(format!("{p}/rows"), e.to_string());
            } else if rows.len() != n {
                c.err(p, format!("{} decision makers for {n} nodes", rows.len()));
            }
        }
        ProfileSpec::Random(_) | ProfileSpec::Csv(_) => {}
    }
    if let Some(b) = &v.benchmark {
        for (i, t) in b.topologies.iter().enumerate() {
            let here = format!("/experiment/vote/benchmark/topologies/{i}");
            match t.build(seed) {
                Ok(t) if t.len() == n => {}
                Ok(t) => c.err(here, format!("{} nodes, profile has {n}", t.len())),
                Err(e) => c.err(here, e),
            }
        }
    }
    if let (Some(w), Some(k)) = (v.expect.winner, profile_width(&v.profile)) {
        if w > k {
            c.err(
                "/experiment/vote/expect/winner",
                format!("only {k} candidates"),
            );
        }
    }
}

fn profile_width(p: &ProfileSpec) -> Option<usize> {
    match p {
        ProfileSpec::Random(r) => Some(r.candidates),
        ProfileSpec::Rows(rows) => rows.first().map(Vec::len),
        ProfileSpec::Csv(_) => None,
    }
}
