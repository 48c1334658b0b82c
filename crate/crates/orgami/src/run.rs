//! Runs a loaded scenario and gathers everything it produced into a
//! `TraceBundle`: event log, flow traces, message log, the module report and
//! the verdicts on the scenario's expectations.

use std::collections::{BTreeMap, BTreeSet};

use orgami_core::anc::{
    discretize, extract_rules_apriori, AncError, Controller, ControllerConfig, Dataset, Hyper,
    Mode, Observation, Sample,
};
use orgami_core::deploy::{
    brute_force_mapping, build_instantiation_graph, deploy, formulate_pbo, hardware_cells,
    solve_pbo, Choreography, DeployError, DeployTarget, Mapping, PlacementReport, ResourceDecl,
    ResourceKey,
};
use orgami_core::engine::{EngineError, FlowTrace, World};
use orgami_core::netsim::{MessageRecord, NetError, Network, Topology, TopologyKind};
use orgami_core::petri::{
    explore_states, sc_to_petri, Domain, ExploreConfig, InputSpec, PetriError, PetriNet,
    RangeReport, StateGraph, Termination, Token,
};
use orgami_core::voting::{
    compile_vp_to_sc, run_compiled, vote, CompiledOutcome, FaultConfig, PreferenceProfile,
    Switching, Unresolved, VoteError, VoteOutcome, VoteParams,
};
use orgami_core::{
    parse_rule, Cell, CellId, CrmError, Interaction, Kind, MutationEvent, Name, Operation, Payload,
    ResourceAddress, Value, Writer,
};
use serde::Serialize;
use thiserror::Error;

use crate::scenario::{
    address, local_key, AncSpec, DeploySpec, DomainType, Experiment, FlowExpect, FlowSpec,
    InputMode, PetriSpec, ProfileSpec, Scenario, Solver, TopologySpec, VoteSpec,
};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Replaces the scenario seed.
    pub seed: Option<u64>,
    /// Replaces the scenario's state-space limit.
    pub max_states: Option<usize>,
    /// Worker threads for benchmark sweeps; 0 or 1 runs inline.
    pub jobs: usize,
}

#[derive(Debug, Error)]
pub enum ModuleError {
    #[error(transparent)]
    Crm(#[from] CrmError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Petri(#[from] PetriError),
    #[error(transparent)]
    Deploy(#[from] DeployError),
    #[error(transparent)]
    Anc(#[from] AncError),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Error)]
#[error("scenario {scenario}: {source}")]
pub struct RunError {
    pub scenario: String,
    #[source]
    pub source: ModuleError,
}

/// Run metadata. Wall time is left out so that bundles are reproducible.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Meta {
    pub scenario: String,
    pub description: Option<String>,
    pub experiment: &'static str,
    pub module: &'static str,
    pub seed: u64,
    pub orgami_version: &'static str,
    pub core_version: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(check: impl Into<String>, passed: bool, detail: impl Into<String>) -> Verdict {
        Verdict {
            check: check.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn expect<T: PartialEq + std::fmt::Debug>(
        check: impl Into<String>,
        expected: &T,
        found: &T,
    ) -> Verdict {
        Verdict::new(
            check,
            expected == found,
            format!("expected {expected:?}, found {found:?}"),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EngineReport {
    pub finished_at: u64,
    /// The queue drained before the tick limit.
    pub quiescent: bool,
    pub events: usize,
    pub flows: usize,
    pub messages: usize,
    pub dropped: usize,
    /// Values written to each address, in order.
    pub writes: BTreeMap<String, Vec<Value>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PetriReport {
    pub places: usize,
    pub transitions: usize,
    pub states: usize,
    pub edges: usize,
    pub truncated: bool,
    pub termination: Termination,
    pub ranges: BTreeMap<String, RangeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeployReport {
    pub solver: Solver,
    pub variables: usize,
    pub mapping: Mapping,
    pub placement: PlacementReport,
    pub engine: EngineReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub presentation: usize,
    pub signal: String,
    /// Selected behavior, none while collecting.
    pub behavior: Option<usize>,
    pub library_size: usize,
    /// Per-step MSE of the selected behavior.
    pub mse: Option<f64>,
    pub learned: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AncReport {
    pub behaviors: usize,
    /// Behavior learnt first while each signal was presented.
    pub learned_for: BTreeMap<String, usize>,
    /// Share of settled final-presentation steps that selected the signal's
    /// behavior with an MSE below the selection threshold.
    pub accuracy: f64,
    pub max_selected_mse: f64,
    pub curve: Vec<CurvePoint>,
    pub rules: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub topology: String,
    pub seed: u64,
    pub iterations: usize,
    /// 0 when the vote was unresolved.
    pub winner: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VoteReport {
    pub candidates: usize,
    pub decision_makers: usize,
    pub winner: Option<usize>,
    pub oracle_winner: usize,
    pub oracle_margin: f64,
    pub outcome: Option<VoteOutcome>,
    pub unresolved: Option<Unresolved>,
    pub compiled: Option<CompiledOutcome>,
    pub benchmark: Vec<BenchmarkRow>,
    pub median_iterations: BTreeMap<String, f64>,
}

/// Module report, tagged with the module that produced it.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "module", rename_all = "snake_case")]
pub enum Report {
    Engine(EngineReport),
    Petri(PetriReport),
    Deploy(DeployReport),
    Anc(AncReport),
    Voting(VoteReport),
}

impl Report {
    pub fn module(&self) -> &'static str {
        match self {
            Report::Engine(_) => "engine",
            Report::Petri(_) => "petri",
            Report::Deploy(_) => "deploy",
            Report::Anc(_) => "anc",
            Report::Voting(_) => "voting",
        }
    }
}

/// Module artifacts with a file format of their own.
#[derive(Clone, Debug)]
pub enum Artifacts {
    None,
    Petri {
        net: Box<PetriNet>,
        graph: StateGraph,
    },
    Deploy {
        opb: String,
    },
    Anc {
        library: serde_json::Value,
    },
}

#[derive(Clone, Debug)]
pub struct TraceBundle {
    pub meta: Meta,
    pub events: Vec<MutationEvent>,
    pub flows: Vec<FlowTrace>,
    pub messages: Vec<MessageRecord>,
    pub topology: Topology,
    pub report: Report,
    pub verdicts: Vec<Verdict>,
    pub artifacts: Artifacts,
}

impl TraceBundle {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.passed)
    }
}

fn setup(msg: impl Into<String>) -> ModuleError {
    ModuleError::Setup(msg.into())
}

/// Runs `scenario`. Expectation mismatches become failed verdicts; module
/// errors are returned with the scenario name attached.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<TraceBundle, RunError> {
    Runner::new(scenario, opts)
        .and_then(|r| r.run())
        .map_err(|source| RunError {
            scenario: scenario.name.clone(),
            source,
        })
}

struct Runner<'a> {
    s: &'a Scenario,
    opts: &'a RunOptions,
    seed: u64,
    topology: Topology,
}

struct Outcome {
    world: Option<World>,
    report: Report,
    verdicts: Vec<Verdict>,
    artifacts: Artifacts,
}

impl Outcome {
    fn new(world: Option<World>, report: Report, verdicts: Vec<Verdict>) -> Outcome {
        Outcome {
            world,
            report,
            verdicts,
            artifacts: Artifacts::None,
        }
    }
}

impl<'a> Runner<'a> {
    fn new(s: &'a Scenario, opts: &'a RunOptions) -> Result<Runner<'a>, ModuleError> {
        let seed = opts.seed.unwrap_or(s.seed);
        let topology = s.topology.build(seed).map_err(setup)?;
        Ok(Runner {
            s,
            opts,
            seed,
            topology,
        })
    }

    fn run(self) -> Result<TraceBundle, ModuleError> {
        let out = match &self.s.experiment {
            Experiment::Flow(f) => self.flow(f)?,
            Experiment::Petri(p) => self.petri(p)?,
            Experiment::Deploy(d) => self.deploy(d)?,
            Experiment::Anc(a) => self.anc(a)?,
            Experiment::Vote(v) => self.vote(v)?,
        };
        let (events, flows, messages) = match &out.world {
            Some(w) => (w.events().to_vec(), w.flows(), w.network().log().to_vec()),
            None => Default::default(),
        };
        Ok(TraceBundle {
            meta: Meta {
                scenario: self.s.name.clone(),
                description: self.s.description.clone(),
                experiment: self.s.experiment.kind(),
                module: out.report.module(),
                seed: self.seed,
                orgami_version: env!("CARGO_PKG_VERSION"),
                core_version: orgami_core::VERSION,
            },
            events,
            flows,
            messages,
            topology: self.topology,
            report: out.report,
            verdicts: out.verdicts,
            artifacts: out.artifacts,
        })
    }

    /// Scenario cells on top of `base`; nodes without a cell get an empty one.
    fn cells(&self, base: Vec<Cell>) -> Result<Vec<Cell>, ModuleError> {
        let mut cells: BTreeMap<CellId, Cell> =
            base.into_iter().map(|c| (c.id().clone(), c)).collect();
        for node in self.topology.nodes() {
            cells
                .entry(node.clone())
                .or_insert_with(|| Cell::new(node.clone()));
        }
        for spec in &self.s.cells {
            let id = CellId::new(spec.id.as_str()).map_err(|e| setup(e.to_string()))?;
            let cell = cells
                .get_mut(&id)
                .ok_or_else(|| setup(format!("{id} is not a node")))?;
            for (n, role) in &spec.io {
                cell.bind_io(
                    Name::new(n.as_str()).map_err(|e| setup(e.to_string()))?,
                    *role,
                );
            }
            for (key, value) in &spec.resources {
                let (kind, name) = local_key(key).map_err(setup)?;
                let payload = match (kind, value) {
                    (Kind::A, Value::Text(src)) => {
                        Payload::from(parse_rule(src).map_err(|e| setup(format!("{key}: {e}")))?)
                    }
                    _ => Payload::Value(value.clone()),
                };
                let at = ResourceAddress::new(id.clone(), kind, name);
                cell.apply(Operation::Create, &at, Some(payload), Writer::System, 0)?;
            }
        }
        Ok(cells.into_values().collect())
    }

    fn network(&self) -> Result<Network, ModuleError> {
        let mut link = self.s.link.model();
        if let Some(f) = &self.s.faults {
            link.loss_prob = link.loss_prob.max(f.loss_prob);
        }
        Ok(Network::new(self.topology.clone(), link, self.seed)?)
    }

    fn switch_topologies(&self) -> Result<Vec<Topology>, ModuleError> {
        let Some(f) = &self.s.faults else {
            return Ok(Vec::new());
        };
        f.switch_topologies
            .iter()
            .map(|t| t.build(self.seed).map_err(setup))
            .collect()
    }

    /// Drivers and topology switches up to `horizon`.
    fn schedule(&self, world: &mut World, horizon: u64) -> Result<(), ModuleError> {
        for d in &self.s.drivers {
            let a = address(&d.address).map_err(setup)?;
            for (at, v) in d.samples() {
                world.drive(at, a.clone(), v.clone())?;
            }
        }
        let every = self.s.faults.as_ref().and_then(|f| f.switch_every);
        let alternates = self.switch_topologies()?;
        if let Some(every) = every.filter(|_| !alternates.is_empty()) {
            // The base topology takes part in the rotation.
            let cycle: Vec<&Topology> =
                std::iter::once(&self.topology).chain(&alternates).collect();
            let mut at = every;
            let mut i = 1;
            while at <= horizon {
                world.schedule_switch(at, cycle[i % cycle.len()].clone(), true);
                at += every;
                i += 1;
            }
        }
        Ok(())
    }

    fn world(&self, cells: Vec<Cell>) -> Result<World, ModuleError> {
        let mut world = World::new(cells, self.network()?)?;
        world.set_ttl(self.s.limits.ttl)?;
        Ok(world)
    }

    fn last_driver_tick(&self) -> u64 {
        self.s
            .drivers
            .iter()
            .filter_map(|d| d.samples().last().map(|(t, _)| t))
            .max()
            .unwrap_or(0)
    }

    fn flow(&self, f: &FlowSpec) -> Result<Outcome, ModuleError> {
        let mut world = self.world(self.cells(Vec::new())?)?;
        let limit = f.until.unwrap_or(self.s.limits.max_ticks);
        self.schedule(&mut world, limit.min(self.last_driver_tick().max(1)))?;
        world.run_until(Some(limit));
        let report = engine_report(&world);
        let mut verdicts = Vec::new();
        if f.until.is_none() {
            verdicts.push(Verdict::new(
                "quiescent",
                report.quiescent,
                format!("queue drained by tick {}", self.s.limits.max_ticks),
            ));
        }
        verdicts.extend(flow_verdicts(&world, &f.expect)?);
        Ok(Outcome::new(Some(world), Report::Engine(report), verdicts))
    }

    fn petri(&self, p: &PetriSpec) -> Result<Outcome, ModuleError> {
        let cells = self.cells(Vec::new())?;
        let net = sc_to_petri(&cells)?;
        let mut cfg = ExploreConfig {
            max_states: self.opts.max_states.unwrap_or(self.s.limits.max_states),
            ..ExploreConfig::default()
        };
        for (a, d) in &p.domains {
            let domain = match d.ty {
                DomainType::Bool => Domain::Bool,
                DomainType::Int => Domain::Int {
                    lo: d.lo.unwrap_or(0),
                    hi: d.hi.unwrap_or(0),
                },
            };
            cfg.domains.insert(address(a).map_err(setup)?, domain);
        }
        for (a, i) in &p.inputs {
            let spec = match i.mode {
                InputMode::Any => InputSpec::AnyOf,
                InputMode::Sequence => InputSpec::Sequence(i.values.clone()),
            };
            cfg.inputs.insert(address(a).map_err(setup)?, spec);
        }
        let graph = explore_states(&net, &cfg)?;
        let termination = graph.termination();
        let mut ranges = BTreeMap::new();
        let wanted: BTreeSet<&String> = p.ranges.iter().chain(p.expect.ranges.keys()).collect();
        for a in wanted {
            let at = address(a).map_err(setup)?;
            let place = net
                .place(&at)
                .ok_or_else(|| ModuleError::Petri(PetriError::UnknownPlace(at.clone())))?;
            ranges.insert(a.clone(), range_of(&graph, place));
        }
        let mut verdicts = Vec::new();
        if let Some(t) = &p.expect.termination {
            verdicts.push(Verdict::expect(
                "termination",
                t,
                &termination_tag(&termination).to_string(),
            ));
        }
        for (a, (lo, hi)) in &p.expect.ranges {
            let r = &ranges[a];
            verdicts.push(Verdict::expect(
                format!("range {a}"),
                &(Some(lo.clone()), Some(hi.clone()), true),
                &(r.min.clone(), r.max.clone(), r.complete),
            ));
        }
        let report = PetriReport {
            places: net.places.len(),
            transitions: net.transitions.len(),
            states: graph.markings.len(),
            edges: graph.edges.len(),
            truncated: graph.truncated,
            termination,
            ranges,
        };
        Ok(Outcome {
            world: None,
            report: Report::Petri(report),
            verdicts,
            artifacts: Artifacts::Petri {
                net: Box::new(net),
                graph,
            },
        })
    }

    fn deploy(&self, d: &DeploySpec) -> Result<Outcome, ModuleError> {
        let choreo = choreography(d)?;
        let mut target = DeployTarget::new(self.topology.clone());
        for (n, node) in &d.bindings {
            target.bindings.insert(
                Name::new(n.as_str()).map_err(|e| setup(e.to_string()))?,
                CellId::new(node.as_str()).map_err(|e| setup(e.to_string()))?,
            );
        }
        for (node, cap) in &d.capacities {
            target.capacities.insert(
                CellId::new(node.as_str()).map_err(|e| setup(e.to_string()))?,
                *cap,
            );
        }
        let graph = build_instantiation_graph(&choreo, &target)?;
        let instance = formulate_pbo(&graph, &target)?;
        let mapping = match d.solver {
            Solver::Pbo => solve_pbo(&instance)?,
            Solver::BruteForce => brute_force_mapping(&graph, &target)?,
        };
        let mut world = self.world(self.cells(hardware_cells(&choreo, &target)?)?)?;
        let entry = match &d.entry {
            Some(e) => CellId::new(e.as_str()).map_err(|e| setup(e.to_string()))?,
            None => self.topology.nodes()[0].clone(),
        };
        let horizon = self.s.limits.max_ticks;
        self.schedule(&mut world, (d.at + d.bound).max(self.last_driver_tick()))?;
        let mut verdicts = Vec::new();
        let placement = match deploy(
            d.strategy, &choreo, &mapping, &mut world, &entry, d.at, d.bound,
        ) {
            Ok(p) => p,
            Err(DeployError::DeploymentTimeout(p)) => p,
            Err(e) => return Err(e.into()),
        };
        verdicts.push(Verdict::new(
            "deployment complete",
            placement.is_complete(),
            format!(
                "{} of {} placed by t={}, {} deployer(s) left",
                placement.placed.len(),
                placement.expected,
                placement.finished_at,
                placement.leftover_deployers.len()
            ),
        ));
        let misplaced: Vec<String> = placement
            .placed
            .iter()
            .filter(|(k, n)| mapping.node_of(k) != Some(n))
            .map(|(k, n)| format!("{k} on {n}"))
            .collect();
        verdicts.push(Verdict::new(
            "placement follows mapping",
            misplaced.is_empty(),
            misplaced.join(", "),
        ));
        world.run_until(Some(horizon));
        if let Some(o) = d.expect.objective {
            verdicts.push(Verdict::expect("objective", &o, &mapping.objective));
        }
        for (k, node) in &d.expect.placement {
            let key: ResourceKey = k.parse().map_err(|_| setup(format!("bad key {k}")))?;
            verdicts.push(Verdict::expect(
                format!("placement {k}"),
                &Some(node.clone()),
                &mapping.node_of(&key).map(|c| c.to_string()),
            ));
        }
        verdicts.extend(write_verdicts(&world, &d.expect.writes)?);
        let report = DeployReport {
            solver: d.solver,
            variables: instance.variable_count(),
            mapping,
            placement,
            engine: engine_report(&world),
        };
        Ok(Outcome {
            world: Some(world),
            report: Report::Deploy(report),
            verdicts,
            artifacts: Artifacts::Deploy {
                opb: instance.to_opb(),
            },
        })
    }

    fn anc(&self, a: &AncSpec) -> Result<Outcome, ModuleError> {
        let width = a.signals[0].width();
        let c = &a.controller;
        let base = ControllerConfig::new(width, width);
        let hyper = Hyper {
            hidden: c.hidden.unwrap_or(base.hyper.hidden),
            rate: c.rate.unwrap_or(base.hyper.rate),
            epochs: c.epochs.unwrap_or(base.hyper.epochs),
            seed: c.seed.unwrap_or(self.seed),
        };
        let config = ControllerConfig {
            theta_select: c.theta_select.unwrap_or(base.theta_select),
            theta_learn: c.theta_learn.unwrap_or(base.theta_learn),
            buffer_size: c.buffer_size.unwrap_or(base.buffer_size),
            alpha: c.alpha.unwrap_or(base.alpha),
            hyper,
            max_behaviors: c.max_behaviors.or(base.max_behaviors),
            correction_tol: c.correction_tol.unwrap_or(base.correction_tol),
            ..base
        };
        let theta = config.theta_select;
        let mut ctl = Controller::new(config)?;
        let host = match &a.cell {
            Some(c) => CellId::new(c.as_str()).map_err(|e| setup(e.to_string()))?,
            None => self.topology.nodes()[0].clone(),
        };
        let mut world = self.world(self.cells(Vec::new())?)?;
        self.schedule(&mut world, self.last_driver_tick())?;

        let mut curve = Vec::new();
        let mut learned_for: BTreeMap<String, usize> = BTreeMap::new();
        let mut observed = Vec::new();
        let mut selections = Vec::new();
        let (mut hits, mut settled, mut max_mse) = (0usize, 0usize, 0.0f64);
        let mut step = 0;
        for presentation in 0..a.presentations {
            for signal in &a.signals {
                for t in 0..a.segment {
                    let obs = Observation {
                        context: signal.at(t),
                        next: signal.at(t + 1),
                    };
                    let out = ctl.step(&obs)?;
                    if let Some(id) = out.learned {
                        learned_for.entry(signal.name.clone()).or_insert(id);
                        let behavior = ctl
                            .library
                            .get(id)
                            .map(|e| {
                                serde_json::to_string(&e.behavior).expect("behaviors serialize")
                            })
                            .unwrap_or_default();
                        let target = ResourceAddress::new(
                            host.clone(),
                            Kind::L,
                            Name::new(format!("behavior_{id}"))
                                .map_err(|e| setup(e.to_string()))?,
                        );
                        world.inject(
                            step as u64,
                            Interaction {
                                target,
                                operation: Operation::Create,
                                payload: Some(Payload::Value(Value::Text(behavior))),
                            },
                        )?;
                    }
                    let selected = match out.mode {
                        Mode::Selected(id) => Some(id),
                        Mode::Collecting => None,
                    };
                    let mse = selected
                        .and_then(|id| out.step_errors.iter().find(|(b, _)| *b == id).map(|e| e.1));
                    if presentation + 1 == a.presentations && t >= a.settle {
                        settled += 1;
                        let expected = learned_for.get(&signal.name);
                        let ok = selected.is_some() && selected.as_ref() == expected;
                        if ok && mse.is_some_and(|m| m < theta) {
                            hits += 1;
                        }
                        max_mse = max_mse.max(mse.unwrap_or(f64::INFINITY));
                    }
                    observed.push(Sample {
                        context: obs.context,
                        next: obs.next,
                    });
                    selections.push(selected);
                    curve.push(CurvePoint {
                        step,
                        presentation,
                        signal: signal.name.clone(),
                        behavior: selected,
                        library_size: ctl.library.len(),
                        mse,
                        learned: out.learned,
                    });
                    step += 1;
                }
            }
        }
        world.run_until(None);
        let rules = mine_rules(&Dataset::new(observed), &selections, a)?;
        let accuracy = if settled == 0 {
            0.0
        } else {
            hits as f64 / settled as f64
        };
        let mut verdicts = Vec::new();
        if let Some(b) = a.expect.behaviors {
            verdicts.push(Verdict::expect("behaviors", &b, &ctl.library.len()));
            verdicts.push(Verdict::expect(
                "behaviors learnt",
                &b,
                &curve.iter().filter(|p| p.learned.is_some()).count(),
            ));
        }
        if let Some(acc) = a.expect.accuracy {
            verdicts.push(Verdict::new(
                "selection accuracy",
                accuracy >= acc,
                format!("{accuracy} against at least {acc}"),
            ));
        }
        let library = serde_json::to_value(&ctl.library.entries).expect("library serializes");
        let report = AncReport {
            behaviors: ctl.library.len(),
            learned_for,
            accuracy,
            max_selected_mse: max_mse,
            curve,
            rules,
        };
        Ok(Outcome {
            world: Some(world),
            report: Report::Anc(report),
            verdicts,
            artifacts: Artifacts::Anc { library },
        })
    }

    fn vote(&self, v: &VoteSpec) -> Result<Outcome, ModuleError> {
        let n = self.topology.len();
        let profile = self.profile(&v.profile, n, self.seed)?;
        let params = v.params.params();
        let faults = self.vote_faults()?;
        let (outcome, unresolved) = match vote(&profile, &self.topology, &params, &faults) {
            Ok(o) => (Some(o), None),
            Err(VoteError::Unresolved(u)) => (None, Some(*u)),
            Err(e) => return Err(e.into()),
        };
        let winner = outcome.as_ref().map(|o| o.winner);
        let (oracle_winner, oracle_margin) = oracle(&profile);
        let mut verdicts = vec![Verdict::new(
            "resolved",
            winner.is_some(),
            match &unresolved {
                Some(u) => format!("still ambiguous: {:?}", u.candidates),
                None => String::new(),
            },
        )];
        if let Some(w) = v.expect.winner {
            verdicts.push(Verdict::expect("winner", &Some(w), &winner));
        }
        if v.expect.oracle {
            verdicts.push(Verdict::expect(
                "oracle winner",
                &Some(oracle_winner),
                &winner,
            ));
        }
        if let (Some((lo, hi)), Some(o)) = (v.expect.iterations, &outcome) {
            let it = o.total_iterations();
            verdicts.push(Verdict::new(
                "iterations",
                (lo..=hi).contains(&it),
                format!("{it} against [{lo}, {hi}]"),
            ));
        }
        let mut compiled = None;
        if let Some(c) = &v.compiled {
            let choreo = compile_vp_to_sc(&self.topology, profile.candidates(), &params)?;
            let link = orgami_core::netsim::LinkModel::lossless(c.delay);
            let out = run_compiled(&choreo, &profile, link, c.period, self.seed)?;
            if v.expect.compiled_agrees {
                verdicts.push(Verdict::expect(
                    "compiled agrees",
                    &winner,
                    &out.agreed_winner(),
                ));
            }
            compiled = Some(out);
        }
        let (benchmark, median_iterations) = match &v.benchmark {
            Some(b) => self.benchmark(v, &b.topologies, b.seeds, &params)?,
            None => Default::default(),
        };
        let report = VoteReport {
            candidates: profile.candidates(),
            decision_makers: profile.decision_makers(),
            winner,
            oracle_winner,
            oracle_margin,
            outcome,
            unresolved,
            compiled,
            benchmark,
            median_iterations,
        };
        Ok(Outcome::new(None, Report::Voting(report), verdicts))
    }

    fn profile(
        &self,
        spec: &ProfileSpec,
        n: usize,
        seed: u64,
    ) -> Result<PreferenceProfile, ModuleError> {
        Ok(match spec {
            ProfileSpec::Random(r) => {
                PreferenceProfile::random(n, r.candidates, r.seed.unwrap_or(seed))?
            }
            ProfileSpec::Rows(rows) => PreferenceProfile::new(rows.clone())?,
            ProfileSpec::Csv(_) => {
                return Err(setup("profile file was not resolved while loading"))
            }
        })
    }

    fn vote_faults(&self) -> Result<FaultConfig, ModuleError> {
        let Some(f) = &self.s.faults else {
            return Ok(FaultConfig {
                seed: self.seed,
                ..FaultConfig::lossless()
            });
        };
        let alternates = self.switch_topologies()?;
        let switching = f
            .switch_every
            .filter(|_| !alternates.is_empty())
            .map(|every| Switching {
                every: every as usize,
                topologies: std::iter::once(self.topology.clone())
                    .chain(alternates)
                    .collect(),
            });
        Ok(FaultConfig {
            loss_prob: f.loss_prob,
            asymmetric: f.asymmetric,
            switching,
            seed: self.seed,
        })
    }

    /// One random profile per seed, shared by every topology of the sweep.
    /// A seeded random profile replaces the scenario profile; fixed rows are
    /// reused for every seed.
    fn benchmark(
        &self,
        v: &VoteSpec,
        topologies: &[TopologySpec],
        seeds: u64,
        params: &VoteParams,
    ) -> Result<(Vec<BenchmarkRow>, BTreeMap<String, f64>), ModuleError> {
        let labels = labels(topologies);
        let n = self.topology.len();
        let cases: Vec<(usize, u64)> = (0..topologies.len())
            .flat_map(|t| (0..seeds).map(move |s| (t, s)))
            .collect();
        let run_case = |&(t, s): &(usize, u64)| -> Result<BenchmarkRow, ModuleError> {
            let seed = self.seed.wrapping_add(s);
            let mut spec = topologies[t].clone();
            spec.seed = Some(spec.seed.unwrap_or(0).wrapping_add(seed));
            let topology = spec.build(seed).map_err(setup)?;
            let profile = self.profile(&v.profile, n, seed)?;
            let faults = FaultConfig {
                seed,
                ..FaultConfig::lossless()
            };
            let (iterations, winner) = match vote(&profile, &topology, params, &faults) {
                Ok(o) => (o.total_iterations(), o.winner),
                Err(VoteError::Unresolved(u)) => (u.rounds.iter().map(|r| r.iterations).sum(), 0),
                Err(e) => return Err(e.into()),
            };
            Ok(BenchmarkRow {
                topology: labels[t].clone(),
                seed,
                iterations,
                winner,
            })
        };
        let jobs = self.opts.jobs.max(1).min(cases.len().max(1));
        let rows: Vec<BenchmarkRow> = if jobs == 1 {
            cases.iter().map(run_case).collect::<Result<_, _>>()?
        } else {
            let chunk = cases.len().div_ceil(jobs);
            let parts: Vec<Result<Vec<BenchmarkRow>, ModuleError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = cases
                    .chunks(chunk)
                    .map(|part| scope.spawn(|| part.iter().map(run_case).collect()))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("benchmark worker panicked"))
                    .collect()
            });
            let mut rows = Vec::with_capacity(cases.len());
            for p in parts {
                rows.extend(p?);
            }
            rows
        };
        let mut medians = BTreeMap::new();
        for label in &labels {
            let mut its: Vec<usize> = rows
                .iter()
                .filter(|r| &r.topology == label)
                .map(|r| r.iterations)
                .collect();
            its.sort_unstable();
            medians.insert(label.clone(), median(&its));
        }
        Ok((rows, medians))
    }
}

fn median(sorted: &[usize]) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => sorted[n / 2] as f64,
        n => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
    }
}

/// Benchmark labels: the topology kind, suffixed with its position when a
/// kind occurs twice.
fn labels(topologies: &[TopologySpec]) -> Vec<String> {
    let kind = |k: TopologyKind| match k {
        TopologyKind::Ring => "ring",
        TopologyKind::Star => "star",
        TopologyKind::Grid => "grid",
        TopologyKind::SmallWorld => "small_world",
        TopologyKind::Custom => "custom",
    };
    topologies
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let repeated = topologies.iter().filter(|u| u.kind == t.kind).count() > 1;
            if repeated {
                format!("{}_{i}", kind(t.kind))
            } else {
                kind(t.kind).to_string()
            }
        })
        .collect()
}

/// Argmax of the column means (1-based, first on ties) and its margin over
/// the runner-up.
fn oracle(p: &PreferenceProfile) -> (usize, f64) {
    let means = p.column_means();
    let mut best = 0;
    for (c, m) in means.iter().enumerate() {
        if *m > means[best] {
            best = c;
        }
    }
    let runner_up = means
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != best)
        .map(|(_, m)| *m)
        .fold(f64::NEG_INFINITY, f64::max);
    (best + 1, means[best] - runner_up)
}

fn choreography(d: &DeploySpec) -> Result<Choreography, ModuleError> {
    let mut resources = Vec::new();
    for decl in &d.choreography {
        let key: ResourceKey = decl
            .key
            .parse()
            .map_err(|_| setup(format!("bad resource key {}", decl.key)))?;
        let initial = match (&decl.rule, &decl.initial) {
            (Some(src), _) => Some(Payload::from(
                parse_rule(src).map_err(|e| setup(format!("{}: {e}", decl.key)))?,
            )),
            (None, v) => v.clone().map(Payload::Value),
        };
        resources.push(ResourceDecl {
            key,
            initial,
            io: decl.io,
        });
    }
    Ok(Choreography { resources })
}

fn termination_tag(t: &Termination) -> &'static str {
    match t {
        Termination::Terminates => "terminates",
        Termination::MayNotTerminate { .. } => "may_not_terminate",
        Termination::Unknown => "unknown",
    }
}

fn range_of(graph: &StateGraph, place: usize) -> RangeReport {
    let mut min: Option<Value> = None;
    let mut max: Option<Value> = None;
    for m in &graph.markings {
        if let Token::Value(v) = &m.tokens[place] {
            if min.as_ref().is_none_or(|x| v < x) {
                min = Some(v.clone());
            }
            if max.as_ref().is_none_or(|x| v > x) {
                max = Some(v.clone());
            }
        }
    }
    RangeReport {
        min,
        max,
        complete: !graph.truncated,
    }
}

fn engine_report(world: &World) -> EngineReport {
    let log = world.network().log();
    let mut writes: BTreeMap<String, Vec<Value>> = BTreeMap::new();
    for e in world.events() {
        if let Some(Payload::Value(v)) = &e.value {
            writes
                .entry(e.address.to_string())
                .or_default()
                .push(v.clone());
        }
    }
    EngineReport {
        finished_at: world.now(),
        quiescent: world.is_idle(),
        events: world.events().len(),
        flows: world.flows().len(),
        messages: log.len(),
        dropped: log.iter().filter(|m| m.delivered.is_none()).count(),
        writes,
    }
}

/// Values written to `at` by create and update events, in order.
pub fn written_values(world: &World, at: &ResourceAddress) -> Vec<Value> {
    world
        .events()
        .iter()
        .filter(|e| &e.address == at && e.operation != Operation::Delete)
        .filter_map(|e| e.value.as_ref().and_then(Payload::as_value).cloned())
        .collect()
}

fn write_verdicts(
    world: &World,
    writes: &BTreeMap<String, Vec<Value>>,
) -> Result<Vec<Verdict>, ModuleError> {
    writes
        .iter()
        .map(|(a, expected)| {
            let at = address(a).map_err(setup)?;
            Ok(Verdict::expect(
                format!("writes {a}"),
                expected,
                &written_values(world, &at),
            ))
        })
        .collect()
}

fn flow_verdicts(world: &World, e: &FlowExpect) -> Result<Vec<Verdict>, ModuleError> {
    let mut out = write_verdicts(world, &e.writes)?;
    for (list, want) in [(&e.present, true), (&e.absent, false)] {
        for a in list {
            let at = address(a).map_err(setup)?;
            let found = world.read(&at).is_some();
            let check = if want { "present" } else { "absent" };
            out.push(Verdict::expect(format!("{check} {a}"), &want, &found));
        }
    }
    if let Some(q) = e.quiet_after {
        let busy: Vec<String> = world
            .flows()
            .iter()
            .filter(|f| f.trigger.time >= q && !f.steps.is_empty())
            .map(|f| format!("flow {} at t={}", f.id, f.trigger.time))
            .collect();
        let late = world.flows().iter().filter(|f| f.trigger.time >= q).count();
        out.push(Verdict::new(
            format!("quiet after {q}"),
            busy.is_empty() && late > 0,
            if late == 0 {
                "no flow was triggered that late".to_string()
            } else {
                busy.join(", ")
            },
        ));
    }
    Ok(out)
}

/// Association rules over discretized observations, each transaction
/// extended with the behavior selected at that step.
fn mine_rules(
    ds: &Dataset,
    selections: &[Option<usize>],
    a: &AncSpec,
) -> Result<Vec<String>, ModuleError> {
    let (cw, _) = ds.widths();
    let column = |c: usize| {
        if c < cw {
            format!("c{c}")
        } else {
            format!("n{}", c - cw)
        }
    };
    let transactions: Vec<BTreeSet<String>> = discretize(ds, a.rules.bins)?
        .into_iter()
        .zip(selections)
        .map(|(items, sel)| {
            let mut t: BTreeSet<String> = items
                .into_iter()
                .map(|i| format!("{}=b{}", column(i.column), i.bin))
                .collect();
            if let Some(b) = sel {
                t.insert(format!("behavior={b}"));
            }
            t
        })
        .collect();
    let rules = extract_rules_apriori(&transactions, a.rules.min_support, a.rules.min_confidence)?;
    Ok(rules.iter().map(ToString::to_string).collect())
}
