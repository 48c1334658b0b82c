mod support;

use std::collections::BTreeMap;

use orgami_core::deploy::{
    brute_force_mapping, build_instantiation_graph, compose_dna, deploy, formulate_pbo,
    hardware_cells, solve_pbo, Choreography, DeployError, DeployTarget, InstantiationGraph,
    Mapping, ResourceDecl, Strategy, DEPLOYER_NAME, DNA_NAME,
};
use orgami_core::engine::World;
use orgami_core::netsim::{LinkModel, Network, Topology};
use orgami_core::rule::Post;
use orgami_core::{parse_rule, Cell, CellId, IoRole, Kind, Name, Payload, ResourceAddress, Value};
use proptest::prelude::*;
use support::deploy_cases::{key, random_inert_choreo, random_pbo_case, ring};

fn id(s: &str) -> CellId {
    CellId::new(s).unwrap()
}

fn nm(s: &str) -> Name {
    Name::new(s).unwrap()
}

fn decl(k: &str, initial: Option<Payload>, io: Option<IoRole>) -> ResourceDecl {
    ResourceDecl {
        key: key(k),
        initial,
        io,
    }
}

fn rule(src: &str) -> Option<Payload> {
    Some(Payload::from(parse_rule(src).unwrap()))
}

fn int(i: i64) -> Option<Payload> {
    Some(Payload::Value(Value::Int(i)))
}

fn line(names: &[&str]) -> Topology {
    let edges: Vec<(usize, usize)> = (1..names.len()).map(|i| (i - 1, i)).collect();
    Topology::custom(names.iter().map(|n| id(n)).collect(), &edges).unwrap()
}

/// The difference choreography without any placement.
fn memory_flow_choreo() -> Choreography {
    Choreography {
        resources: vec![
            decl("S/p0", int(100), Some(IoRole::Input)),
            decl("S/p1", int(0), Some(IoRole::Output)),
            decl("L/m", int(0), None),
            decl(
                "A/t0",
                rule("IF exists(prev(S/p0)) THEN UPDATE S/p1 = L/m - S/p0"),
                None,
            ),
            decl("A/t1", rule("ON S/p0 IF true THEN UPDATE L/m = S/p0"), None),
            decl(
                "A/t2",
                rule("IF S/p1 == 50 THEN DELETE A/t0; DELETE A/t1; DELETE A/t2"),
                None,
            ),
        ],
    }
}

fn memory_flow_target() -> DeployTarget {
    let mut t = DeployTarget::new(line(&["nA", "nB"]));
    t.bindings.insert(nm("p0"), id("nA"));
    t.bindings.insert(nm("p1"), id("nB"));
    t
}

fn solve(g: &InstantiationGraph, t: &DeployTarget) -> Result<Mapping, DeployError> {
    solve_pbo(&formulate_pbo(g, t)?)
}

#[test]
fn memory_flow_instantiation_graph() {
    let g = build_instantiation_graph(&memory_flow_choreo(), &memory_flow_target()).unwrap();
    let names: Vec<String> = g.vertices.iter().map(|k| k.to_string()).collect();
    assert_eq!(names, ["L/m", "S/p0", "S/p1", "A/t0", "A/t1", "A/t2"]);
    let ix = |k: &str| g.index(&key(k)).unwrap();
    assert_eq!(g.pins.get(&ix("S/p0")), Some(&id("nA")));
    assert_eq!(g.pins.get(&ix("S/p1")), Some(&id("nB")));
    assert_eq!(g.pins.len(), 2);
    let w = |a: &str, b: &str| {
        let (a, b) = (ix(a), ix(b));
        g.weights.get(&(a.min(b), a.max(b))).copied().unwrap_or(0)
    };
    assert_eq!(w("A/t0", "S/p1"), 1);
    assert_eq!(w("A/t1", "L/m"), 1);
    assert_eq!(w("A/t2", "A/t0"), 1);
    assert_eq!(w("A/t2", "A/t1"), 1);
    assert_eq!(g.weights.len(), 4);

    let m = solve(&g, &memory_flow_target()).unwrap();
    assert_eq!(m.node_of(&key("A/t0")), Some(&id("nA")));
    assert_eq!(m.node_of(&key("A/t1")), Some(&id("nA")));
    assert_eq!(m.node_of(&key("L/m")), Some(&id("nA")));
    assert_eq!(m.node_of(&key("A/t2")), Some(&id("nB")));
    assert_eq!(m.objective, 3);
}

#[test]
fn no_rules_gives_only_pinned_vertices() {
    let c = Choreography {
        resources: vec![decl("S/p0", int(1), None), decl("S/p1", int(2), None)],
    };
    let g = build_instantiation_graph(&c, &memory_flow_target()).unwrap();
    assert_eq!(g.vertices.len(), 2);
    assert_eq!(g.pins.len(), 2);
    assert!(g.weights.is_empty());
}

#[test]
fn missing_binding_is_rejected() {
    let mut t = memory_flow_target();
    t.bindings.remove(&nm("p1"));
    assert_eq!(
        build_instantiation_graph(&memory_flow_choreo(), &t),
        Err(DeployError::UnboundSensor(nm("p1")))
    );
}

#[test]
fn undeclared_reference_is_rejected() {
    let c = Choreography {
        resources: vec![decl("A/t", rule("IF true THEN UPDATE L/ghost = 1"), None)],
    };
    assert_eq!(
        build_instantiation_graph(&c, &memory_flow_target()),
        Err(DeployError::UnknownResource(key("L/ghost")))
    );
}

#[test]
fn located_reference_is_rejected() {
    let c = Choreography {
        resources: vec![
            decl("L/x", int(0), None),
            decl("A/t", rule("IF true THEN UPDATE nB/L/x = 1"), None),
        ],
    };
    assert!(matches!(
        build_instantiation_graph(&c, &memory_flow_target()),
        Err(DeployError::LocatedReference(_))
    ));
}

#[test]
fn sensors_on_two_nodes_cannot_share_a_rule() {
    let c = Choreography {
        resources: vec![
            decl("S/p0", int(1), None),
            decl("S/p1", int(2), None),
            decl("L/x", int(0), None),
            decl("A/t", rule("IF S/p0 < S/p1 THEN UPDATE L/x = 1"), None),
        ],
    };
    let g = build_instantiation_graph(&c, &memory_flow_target()).unwrap();
    assert!(matches!(
        solve(&g, &memory_flow_target()),
        Err(DeployError::ColocationConflict(_))
    ));
}

#[test]
fn single_node_costs_nothing() {
    let mut t = DeployTarget::new(line(&["solo"]));
    t.bindings.insert(nm("p0"), id("solo"));
    t.bindings.insert(nm("p1"), id("solo"));
    let g = build_instantiation_graph(&memory_flow_choreo(), &t).unwrap();
    let m = solve(&g, &t).unwrap();
    assert_eq!(m.objective, 0);
    assert!(m.assignment.values().all(|n| *n == id("solo")));
    assert_eq!(brute_force_mapping(&g, &t).unwrap(), m);
}

#[test]
fn forced_pair_on_adjacent_nodes() {
    let c = Choreography {
        resources: vec![decl("S/p0", int(1), None), decl("S/p1", int(2), None)],
    };
    let mut g = build_instantiation_graph(&c, &memory_flow_target()).unwrap();
    g.set_weight(0, 1, 3);
    let inst = formulate_pbo(&g, &memory_flow_target()).unwrap();
    assert_eq!(inst.variable_count(), 0);
    assert_eq!(solve_pbo(&inst).unwrap().objective, 3);
}

#[test]
fn variable_count_is_free_times_nodes() {
    let t = {
        let mut t = DeployTarget::new(line(&["nA", "nB", "nC"]));
        t.bindings.insert(nm("p0"), id("nA"));
        t.bindings.insert(nm("p1"), id("nC"));
        t
    };
    let g = build_instantiation_graph(&memory_flow_choreo(), &t).unwrap();
    let inst = formulate_pbo(&g, &t).unwrap();
    assert_eq!(inst.free.len(), 4);
    assert_eq!(inst.variable_count(), 12);
}

#[test]
fn agent_between_line_ends() {
    let mut t = DeployTarget::new(line(&["nA", "nB", "nC"]));
    t.bindings.insert(nm("p0"), id("nA"));
    t.bindings.insert(nm("p1"), id("nC"));
    let mut g = InstantiationGraph {
        vertices: vec![key("S/p0"), key("S/p1"), key("A/agent")],
        pins: BTreeMap::from([(0, id("nA")), (1, id("nC"))]),
        weights: BTreeMap::new(),
        colocated: Default::default(),
    };
    g.set_weight(2, 0, 1);
    g.set_weight(2, 1, 1);
    // By hand: nA costs 0 + 2, nB costs 1 + 1, nC costs 2 + 0.
    let m = solve(&g, &t).unwrap();
    assert_eq!(m.objective, 2);
    assert_eq!(m.node_of(&key("A/agent")), Some(&id("nA")));
    assert_eq!(brute_force_mapping(&g, &t).unwrap(), m);
}

#[test]
fn brute_force_refuses_huge_spaces() {
    let t = DeployTarget::new(ring(5));
    let vertices = (0..11).map(|i| key(&format!("L/r{i:02}"))).collect();
    let g = InstantiationGraph {
        vertices,
        pins: BTreeMap::new(),
        weights: BTreeMap::new(),
        colocated: Default::default(),
    };
    assert!(matches!(
        brute_force_mapping(&g, &t),
        Err(DeployError::TooLarge(_))
    ));
}

#[test]
fn capacity_can_make_placement_infeasible() {
    let mut t = memory_flow_target();
    t.capacities.insert(id("nA"), 2);
    t.capacities.insert(id("nB"), 2);
    let g = build_instantiation_graph(&memory_flow_choreo(), &t).unwrap();
    assert_eq!(solve(&g, &t), Err(DeployError::Infeasible));
    assert_eq!(brute_force_mapping(&g, &t), Err(DeployError::Infeasible));
}

#[test]
fn capacity_moves_resources_away() {
    let mut t = memory_flow_target();
    t.capacities.insert(id("nA"), 4);
    let g = build_instantiation_graph(&memory_flow_choreo(), &t).unwrap();
    let m = solve(&g, &t).unwrap();
    assert_eq!(m, brute_force_mapping(&g, &t).unwrap());
    assert_eq!(m.assignment.values().filter(|n| **n == id("nA")).count(), 4);
}

#[test]
fn opb_export_lists_every_constraint() {
    let t = {
        let mut t = DeployTarget::new(line(&["nA", "nB", "nC"]));
        t.bindings.insert(nm("p0"), id("nA"));
        t.bindings.insert(nm("p1"), id("nC"));
        t.capacities.insert(id("nB"), 3);
        t
    };
    let g = build_instantiation_graph(&memory_flow_choreo(), &t).unwrap();
    let opb = formulate_pbo(&g, &t).unwrap().to_opb();
    let header = opb.lines().next().unwrap();
    let declared: usize = header.rsplit("= ").next().unwrap().trim().parse().unwrap();
    let body: Vec<&str> = opb.lines().filter(|l| !l.starts_with('*')).collect();
    assert!(body[0].starts_with("min:"));
    assert_eq!(body.len() - 1, declared);
    assert!(body.iter().all(|l| l.ends_with(';')));
    assert!(body.iter().any(|l| l.ends_with("= 1 ;")));
}

#[test]
fn dna_nests_one_deployer_per_node() {
    let target = memory_flow_target();
    let g = build_instantiation_graph(&memory_flow_choreo(), &target).unwrap();
    let m = solve(&g, &target).unwrap();
    let dna = compose_dna(&memory_flow_choreo(), &m).unwrap();
    let children: Vec<_> = dna
        .actions
        .iter()
        .filter_map(|a| match &a.post {
            Some(Post::Rule(r)) => Some((a.target.clone(), r)),
            _ => None,
        })
        .collect();
    assert_eq!(children.len(), 2);
    assert!(children
        .iter()
        .all(|(t, _)| t.name.as_str() == DEPLOYER_NAME));
    // nA gets m, t0, t1; nB gets t2. Each deployer also deletes itself.
    assert_eq!(children[0].1.actions.len(), 4);
    assert_eq!(children[1].1.actions.len(), 2);
    assert_eq!(dna.actions.last().unwrap().target.name.as_str(), DNA_NAME);
    parse_rule(&dna.to_string()).unwrap();
}

#[test]
fn empty_dna_only_deletes_itself() {
    let m = Mapping {
        assignment: BTreeMap::new(),
        objective: 0,
    };
    let dna = compose_dna(&Choreography::default(), &m).unwrap();
    assert_eq!(dna.actions.len(), 1);
    assert_eq!(dna.to_string(), "ON A/dna IF true THEN DELETE self/A/dna");
}

fn world_for(choreo: &Choreography, target: &DeployTarget, link: LinkModel) -> World {
    let cells = hardware_cells(choreo, target).unwrap();
    let net = Network::new(target.topology.clone(), link, 7).unwrap();
    World::new(cells, net).unwrap()
}

fn state(world: &World) -> BTreeMap<ResourceAddress, Payload> {
    world
        .cells()
        .flat_map(|c| {
            c.resources()
                .map(|r| (r.address.clone(), r.payload.clone()))
        })
        .collect()
}

fn ring_case(seed: u64) -> (Choreography, DeployTarget, Mapping) {
    let topology = ring(4);
    let (choreo, bindings) = random_inert_choreo(seed, topology.nodes());
    let mut target = DeployTarget::new(topology);
    target.bindings = bindings;
    let g = build_instantiation_graph(&choreo, &target).unwrap();
    let m = solve(&g, &target).unwrap();
    (choreo, target, m)
}

fn run(
    strategy: Strategy,
    seed: u64,
) -> (
    World,
    Result<orgami_core::deploy::PlacementReport, DeployError>,
) {
    let (choreo, target, m) = ring_case(seed);
    let mut w = world_for(&choreo, &target, LinkModel::lossless(1));
    let r = deploy(strategy, &choreo, &m, &mut w, &id("n0"), 0, 100);
    (w, r)
}

#[test]
fn memory_flow_deploys_and_runs() {
    let choreo = memory_flow_choreo();
    let target = memory_flow_target();
    let g = build_instantiation_graph(&choreo, &target).unwrap();
    let m = solve(&g, &target).unwrap();
    let mut w = world_for(&choreo, &target, LinkModel::lossless(1));
    let report = deploy(Strategy::Dna, &choreo, &m, &mut w, &id("nB"), 0, 50).unwrap();
    assert_eq!(report.placed.len(), 4);
    assert!(w.read(&ResourceAddress::parse("nA/A/t0")).is_some());
    let t0 = w
        .read(&ResourceAddress::parse("nA/A/t0"))
        .unwrap()
        .as_rule()
        .unwrap();
    assert_eq!(
        t0.to_string(),
        "IF exists(prev(S/p0)) THEN UPDATE nB/S/p1 = (L/m - S/p0)"
    );
    for (i, v) in [93, 50, 0].iter().enumerate() {
        w.drive(
            100 + 10 * i as u64,
            ResourceAddress::parse("nA/S/p0"),
            Value::Int(*v),
        )
        .unwrap();
    }
    w.run_until(None);
    let p1: Vec<Value> = w
        .events()
        .iter()
        .filter(|e| e.address == ResourceAddress::parse("nB/S/p1"))
        .filter_map(|e| e.value.as_ref()?.as_value().cloned())
        .collect();
    assert_eq!(p1, [Value::Int(-93), Value::Int(43), Value::Int(50)]);
}

#[test]
fn direct_and_dna_place_identically() {
    for seed in 0..10 {
        let (direct, a) = run(Strategy::Direct, seed);
        let (dna, b) = run(Strategy::Dna, seed);
        assert_eq!(a.unwrap().placed, b.unwrap().placed, "seed {seed}");
        assert_eq!(state(&direct), state(&dna), "seed {seed}");
    }
}

#[test]
fn pins_hold_under_both_strategies() {
    let (choreo, target, m) = ring_case(3);
    for strategy in [Strategy::Direct, Strategy::Dna] {
        let mut w = world_for(&choreo, &target, LinkModel::lossless(1));
        deploy(strategy, &choreo, &m, &mut w, &id("n2"), 0, 100).unwrap();
        for (name, node) in &target.bindings {
            assert!(w.cell(node).unwrap().get(Kind::S, name).is_some());
        }
    }
}

#[test]
fn replaying_dna_changes_nothing() {
    let (choreo, target, m) = ring_case(5);
    let mut w = world_for(&choreo, &target, LinkModel::lossless(1));
    deploy(Strategy::Dna, &choreo, &m, &mut w, &id("n0"), 0, 100).unwrap();
    let before = state(&w);
    let flows_before = w.flows().len();
    deploy(Strategy::Dna, &choreo, &m, &mut w, &id("n0"), 200, 100).unwrap();
    assert_eq!(state(&w), before);
    let conflicts = w.flows()[flows_before..]
        .iter()
        .flat_map(|f| f.failures.iter())
        .filter(|f| f.message.contains("already exists"))
        .count();
    let deployable = choreo
        .resources
        .iter()
        .filter(|d| d.key.kind != Kind::S && d.initial.is_some())
        .count();
    assert_eq!(conflicts, deployable);
}

#[test]
fn total_loss_times_out_with_only_the_entry_cell() {
    let (choreo, target, m) = (0..)
        .map(ring_case)
        .find(|(_, _, m)| {
            m.assignment
                .values()
                .collect::<std::collections::BTreeSet<_>>()
                .len()
                > 1
        })
        .unwrap();
    let link = LinkModel {
        loss_prob: 1.0,
        ..LinkModel::lossless(1)
    };
    let mut w = world_for(&choreo, &target, link);
    let err = deploy(Strategy::Dna, &choreo, &m, &mut w, &id("n0"), 0, 100).unwrap_err();
    let DeployError::DeploymentTimeout(report) = err else {
        panic!("expected a timeout, got {err}");
    };
    assert!(!report.missing.is_empty());
    assert!(report.placed.values().all(|n| *n == id("n0")));
    assert!(report.leftover_deployers.is_empty());
}

#[test]
fn direct_on_single_node_is_immediate() {
    let mut target = DeployTarget::new(line(&["solo"]));
    target.bindings.insert(nm("p0"), id("solo"));
    target.bindings.insert(nm("p1"), id("solo"));
    let g = build_instantiation_graph(&memory_flow_choreo(), &target).unwrap();
    let m = solve(&g, &target).unwrap();
    let mut w = world_for(&memory_flow_choreo(), &target, LinkModel::lossless(1));
    let report = deploy(
        Strategy::Direct,
        &memory_flow_choreo(),
        &m,
        &mut w,
        &id("solo"),
        5,
        0,
    )
    .unwrap();
    assert_eq!(report.finished_at, 5);
    assert_eq!(report.placed.len(), 4);
}

#[test]
fn nested_rules_are_localized_for_their_own_node() {
    let choreo = Choreography {
        resources: vec![
            decl("S/p0", int(0), Some(IoRole::Input)),
            decl("S/p1", int(0), Some(IoRole::Output)),
            decl("L/acc", int(0), None),
            decl("A/w", None, None),
            decl(
                "A/boot",
                rule("ON S/p0 IF S/p0 > 0 THEN CREATE A/w = { ON S/p1 IF true THEN UPDATE L/acc = L/acc + 1 }"),
                None,
            ),
        ],
    };
    let target = memory_flow_target();
    let g = build_instantiation_graph(&choreo, &target).unwrap();
    let m = solve(&g, &target).unwrap();
    assert_eq!(m.node_of(&key("A/boot")), Some(&id("nA")));
    assert_eq!(m.node_of(&key("A/w")), Some(&id("nB")));
    let mut w = world_for(&choreo, &target, LinkModel::lossless(1));
    deploy(Strategy::Direct, &choreo, &m, &mut w, &id("nA"), 0, 10).unwrap();
    assert_eq!(m.node_of(&key("L/acc")), Some(&id("nB")));
    let boot = w
        .read(&ResourceAddress::parse("nA/A/boot"))
        .unwrap()
        .as_rule()
        .unwrap();
    assert_eq!(
        boot.to_string(),
        "ON S/p0 IF (S/p0 > 0) THEN CREATE nB/A/w = { ON S/p1 IF true THEN UPDATE self/L/acc = (L/acc + 1) }"
    );
}

#[test]
fn reserved_names_are_rejected() {
    let c = Choreography {
        resources: vec![decl("A/dna", rule("IF true THEN DELETE A/dna"), None)],
    };
    assert!(matches!(
        build_instantiation_graph(&c, &memory_flow_target()),
        Err(DeployError::ReservedName(_))
    ));
}

#[test]
fn hardware_cells_hold_only_sensors() {
    let cells: Vec<Cell> = hardware_cells(&memory_flow_choreo(), &memory_flow_target()).unwrap();
    assert_eq!(cells.len(), 2);
    assert_eq!(cells[0].resources().count(), 1);
    assert_eq!(cells[1].io_role(&nm("p1")), Some(IoRole::Output));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn branch_and_bound_matches_enumeration(seed in any::<u64>()) {
        let (g, t) = random_pbo_case(seed);
        prop_assert_eq!(solve(&g, &t), brute_force_mapping(&g, &t));
    }

    #[test]
    fn adding_weight_never_lowers_the_optimum(seed in any::<u64>(), a in 0usize..9, b in 0usize..9, w in 1u64..5) {
        let (mut g, t) = random_pbo_case(seed);
        let n = g.vertices.len();
        prop_assume!(n >= 2);
        let Ok(before) = solve(&g, &t) else { return Ok(()) };
        let (a, b) = (a % n, b % n);
        prop_assume!(a != b);
        let e = (a.min(b), a.max(b));
        let old = g.weights.get(&e).copied().unwrap_or(0);
        g.set_weight(a, b, old + w);
        let after = solve(&g, &t).unwrap();
        prop_assert!(after.objective >= before.objective);
    }

    #[test]
    fn solutions_are_feasible(seed in any::<u64>()) {
        let (g, t) = random_pbo_case(seed);
        let inst = formulate_pbo(&g, &t).unwrap();
        if let Ok(m) = solve_pbo(&inst) {
            let at: Vec<usize> = inst
                .resources
                .iter()
                .map(|k| t.topology.index_of(&m.assignment[k]).unwrap())
                .collect();
            prop_assert!(inst.is_feasible(&at));
            prop_assert_eq!(inst.objective(&at), m.objective);
        }
    }
}
