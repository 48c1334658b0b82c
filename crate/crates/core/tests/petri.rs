mod support;

use std::collections::{BTreeMap, BTreeSet};

use orgami_core::petri::{
    check_range, check_termination, explore_states, sc_to_petri, Domain, ExploreConfig, InputSpec,
    PetriError, Termination, Token,
};
use orgami_core::{
    parse_rule, Cell, CellId, IoRole, Operation, Payload, ResourceAddress, Value, Writer,
};
use proptest::prelude::*;
use support::choreo::{random_choreo, reachable_by_engine};

fn id(s: &str) -> CellId {
    CellId::new(s).unwrap()
}

fn addr(s: &str) -> ResourceAddress {
    ResourceAddress::parse(s)
}

fn put(cell: &mut Cell, a: &str, payload: Payload) {
    cell.apply(
        Operation::Create,
        &addr(a),
        Some(payload),
        Writer::System,
        0,
    )
    .unwrap();
}

fn rule(src: &str) -> Payload {
    Payload::from(parse_rule(src).unwrap())
}

fn int(i: i64) -> Payload {
    Payload::Value(Value::Int(i))
}

/// Difference choreography with the memory kept in `L/m`, starting from a
/// first reading of `first`.
fn memory_flow_cells(first: i64) -> Vec<Cell> {
    let mut a = Cell::new(id("nA"));
    a.bind_io("p0".parse().unwrap(), IoRole::Input);
    put(&mut a, "nA/S/p0", int(first));
    put(&mut a, "nA/L/m", int(first));
    put(
        &mut a,
        "nA/A/t0",
        rule("IF true THEN UPDATE nB/S/p1 = L/m - S/p0"),
    );
    put(
        &mut a,
        "nA/A/t1",
        rule("IF true THEN UPDATE self/L/m = S/p0"),
    );
    let mut b = Cell::new(id("nB"));
    b.bind_io("p1".parse().unwrap(), IoRole::Output);
    put(&mut b, "nB/S/p1", int(0));
    put(
        &mut b,
        "nB/A/t2",
        rule("IF S/p1 == 50 THEN DELETE nA/A/t0; DELETE nA/A/t1; DELETE self/A/t2"),
    );
    vec![a, b]
}

fn memory_flow_config(inputs: InputSpec) -> ExploreConfig {
    ExploreConfig {
        domains: BTreeMap::from([
            (addr("nA/S/p0"), Domain::Int { lo: 0, hi: 100 }),
            (addr("nA/L/m"), Domain::Int { lo: 0, hi: 100 }),
            (addr("nB/S/p1"), Domain::Int { lo: -100, hi: 100 }),
        ]),
        inputs: BTreeMap::from([(addr("nA/S/p0"), inputs)]),
        ..ExploreConfig::default()
    }
}

#[test]
fn memory_flow_translation_shape() {
    let net = sc_to_petri(&memory_flow_cells(100)).unwrap();
    let names: Vec<String> = net.places.iter().map(|p| p.address.to_string()).collect();
    assert_eq!(
        names,
        ["nA/L/m", "nA/S/p0", "nA/A/t0", "nA/A/t1", "nB/S/p1", "nB/A/t2"]
    );
    assert_eq!(net.transitions.len(), 3);
    assert_eq!(net.templates.len(), 3);
    assert!(net.initial.iter().all(|t| *t != Token::Absent));
    let written: BTreeSet<String> = net
        .written_places()
        .into_iter()
        .map(|p| net.places[p].address.to_string())
        .collect();
    assert_eq!(written, BTreeSet::from(["nA/L/m".into(), "nB/S/p1".into()]));
    assert_eq!(net.places[1].io, Some(IoRole::Input));
    assert_eq!(net.places[4].io, Some(IoRole::Output));
}

#[test]
fn empty_choreography_gives_empty_net() {
    let net = sc_to_petri(&[] as &[Cell]).unwrap();
    assert!(net.places.is_empty() && net.transitions.is_empty());
    let g = explore_states(&net, &ExploreConfig::default()).unwrap();
    assert_eq!(g.markings.len(), 1);
    assert_eq!(g.termination(), Termination::Terminates);
}

#[test]
fn never_enabled_rule_has_one_state() {
    let mut c = Cell::new(id("n0"));
    put(&mut c, "n0/L/x", int(1));
    put(&mut c, "n0/A/r", rule("IF false THEN UPDATE self/L/x = 2"));
    let net = sc_to_petri(&[c]).unwrap();
    let cfg = ExploreConfig {
        domains: BTreeMap::from([(addr("n0/L/x"), Domain::Int { lo: 0, hi: 3 })]),
        ..ExploreConfig::default()
    };
    let g = explore_states(&net, &cfg).unwrap();
    assert_eq!(g.markings.len(), 1);
    assert!(g.edges.is_empty());
    assert_eq!(g.termination(), Termination::Terminates);
}

#[test]
fn memory_flow_sequence_reaches_teardown_and_terminates() {
    let net = sc_to_petri(&memory_flow_cells(100)).unwrap();
    let cfg = memory_flow_config(InputSpec::Sequence(vec![
        Value::Int(93),
        Value::Int(50),
        Value::Int(0),
    ]));
    let g = explore_states(&net, &cfg).unwrap();
    assert!(!g.truncated);
    let agents: Vec<usize> = net
        .places
        .iter()
        .filter(|p| p.is_agent())
        .map(|p| p.id)
        .collect();
    let torn_down = g
        .markings
        .iter()
        .any(|m| agents.iter().all(|&p| m.tokens[p] == Token::Absent));
    assert!(torn_down);
    let p1 = net.place(&addr("nB/S/p1")).unwrap();
    let seen: BTreeSet<Value> = g
        .markings
        .iter()
        .filter_map(|m| match &m.tokens[p1] {
            Token::Value(v) => Some(v.clone()),
            _ => None,
        })
        .collect();
    for d in [7, 43, 50] {
        assert!(seen.contains(&Value::Int(d)), "difference {d} unreachable");
    }
    assert_eq!(
        check_termination(&net, &cfg).unwrap(),
        Termination::Terminates
    );
}

#[test]
fn self_increment_may_not_terminate() {
    let mut c = Cell::new(id("n0"));
    put(&mut c, "n0/L/x", int(0));
    put(
        &mut c,
        "n0/A/inc",
        rule("IF true THEN UPDATE self/L/x = (L/x + 1) % 4"),
    );
    let net = sc_to_petri(&[c]).unwrap();
    let cfg = ExploreConfig {
        domains: BTreeMap::from([(addr("n0/L/x"), Domain::Int { lo: 0, hi: 3 })]),
        ..ExploreConfig::default()
    };
    match check_termination(&net, &cfg).unwrap() {
        Termination::MayNotTerminate { witness } => assert_eq!(witness.len(), 4),
        other => panic!("expected a cycle, got {other:?}"),
    }
}

#[test]
fn p1_stays_within_difference_bounds() {
    let mut cells = memory_flow_cells(0);
    // Keep the teardown out of the way so every difference stays reachable.
    cells[1]
        .apply(Operation::Delete, &addr("nB/A/t2"), None, Writer::System, 0)
        .unwrap();
    let net = sc_to_petri(&cells).unwrap();
    let cfg = ExploreConfig {
        domains: BTreeMap::from([
            (addr("nA/S/p0"), Domain::Int { lo: 0, hi: 10 }),
            (addr("nA/L/m"), Domain::Int { lo: 0, hi: 10 }),
            (addr("nB/S/p1"), Domain::Int { lo: -10, hi: 10 }),
        ]),
        inputs: BTreeMap::from([(addr("nA/S/p0"), InputSpec::AnyOf)]),
        ..ExploreConfig::default()
    };
    let r = check_range(&net, &addr("nB/S/p1"), &cfg).unwrap();
    assert!(r.complete);
    assert_eq!(r.min, Some(Value::Int(-10)));
    assert_eq!(r.max, Some(Value::Int(10)));
}

#[test]
fn truncation_is_flagged() {
    let net = sc_to_petri(&memory_flow_cells(0)).unwrap();
    let mut cfg = memory_flow_config(InputSpec::AnyOf);
    cfg.max_states = 50;
    let g = explore_states(&net, &cfg).unwrap();
    assert!(g.truncated);
    assert_eq!(g.markings.len(), 50);
    assert!(!check_range(&net, &addr("nB/S/p1"), &cfg).unwrap().complete);
}

#[test]
fn written_place_without_domain_is_rejected() {
    let net = sc_to_petri(&memory_flow_cells(0)).unwrap();
    let mut cfg = memory_flow_config(InputSpec::AnyOf);
    cfg.domains.remove(&addr("nA/L/m"));
    assert_eq!(
        explore_states(&net, &cfg),
        Err(PetriError::DomainUnbounded(addr("nA/L/m")))
    );
}

#[test]
fn write_outside_domain_is_reported() {
    let mut c = Cell::new(id("n0"));
    put(&mut c, "n0/L/x", int(0));
    put(
        &mut c,
        "n0/A/inc",
        rule("IF L/x < 9 THEN UPDATE self/L/x = L/x + 1"),
    );
    let net = sc_to_petri(&[c]).unwrap();
    let cfg = ExploreConfig {
        domains: BTreeMap::from([(addr("n0/L/x"), Domain::Int { lo: 0, hi: 3 })]),
        ..ExploreConfig::default()
    };
    assert!(matches!(
        explore_states(&net, &cfg),
        Err(PetriError::DomainViolation { .. })
    ));
}

#[test]
fn prev_is_untranslatable() {
    let mut c = Cell::new(id("n0"));
    c.bind_io("p".parse().unwrap(), IoRole::Input);
    put(&mut c, "n0/L/d", int(0));
    put(
        &mut c,
        "n0/A/r",
        rule("IF exists(prev(S/p)) THEN UPDATE self/L/d = prev(S/p) - S/p"),
    );
    assert!(matches!(
        sc_to_petri(&[c]),
        Err(PetriError::UntranslatableRule { .. })
    ));
}

#[test]
fn nested_rules_become_templates() {
    let mut c = Cell::new(id("n0"));
    put(&mut c, "n0/L/x", int(0));
    put(
        &mut c,
        "n0/A/boot",
        rule("IF not exists(A/w) THEN CREATE self/A/w = { IF L/x < 2 THEN UPDATE self/L/x = L/x + 1 }; DELETE self/A/boot"),
    );
    let net = sc_to_petri(&[c]).unwrap();
    assert_eq!(net.templates.len(), 2);
    let cfg = ExploreConfig {
        domains: BTreeMap::from([(addr("n0/L/x"), Domain::Int { lo: 0, hi: 2 })]),
        ..ExploreConfig::default()
    };
    let g = explore_states(&net, &cfg).unwrap();
    let x = net.place(&addr("n0/L/x")).unwrap();
    assert!(g
        .markings
        .iter()
        .any(|m| m.tokens[x] == Token::Value(Value::Int(2))));
    assert_eq!(g.termination(), Termination::Terminates);
}

#[test]
fn exploration_is_deterministic() {
    let net = sc_to_petri(&memory_flow_cells(3)).unwrap();
    let cfg = memory_flow_config(InputSpec::AnyOf);
    let mut cfg = cfg;
    cfg.max_states = 2_000;
    assert_eq!(explore_states(&net, &cfg), explore_states(&net, &cfg));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reachable_markings_match_engine_firings(seed in any::<u64>()) {
        let c = random_choreo(seed);
        let net = sc_to_petri(&c.cells).unwrap();
        let cfg = ExploreConfig { domains: c.domains.clone(), ..ExploreConfig::default() };
        let g = explore_states(&net, &cfg).unwrap();
        prop_assert!(!g.truncated);
        let from_net: BTreeSet<_> = g.markings.iter().map(|m| net.valuation(&m.tokens)).collect();
        let from_engine = reachable_by_engine(&c.cells, 1_000_000);
        prop_assert_eq!(from_net, from_engine, "rules: {:?}", c.rules);
    }
}
