//! Acceptance suite: one check per criterion, each printing a single
//! `[PASS] Cn` or `[FAIL] Cn` line. All twelve run even when some fail.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use orgami::export::export;
use orgami::run::{run_scenario, Report, RunOptions};
use orgami::scenario::{load_scenario, Experiment, Scenario};
use orgami_core::anc::{frequent_itemsets, Mlp};
use orgami_core::deploy::{
    brute_force_mapping, build_instantiation_graph, deploy, formulate_pbo, hardware_cells,
    solve_pbo, DeployError, DeployTarget, Strategy,
};
use orgami_core::engine::World;
use orgami_core::netsim::{LinkModel, Network, Topology, TopologyKind, TopologyParams};
use orgami_core::petri::{explore_states, sc_to_petri, ExploreConfig};
use orgami_core::voting::{
    compile_vp_to_sc, default_epsilon, nac_step, run_aggregation, run_compiled, vote,
    ConsensusState, FaultConfig, PreferenceProfile, Switching, VoteParams,
};
use orgami_core::{CellId, Operation, Payload, ResourceAddress, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::choreo::{random_choreo, reachable_by_engine};
use support::consensus::{margin_profile, mean_argmax, median, random_connected};
use support::deploy_cases::{random_inert_choreo, random_pbo_case, ring};
use support::learning::{
    brute_force_itemsets, is_downward_closed, numeric_gradient, random_dataset, relative_error,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {elapsed:?}, limit {limit:?}")
    })
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn bundled(name: &str) -> Scenario {
    load_scenario(scenario_dir().join(name)).expect("bundled scenario loads")
}

fn addr(s: &str) -> ResourceAddress {
    ResourceAddress::parse(s)
}

fn generate(kind: TopologyKind, n: usize, params: TopologyParams, seed: u64) -> Topology {
    Topology::generate(kind, n, params, seed).unwrap()
}

/// Differences of consecutive samples, up to and including the first 50.
fn memory_flow_oracle(samples: &[i64]) -> Vec<i64> {
    let mut out = Vec::new();
    for w in samples.windows(2) {
        out.push(w[0] - w[1]);
        if w[0] - w[1] == 50 {
            break;
        }
    }
    out
}

fn c1() -> Check {
    let s = bundled("fig4.json");
    let samples: Vec<i64> = s.drivers[0]
        .values
        .iter()
        .map(|v| match v {
            Value::Int(i) => *i,
            other => panic!("non-integer sample {other}"),
        })
        .collect();
    let start = Instant::now();
    let b = run_scenario(&s, &RunOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let p1 = addr("nB/S/p1");
    let writes: Vec<Value> = b
        .events
        .iter()
        .filter(|e| e.address == p1)
        .filter_map(|e| e.value.as_ref().and_then(Payload::as_value).cloned())
        .collect();
    let expected: Vec<Value> = memory_flow_oracle(&samples)
        .into_iter()
        .map(Value::Int)
        .collect();
    ensure(
        expected == vec![Value::Int(7), Value::Int(43), Value::Int(50)],
        || format!("oracle gives {expected:?}"),
    )?;
    ensure(writes == expected, || {
        format!("p1 writes {writes:?}, expected {expected:?}")
    })?;
    let teardown = b
        .events
        .iter()
        .filter(|e| e.operation == Operation::Delete)
        .map(|e| (e.address.to_string(), e.time))
        .collect::<BTreeMap<_, _>>();
    let agents = ["nA/A/t0", "nA/A/t1", "nB/A/t2"];
    ensure(agents.iter().all(|a| teardown.contains_key(*a)), || {
        format!("deleted: {teardown:?}")
    })?;
    let gone = teardown.values().copied().max().unwrap_or(0);
    let late: Vec<_> = b.flows.iter().filter(|f| f.trigger.time > gone).collect();
    ensure(!late.is_empty(), || "no p0 sample after teardown".into())?;
    let interactions: usize = late
        .iter()
        .flat_map(|f| &f.steps)
        .map(|s| s.interactions.len())
        .sum();
    ensure(interactions == 0, || {
        format!("{interactions} interaction(s) after teardown")
    })?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "p1 = {writes:?}, {} later sample(s) silent, {elapsed:?}",
        late.len()
    ))
}

fn c2() -> Check {
    let start = Instant::now();
    let mut states = 0;
    for seed in 0..50 {
        let c = random_choreo(seed);
        let net = sc_to_petri(&c.cells).map_err(|e| e.to_string())?;
        let cfg = ExploreConfig {
            domains: c.domains.clone(),
            ..ExploreConfig::default()
        };
        let g = explore_states(&net, &cfg).map_err(|e| e.to_string())?;
        ensure(!g.truncated, || format!("seed {seed}: truncated"))?;
        let from_net: BTreeSet<_> = g
            .markings
            .iter()
            .map(|m| net.valuation(&m.tokens))
            .collect();
        let from_engine = reachable_by_engine(&c.cells, 1_000_000);
        ensure(from_net == from_engine, || {
            format!(
                "seed {seed}: {} net valuations vs {} engine valuations, rules {:?}",
                from_net.len(),
                from_engine.len(),
                c.rules
            )
        })?;
        states += from_net.len();
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "50 choreographies, {states} valuations, {elapsed:?}"
    ))
}

fn c3() -> Check {
    let start = Instant::now();
    let mut feasible = 0;
    for seed in 0..100 {
        let (g, target) = random_pbo_case(seed);
        ensure(
            target.topology.len() <= 4 && g.free_vertices().count() <= 6,
            || format!("seed {seed}: instance out of range"),
        )?;
        let solved = formulate_pbo(&g, &target).and_then(|i| solve_pbo(&i));
        let brute = brute_force_mapping(&g, &target);
        match (solved, brute) {
            (Ok(a), Ok(b)) => {
                ensure(a.objective == b.objective, || {
                    format!(
                        "seed {seed}: solver {} vs brute force {}",
                        a.objective, b.objective
                    )
                })?;
                feasible += 1;
            }
            (Err(DeployError::Infeasible), Err(DeployError::Infeasible)) => {}
            (a, b) => return Err(format!("seed {seed}: {a:?} vs {b:?}")),
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("100 instances ({feasible} feasible), {elapsed:?}"))
}

fn final_state(w: &World) -> BTreeMap<ResourceAddress, Payload> {
    w.cells()
        .flat_map(|c| {
            c.resources()
                .map(|r| (r.address.clone(), r.payload.clone()))
        })
        .collect()
}

fn c4() -> Check {
    for seed in 0..20 {
        let topology = ring(4);
        let (choreo, bindings) = random_inert_choreo(seed, topology.nodes());
        let mut target = DeployTarget::new(topology);
        target.bindings = bindings;
        let g = build_instantiation_graph(&choreo, &target).map_err(|e| e.to_string())?;
        let m = formulate_pbo(&g, &target)
            .and_then(|i| solve_pbo(&i))
            .map_err(|e| e.to_string())?;
        let mut outcomes = Vec::new();
        for strategy in [Strategy::Direct, Strategy::Dna] {
            let cells = hardware_cells(&choreo, &target).map_err(|e| e.to_string())?;
            let net = Network::new(target.topology.clone(), LinkModel::lossless(1), 7).unwrap();
            let mut w = World::new(cells, net).unwrap();
            let entry = CellId::new("n0").unwrap();
            let report = deploy(strategy, &choreo, &m, &mut w, &entry, 0, 100)
                .map_err(|e| format!("seed {seed} {strategy:?}: {e}"))?;
            outcomes.push((report.placed, final_state(&w)));
        }
        ensure(outcomes[0] == outcomes[1], || {
            format!("seed {seed}: direct and DNA placements differ")
        })?;
    }
    Ok("20 choreographies on a lossless 4-ring".into())
}

fn c5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_err, mut worst_drift) = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let n = rng.random_range(2..=30usize);
        let t = random_connected(n, rng.random_range(0..40), seed);
        let k = 3;
        let p = PreferenceProfile::random(n, k, seed).unwrap();
        let means: Vec<f64> = (0..k)
            .map(|c| p.rows().iter().map(|r| r[c]).sum::<f64>() / n as f64)
            .collect();
        let eps = default_epsilon([&t]);
        let params = VoteParams {
            tolerance: 1e-7,
            max_iters: (10.0 * (n * n) as f64 / eps) as usize,
            ..VoteParams::default()
        };
        let a = run_aggregation(&p, &t, &params, &FaultConfig::lossless())
            .map_err(|e| e.to_string())?;
        ensure(a.converged, || format!("seed {seed}: no convergence"))?;
        for row in &a.state.x {
            for (x, m) in row.iter().zip(&means) {
                worst_err = worst_err.max((x - m).abs());
            }
        }
        let sums = |s: &ConsensusState| -> Vec<f64> {
            (0..k).map(|c| s.x.iter().map(|r| r[c]).sum()).collect()
        };
        let mut s = ConsensusState::new(&p);
        for _ in 0..a.iterations.max(1) {
            let before = sums(&s);
            s = nac_step(&s, &t, eps).map_err(|e| e.to_string())?;
            for (x, y) in sums(&s).iter().zip(&before) {
                worst_drift = worst_drift.max((x - y).abs());
            }
        }
    }
    ensure(worst_err < 1e-6, || format!("iterate error {worst_err:e}"))?;
    ensure(worst_drift < 1e-12, || {
        format!("per-step sum drift {worst_drift:e}")
    })?;
    Ok(format!(
        "max error {worst_err:.2e}, max per-step drift {worst_drift:.2e}"
    ))
}

fn c6() -> Check {
    let params = VoteParams::default();
    let sw = TopologyParams { k: 4, beta: 0.3 };
    let mut lost = 0;
    for seed in 0..20 {
        let p = margin_profile(seed + 100, params.delta + params.tolerance);
        let base = generate(TopologyKind::SmallWorld, 10, sw, seed);
        let topologies = vec![
            base.clone(),
            generate(TopologyKind::Ring, 10, TopologyParams::default(), 0),
            generate(TopologyKind::SmallWorld, 10, sw, seed + 50),
        ];
        ensure(topologies.iter().all(Topology::is_connected), || {
            format!("seed {seed}: a switched topology is disconnected")
        })?;
        let clean =
            vote(&p, &base, &params, &FaultConfig::lossless()).map_err(|e| e.to_string())?;
        let faults = FaultConfig {
            loss_prob: 0.2,
            asymmetric: false,
            switching: Some(Switching {
                every: 10,
                topologies,
            }),
            seed,
        };
        let faulty = vote(&p, &base, &params, &faults).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(faulty.winner == clean.winner, || {
            format!(
                "seed {seed}: {} under faults, {} lossless",
                faulty.winner, clean.winner
            )
        })?;
        lost += faulty.rounds.iter().map(|r| r.lost).sum::<usize>();
    }
    ensure(lost > 0, || "no exchange was ever lost".into())?;
    Ok(format!("20/20 winners kept, {lost} exchanges lost"))
}

fn c7() -> Check {
    let params = VoteParams::default();
    let ring10 = generate(TopologyKind::Ring, 10, TopologyParams::default(), 0);
    let sw = TopologyParams { k: 4, beta: 0.3 };
    let (mut small, mut rings) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let p = PreferenceProfile::random(10, 10, seed).unwrap();
        let t = generate(TopologyKind::SmallWorld, 10, sw, seed);
        let lossless = FaultConfig::lossless();
        let a = run_aggregation(&p, &t, &params, &lossless).map_err(|e| e.to_string())?;
        let b = run_aggregation(&p, &ring10, &params, &lossless).map_err(|e| e.to_string())?;
        ensure(a.converged && b.converged, || {
            format!("seed {seed}: no convergence")
        })?;
        small.push(a.iterations);
        rings.push(b.iterations);
    }
    let (ms, mr) = (median(small.clone()), median(rings.clone()));
    ensure(ms < mr, || format!("median small-world {ms} vs ring {mr}"))?;
    ensure((10.0..=200.0).contains(&ms), || {
        format!("median small-world {ms} outside 10..=200")
    })?;
    Ok(format!("median iterations small-world {ms}, ring {mr}"))
}

fn c8() -> Check {
    let params = VoteParams::default();
    let mut compiled = 0;
    for seed in 0..100 {
        let p = margin_profile(seed, params.delta + params.tolerance);
        let t = generate(
            TopologyKind::SmallWorld,
            10,
            TopologyParams { k: 4, beta: 0.3 },
            seed,
        );
        let lib = vote(&p, &t, &params, &FaultConfig::lossless())
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let oracle = mean_argmax(&p).0;
        ensure(lib.winner == oracle, || {
            format!(
                "seed {seed}: distributed {} vs centralized {oracle}",
                lib.winner
            )
        })?;
        if seed < 10 {
            let c = compile_vp_to_sc(&t, 10, &params).map_err(|e| e.to_string())?;
            let out =
                run_compiled(&c, &p, LinkModel::lossless(1), 3, seed).map_err(|e| e.to_string())?;
            ensure(out.agreed_winner() == Some(lib.winner), || {
                format!(
                    "seed {seed}: compiled {:?} vs library {}",
                    out.agreed_winner(),
                    lib.winner
                )
            })?;
            compiled += 1;
        }
    }
    Ok(format!(
        "100/100 match the oracle, {compiled}/10 compiled runs agree"
    ))
}

fn c9() -> Check {
    let s = bundled("anc_fig8.json");
    let Experiment::Anc(spec) = &s.experiment else {
        return Err("anc_fig8.json is not an anc scenario".into());
    };
    let theta = spec
        .controller
        .theta_select
        .ok_or("scenario sets no selection threshold")?;
    let b = run_scenario(&s, &RunOptions::default()).map_err(|e| e.to_string())?;
    let Report::Anc(r) = &b.report else {
        return Err("not an anc report".into());
    };
    let learnt: Vec<usize> = r.curve.iter().filter_map(|p| p.learned).collect();
    ensure(r.behaviors == 3 && learnt.len() == 3, || {
        format!("{} behaviors, {} learnt", r.behaviors, learnt.len())
    })?;
    let last = spec.presentations - 1;
    let mut chosen: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    let (mut settled, mut max_mse) = (0, 0.0f64);
    for (i, p) in r.curve.iter().enumerate() {
        if p.presentation != last || i % spec.segment < spec.settle {
            continue;
        }
        settled += 1;
        let b = p
            .behavior
            .ok_or_else(|| format!("step {}: nothing selected", p.step))?;
        let mse = p.mse.ok_or_else(|| format!("step {}: no error", p.step))?;
        max_mse = max_mse.max(mse);
        chosen.entry(&p.signal).or_default().insert(b);
        ensure(Some(&b) == r.learned_for.get(&p.signal), || {
            format!("step {}: behavior {b} for {}", p.step, p.signal)
        })?;
    }
    ensure(chosen.values().all(|s| s.len() == 1), || {
        format!("selections {chosen:?}")
    })?;
    let distinct: BTreeSet<_> = chosen.values().flatten().collect();
    ensure(distinct.len() == 3, || format!("selections {chosen:?}"))?;
    ensure(max_mse < theta, || {
        format!("selected mse {max_mse:e} against {theta}")
    })?;
    ensure(r.accuracy == 1.0, || format!("accuracy {}", r.accuracy))?;
    Ok(format!(
        "3 behaviors, {settled} settled steps all correct, max mse {max_mse:.2e}"
    ))
}

fn c10() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, h, o) = (
            rng.random_range(1..5),
            rng.random_range(1..8),
            rng.random_range(1..4),
        );
        let mut net = Mlp::init(i, h, o, seed);
        for b in net.b1.iter_mut().chain(net.b2.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        let rows = rng.random_range(1..10);
        let ds = random_dataset(&mut rng, rows, i, o);
        let g = net.gradient(&ds).map_err(|e| e.to_string())?;
        for (a, n) in g.iter().zip(numeric_gradient(&net, &ds, 1e-5)) {
            worst = worst.max(relative_error(*a, n));
        }
        let curve = net.descend(&ds, 0.01, 200).map_err(|e| e.to_string())?;
        for w in curve.windows(2) {
            ensure(w[1] <= w[0] + 1e-9, || {
                format!("seed {seed}: loss {} -> {}", w[0], w[1])
            })?;
        }
    }
    ensure(worst < 1e-4, || {
        format!("relative gradient error {worst:e}")
    })?;
    Ok(format!(
        "20 nets, max relative gradient error {worst:.2e}, descent monotone"
    ))
}

fn c11() -> Check {
    let mut total = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = rng.random_range(1..=12u8);
        let rows = rng.random_range(1..=50usize);
        let t: Vec<BTreeSet<u8>> = (0..rows)
            .map(|_| (0..items).filter(|_| rng.random_bool(0.4)).collect())
            .collect();
        let s = rng.random_range(0.05..=1.0);
        let found = frequent_itemsets(&t, s).map_err(|e| e.to_string())?;
        let mut got: Vec<(Vec<u8>, usize)> =
            found.iter().map(|f| (f.items.clone(), f.count)).collect();
        got.sort();
        let expected = brute_force_itemsets(&t, s);
        ensure(got == expected, || {
            format!(
                "seed {seed}: {} itemsets vs {} by enumeration",
                got.len(),
                expected.len()
            )
        })?;
        let sets: BTreeSet<Vec<u8>> = got.iter().map(|g| g.0.clone()).collect();
        ensure(is_downward_closed(&sets), || {
            format!("seed {seed}: not downward closed")
        })?;
        let count: BTreeMap<&Vec<u8>, usize> = got.iter().map(|(s, c)| (s, *c)).collect();
        for (set, c) in &got {
            for skip in 0..set.len() {
                let mut sub = set.clone();
                sub.remove(skip);
                if let Some(&sc) = count.get(&sub) {
                    ensure(sc >= *c, || {
                        format!("seed {seed}: support grows from {sub:?} to {set:?}")
                    })?;
                }
            }
        }
        total += got.len();
    }
    Ok(format!(
        "20 datasets, {total} frequent itemsets match enumeration"
    ))
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn c12() -> Check {
    let root = std::env::temp_dir().join(format!("orgami-acceptance-{}", std::process::id()));
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    ensure(paths.len() >= 5, || {
        format!("only {} bundled scenarios", paths.len())
    })?;
    let mut compared = 0;
    for path in &paths {
        let mut bundles = Vec::new();
        for run in ["a", "b"] {
            let s = load_scenario(path).map_err(|e| e.to_string())?;
            let b = run_scenario(&s, &RunOptions::default()).map_err(|e| e.to_string())?;
            let dir = root.join(run).join(&s.name);
            export(&b, &dir).map_err(|e| e.to_string())?;
            bundles.push(files(&dir));
        }
        ensure(bundles[0] == bundles[1], || {
            let differ: Vec<&String> = bundles[0]
                .iter()
                .filter(|(k, v)| bundles[1].get(*k) != Some(v))
                .map(|(k, _)| k)
                .collect();
            format!("{}: files differ: {differ:?}", path.display())
        })?;
        compared += bundles[0].len();
    }
    let _ = std::fs::remove_dir_all(&root);
    Ok(format!(
        "{} scenarios, {compared} files byte-identical",
        paths.len()
    ))
}

#[test]
fn acceptance() {
    let checks: [(&str, fn() -> Check); 12] = [
        ("C1", c1),
        ("C2", c2),
        ("C3", c3),
        ("C4", c4),
        ("C5", c5),
        ("C6", c6),
        ("C7", c7),
        ("C8", c8),
        ("C9", c9),
        ("C10", c10),
        ("C11", c11),
        ("C12", c12),
    ];
    let mut failed = Vec::new();
    for (id, check) in checks {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(format!(
                "panicked: {:?}",
                p.downcast_ref::<String>()
                    .map(String::as_str)
                    .or(p.downcast_ref::<&str>().copied())
            ))
        });
        // Written past the test harness capture so the log always shows it.
        let line = match result {
            Ok(detail) => format!("[PASS] {id}: {detail}\n"),
            Err(why) => {
                failed.push(id);
                format!("[FAIL] {id}: {why}\n")
            }
        };
        let mut out = std::io::stdout().lock();
        out.write_all(line.as_bytes()).unwrap();
        out.flush().unwrap();
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
