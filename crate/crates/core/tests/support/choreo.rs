//! Random static choreographies and a brute-force reachability oracle that
//! drives the real middleware and rule evaluator, one agent firing at a time.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use orgami_core::petri::Domain;
use orgami_core::rule::{evaluate_pre, fire_agent, EvalContext, PrevValues};
use orgami_core::{
    parse_rule, Cell, CellId, Operation, Payload, ResourceAddress, Snapshot, Value, Writer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Valuation = BTreeMap<ResourceAddress, Payload>;

pub struct RandomChoreo {
    pub cells: Vec<Cell>,
    pub domains: BTreeMap<ResourceAddress, Domain>,
    pub rules: Vec<String>,
}

/// At most 3 cells, 5 rules and 4 `/L/` places, all in `0..d` with `d <= 8`.
/// Every value payload is reduced `% d`, so writes stay in the domain.
pub fn random_choreo(seed: u64) -> RandomChoreo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cells = rng.random_range(1..=3usize);
    let d: i64 = rng.random_range(2..=8);
    let n_places = rng.random_range(1..=4usize);
    let n_rules = rng.random_range(1..=5usize);
    let cell_ids: Vec<CellId> = (0..n_cells)
        .map(|i| CellId::new(format!("c{i}")).unwrap())
        .collect();
    let mut cells: Vec<Cell> = cell_ids.iter().cloned().map(Cell::new).collect();
    let mut places: Vec<(usize, String)> = Vec::new();
    let mut domains = BTreeMap::new();
    for p in 0..n_places {
        let c = rng.random_range(0..n_cells);
        let name = format!("x{p}");
        let addr = ResourceAddress::parse(&format!("{}/L/{name}", cell_ids[c]));
        domains.insert(addr.clone(), Domain::Int { lo: 0, hi: d - 1 });
        if rng.random_bool(0.85) {
            cells[c]
                .apply(
                    Operation::Create,
                    &addr,
                    Some(Payload::Value(Value::Int(rng.random_range(0..d)))),
                    Writer::System,
                    0,
                )
                .unwrap();
        }
        places.push((c, name));
    }

    let mut rules = Vec::new();
    for r in 0..n_rules {
        let host = rng.random_range(0..n_cells);
        let local: Vec<&String> = places
            .iter()
            .filter(|(c, _)| *c == host)
            .map(|(_, n)| n)
            .collect();
        let pick_local = |rng: &mut ChaCha8Rng| local[rng.random_range(0..local.len())].clone();
        let pre = if local.is_empty() {
            "true".to_string()
        } else {
            match rng.random_range(0..5) {
                0 => "true".to_string(),
                1 => format!("L/{} < {}", pick_local(&mut rng), rng.random_range(0..d)),
                2 => format!("L/{} == {}", pick_local(&mut rng), rng.random_range(0..d)),
                3 => format!("L/{} != L/{}", pick_local(&mut rng), pick_local(&mut rng)),
                _ => format!("not exists(L/{})", pick_local(&mut rng)),
            }
        };
        let n_actions = rng.random_range(1..=2);
        let mut actions = Vec::new();
        for _ in 0..n_actions {
            let (tc, tname) = places[rng.random_range(0..places.len())].clone();
            let target = if tc == host {
                format!("self/L/{tname}")
            } else {
                format!("{}/L/{tname}", cell_ids[tc])
            };
            let operand = |rng: &mut ChaCha8Rng| -> String {
                let target_local: Vec<&String> = places
                    .iter()
                    .filter(|(c, _)| *c == tc)
                    .map(|(_, n)| n)
                    .collect();
                match rng.random_range(0..3) {
                    0 if !local.is_empty() => {
                        format!("L/{}", local[rng.random_range(0..local.len())])
                    }
                    1 if !target_local.is_empty() && tc != host => format!(
                        "{}/L/{}",
                        cell_ids[tc],
                        target_local[rng.random_range(0..target_local.len())]
                    ),
                    _ => rng.random_range(0..d).to_string(),
                }
            };
            let expr = format!("({} + {}) % {d}", operand(&mut rng), operand(&mut rng));
            actions.push(match rng.random_range(0..6) {
                0 => format!("DELETE {target}"),
                1 => format!("CREATE {target} = {expr}"),
                _ => format!("UPDATE {target} = {expr}"),
            });
        }
        let src = format!("IF {pre} THEN {}", actions.join("; "));
        let addr = ResourceAddress::parse(&format!("{}/A/r{r}", cell_ids[host]));
        let rule = parse_rule(&src).unwrap_or_else(|e| panic!("{src}: {e}"));
        cells[host]
            .apply(
                Operation::Create,
                &addr,
                Some(Payload::from(rule)),
                Writer::System,
                0,
            )
            .unwrap();
        rules.push(src);
    }
    RandomChoreo {
        cells,
        domains,
        rules,
    }
}

pub fn valuation(cells: &BTreeMap<CellId, Cell>) -> Valuation {
    cells
        .values()
        .flat_map(|c| {
            c.resources()
                .map(|r| (r.address.clone(), r.payload.clone()))
        })
        .collect()
}

/// Every valuation reachable by firing one enabled agent at a time, each
/// firing applying all its interactions through the middleware.
pub fn reachable_by_engine(cells: &[Cell], limit: usize) -> BTreeSet<Valuation> {
    let start: BTreeMap<CellId, Cell> = cells.iter().map(|c| (c.id().clone(), c.clone())).collect();
    let mut seen = BTreeSet::from([valuation(&start)]);
    let mut queue = VecDeque::from([start]);
    let prev = PrevValues::new();
    while let Some(state) = queue.pop_front() {
        let snaps: BTreeMap<CellId, Snapshot> = state
            .iter()
            .map(|(id, c)| (id.clone(), c.snapshot()))
            .collect();
        for (host_id, host) in &state {
            for (_, rule) in host.agents() {
                let ctx = EvalContext {
                    host: &snaps[host_id],
                    remote: &snaps,
                    prev: &prev,
                };
                if evaluate_pre(rule, &ctx) != Ok(true) {
                    continue;
                }
                let mut next = state.clone();
                for i in fire_agent(rule, &ctx).interactions {
                    if let Some(cell) = next.get_mut(&i.target.cell) {
                        let _ = cell.apply(i.operation, &i.target, i.payload, Writer::Agent, 0);
                    }
                }
                if seen.len() < limit && seen.insert(valuation(&next)) {
                    queue.push_back(next);
                }
            }
        }
    }
    seen
}
