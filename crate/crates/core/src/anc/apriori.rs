use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::{AncError, Dataset};

pub const DEFAULT_BINS: usize = 4;

/// A discretized column value: `column` falls in equal-width bin `bin`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Item {
    pub column: usize,
    pub bin: usize,
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}=b{}", self.column, self.bin)
    }
}

/// One transaction per sample over context then next-state columns. Each
/// column is cut into `bins` equal-width bins between its observed min and
/// max; a constant column falls in bin 0.
pub fn discretize(ds: &Dataset, bins: usize) -> Result<Vec<BTreeSet<Item>>, AncError> {
    ds.validate()?;
    if bins == 0 {
        return Err(AncError::InvalidParameter("bins must be positive"));
    }
    let rows: Vec<Vec<f64>> = ds
        .samples
        .iter()
        .map(|s| s.context.iter().chain(&s.next).copied().collect())
        .collect();
    let width = rows[0].len();
    let bounds: Vec<(f64, f64)> = (0..width)
        .map(|c| {
            rows.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[c]), hi.max(r[c]))
                })
        })
        .collect();
    Ok(rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(column, &x)| {
                    let (lo, hi) = bounds[column];
                    let bin = if hi > lo {
                        let b = ((x - lo) / (hi - lo) * bins as f64) as usize;
                        b.min(bins - 1)
                    } else {
                        0
                    };
                    Item { column, bin }
                })
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequentItemset<T> {
    pub items: Vec<T>,
    pub count: usize,
    pub support: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationRule<T> {
    pub antecedent: Vec<T>,
    pub consequent: Vec<T>,
    pub support: f64,
    pub confidence: f64,
}

fn write_set<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    f.write_str("{")?;
    for (i, it) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{it}")?;
    }
    f.write_str("}")
}

impl<T: fmt::Display> fmt::Display for AssociationRule<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_set(f, &self.antecedent)?;
        f.write_str(" => ")?;
        write_set(f, &self.consequent)?;
        write!(f, " ({:.4}, {:.4})", self.support, self.confidence)
    }
}

fn check_threshold(x: f64) -> Result<(), AncError> {
    if x > 0.0 && x <= 1.0 {
        Ok(())
    } else {
        Err(AncError::InvalidParameter("thresholds must lie in (0, 1]"))
    }
}

/// Count threshold with a small slack so that `min_support * n` landing on
/// an integer is not lost to rounding.
fn min_count(min_support: f64, n: usize) -> f64 {
    min_support * n as f64 - 1e-9
}

/// Level-wise Apriori. Itemsets are sorted vectors; the result is sorted by
/// support descending, then lexicographically.
pub fn frequent_itemsets<T: Ord + Clone>(
    transactions: &[BTreeSet<T>],
    min_support: f64,
) -> Result<Vec<FrequentItemset<T>>, AncError> {
    check_threshold(min_support)?;
    let n = transactions.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let need = min_count(min_support, n);
    let count = |set: &[T]| {
        transactions
            .iter()
            .filter(|t| set.iter().all(|i| t.contains(i)))
            .count()
    };
    let mut singles: BTreeMap<&T, usize> = BTreeMap::new();
    for t in transactions {
        for i in t {
            *singles.entry(i).or_default() += 1;
        }
    }
    let mut level: BTreeMap<Vec<T>, usize> = singles
        .into_iter()
        .filter(|&(_, c)| c as f64 >= need)
        .map(|(i, c)| (alloc::vec![i.clone()], c))
        .collect();
    let mut all: Vec<(Vec<T>, usize)> = Vec::new();
    while !level.is_empty() {
        let keys: Vec<&Vec<T>> = level.keys().collect();
        let mut next = BTreeMap::new();
        for (a_idx, a) in keys.iter().enumerate() {
            for b in &keys[a_idx + 1..] {
                let k = a.len();
                if a[..k - 1] != b[..k - 1] {
                    // Keys are sorted, so later ones share no longer prefix.
                    break;
                }
                let mut cand = (*a).clone();
                cand.push(b[k - 1].clone());
                let closed = (0..cand.len()).all(|skip| {
                    let sub: Vec<T> = cand
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != skip)
                        .map(|(_, x)| x.clone())
                        .collect();
                    level.contains_key(&sub)
                });
                if !closed {
                    continue;
                }
                let c = count(&cand);
                if c as f64 >= need {
                    next.insert(cand, c);
                }
            }
        }
        all.extend(core::mem::replace(&mut level, next));
    }
    let mut out: Vec<FrequentItemset<T>> = all
        .into_iter()
        .map(|(items, count)| FrequentItemset {
            items,
            count,
            support: count as f64 / n as f64,
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.items.cmp(&b.items)));
    Ok(out)
}

/// Rules `X => Y` from every frequent itemset split into two non-empty
/// parts, kept when `support(X u Y) / support(X) >= min_confidence`. Sorted
/// by support descending, confidence descending, then antecedent and
/// consequent lexicographically.
pub fn extract_rules_apriori<T: Ord + Clone>(
    transactions: &[BTreeSet<T>],
    min_support: f64,
    min_confidence: f64,
) -> Result<Vec<AssociationRule<T>>, AncError> {
    check_threshold(min_confidence)?;
    let frequent = frequent_itemsets(transactions, min_support)?;
    let counts: BTreeMap<&[T], usize> = frequent
        .iter()
        .map(|f| (f.items.as_slice(), f.count))
        .collect();
    let n = transactions.len() as f64;
    let mut rules = Vec::new();
    for f in frequent.iter().filter(|f| f.items.len() > 1) {
        let k = f.items.len();
        if k >= 64 {
            return Err(AncError::InvalidParameter("itemsets above 63 items"));
        }
        for mask in 1..(1u64 << k) - 1 {
            let (ante, cons): (Vec<_>, Vec<_>) = f
                .items
                .iter()
                .enumerate()
                .partition(|&(i, _)| mask & (1 << i) != 0);
            let antecedent: Vec<T> = ante.into_iter().map(|(_, x)| x.clone()).collect();
            let consequent: Vec<T> = cons.into_iter().map(|(_, x)| x.clone()).collect();
            // Subsets of a frequent itemset are frequent.
            let ante_count = counts[antecedent.as_slice()];
            let confidence = f.count as f64 / ante_count as f64;
            if confidence >= min_confidence - 1e-12 {
                rules.push(AssociationRule {
                    antecedent,
                    consequent,
                    support: f.count as f64 / n,
                    confidence,
                });
            }
        }
    }
    rules.sort_by(|a, b| {
        b.support
            .total_cmp(&a.support)
            .then(b.confidence.total_cmp(&a.confidence))
            .then_with(|| a.antecedent.cmp(&b.antecedent))
            .then_with(|| a.consequent.cmp(&b.consequent))
    });
    Ok(rules)
}
