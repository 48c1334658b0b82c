use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AncError, Dataset, Sample};

/// A predefined behavior as a decision tree over the context. A split sends
/// contexts with `x[dim] > threshold` right, the rest left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionTree {
    Leaf(Vec<f64>),
    Split {
        dim: usize,
        threshold: f64,
        left: Option<Box<DecisionTree>>,
        right: Option<Box<DecisionTree>>,
    },
}

impl DecisionTree {
    pub fn split(dim: usize, threshold: f64, left: DecisionTree, right: DecisionTree) -> Self {
        DecisionTree::Split {
            dim,
            threshold,
            left: Some(Box::new(left)),
            right: Some(Box::new(right)),
        }
    }

    /// The leaf label reached by `x`.
    pub fn label(&self, x: &[f64]) -> Result<&[f64], AncError> {
        let mut node = self;
        loop {
            match node {
                DecisionTree::Leaf(v) => return Ok(v),
                DecisionTree::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => {
                    let v = *x.get(*dim).ok_or(AncError::WidthMismatch {
                        expected: dim + 1,
                        found: x.len(),
                    })?;
                    let next = if v > *threshold { right } else { left };
                    node = next.as_deref().ok_or(AncError::IncompleteTree)?;
                }
            }
        }
    }

    /// Every branch present and every leaf of the same width.
    pub fn check_total(&self) -> Result<usize, AncError> {
        match self {
            DecisionTree::Leaf(v) => Ok(v.len()),
            DecisionTree::Split { left, right, .. } => {
                let l = left.as_deref().ok_or(AncError::IncompleteTree)?;
                let r = right.as_deref().ok_or(AncError::IncompleteTree)?;
                let (wl, wr) = (l.check_total()?, r.check_total()?);
                if wl != wr {
                    return Err(AncError::InconsistentWidths);
                }
                Ok(wl)
            }
        }
    }

    fn max_dim(&self) -> Option<usize> {
        match self {
            DecisionTree::Leaf(_) => None,
            DecisionTree::Split {
                dim, left, right, ..
            } => [
                Some(*dim),
                left.as_ref().and_then(|t| t.max_dim()),
                right.as_ref().and_then(|t| t.max_dim()),
            ]
            .into_iter()
            .flatten()
            .max(),
        }
    }
}

/// `n` contexts drawn uniformly from the box `domains`, labelled by the
/// tree. Deterministic per seed.
pub fn generate_dataset_from_dt(
    dt: &DecisionTree,
    domains: &[(f64, f64)],
    n: usize,
    seed: u64,
) -> Result<Dataset, AncError> {
    dt.check_total()?;
    if let Some(d) = dt.max_dim() {
        if d >= domains.len() {
            return Err(AncError::WidthMismatch {
                expected: d + 1,
                found: domains.len(),
            });
        }
    }
    if domains
        .iter()
        .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err(AncError::InvalidParameter(
            "domains must be finite with lo <= hi",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let context: Vec<f64> = domains
            .iter()
            .map(|&(lo, hi)| {
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..hi)
                }
            })
            .collect();
        let next = dt.label(&context)?.to_vec();
        samples.push(Sample { context, next });
    }
    Ok(Dataset::new(samples))
}
