//! Artificial neural controller: a library of small networks, each
//! predicting the next resource states from the current context, ranked by
//! their running prediction error. When none predicts well the controller
//! collects data and learns a new behavior.

mod apriori;
mod controller;
mod mlp;
mod tree;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use apriori::{
    discretize, extract_rules_apriori, frequent_itemsets, AssociationRule, FrequentItemset, Item,
    DEFAULT_BINS,
};
pub use controller::{
    select_behavior, BehaviorId, BehaviorLibrary, Controller, ControllerConfig, Entry, Mode,
    Observation, Selection, StepOutcome, DEFAULT_ALPHA,
};
pub use mlp::{train_behavior, Behavior, Hyper, Mlp, Trained, DEFAULT_HIDDEN};
pub use tree::{generate_dataset_from_dt, DecisionTree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AncError {
    #[error("expected width {expected}, found {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("samples have inconsistent widths")]
    InconsistentWidths,
    #[error("decision tree has a missing branch")]
    IncompleteTree,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("training diverged")]
    NonFinite,
    #[error("no behavior {0}")]
    UnknownBehavior(usize),
}

/// A context and the state that followed it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub context: Vec<f64>,
    pub next: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Dataset {
        Dataset { samples }
    }

    pub fn from_pairs(pairs: &[(&[f64], &[f64])]) -> Dataset {
        Dataset::new(
            pairs
                .iter()
                .map(|(c, n)| Sample {
                    context: c.to_vec(),
                    next: n.to_vec(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Context and next-state widths of the first sample.
    pub fn widths(&self) -> (usize, usize) {
        self.samples
            .first()
            .map_or((0, 0), |s| (s.context.len(), s.next.len()))
    }

    pub fn validate(&self) -> Result<(), AncError> {
        if self.is_empty() {
            return Err(AncError::EmptyDataset);
        }
        let w = self.widths();
        if self
            .samples
            .iter()
            .any(|s| (s.context.len(), s.next.len()) != w)
        {
            return Err(AncError::InconsistentWidths);
        }
        if self
            .samples
            .iter()
            .flat_map(|s| s.context.iter().chain(&s.next))
            .any(|x| !x.is_finite())
        {
            return Err(AncError::NonFinite);
        }
        Ok(())
    }

    /// Appends another dataset, e.g. collected samples to generated ones.
    pub fn mix(&mut self, other: &Dataset) -> Result<(), AncError> {
        if !self.is_empty() && !other.is_empty() && self.widths() != other.widths() {
            return Err(AncError::InconsistentWidths);
        }
        self.samples.extend(other.samples.iter().cloned());
        Ok(())
    }

    /// FNV-1a over the bit patterns of every number, in order.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for s in &self.samples {
            for x in s.context.iter().chain(&s.next) {
                for b in x.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}
