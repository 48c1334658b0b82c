use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::mlp::{mse, train_behavior, Behavior, Hyper};
use super::{AncError, Dataset, Sample};

pub const DEFAULT_ALPHA: f64 = 0.3;

/// Stable id of a behavior: its insertion number.
pub type BehaviorId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub id: BehaviorId,
    pub behavior: Behavior,
    /// Exponential moving average of the per-step prediction MSE.
    pub error: f64,
    /// Samples where the behavior was selected but mispredicted.
    pub refinement: Dataset,
}

/// Behaviors in insertion order with their smoothed errors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BehaviorLibrary {
    pub entries: Vec<Entry>,
    next_id: BehaviorId,
}

impl BehaviorLibrary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: BehaviorId) -> Option<&Entry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn insert(&mut self, behavior: Behavior, error: f64) -> BehaviorId {
        let id = self.next_id;
        self.next_id += 1;
        self.entries.push(Entry {
            id,
            behavior,
            error,
            refinement: Dataset::default(),
        });
        id
    }

    /// Ids by ascending smoothed error, ties by insertion order.
    pub fn ranking(&self) -> Vec<BehaviorId> {
        let mut order: Vec<&Entry> = self.entries.iter().collect();
        order.sort_by(|a, b| a.error.total_cmp(&b.error).then(a.id.cmp(&b.id)));
        order.into_iter().map(|e| e.id).collect()
    }

    /// Drops the behavior with the highest smoothed error (latest on ties).
    fn evict_worst(&mut self) {
        if let Some(&worst) = self.ranking().last() {
            self.entries.retain(|e| e.id != worst);
        }
    }

    pub fn errors(&self) -> Vec<(BehaviorId, f64)> {
        self.entries.iter().map(|e| (e.id, e.error)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Behavior(BehaviorId),
    LearnNew,
}

/// The behavior with the least smoothed error, if that error is below
/// `theta_select`.
pub fn select_behavior(library: &BehaviorLibrary, theta_select: f64) -> Selection {
    match library.ranking().first().and_then(|&id| library.get(id)) {
        Some(e) if e.error < theta_select => Selection::Behavior(e.id),
        _ => Selection::LearnNew,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub context_width: usize,
    pub state_width: usize,
    pub theta_select: f64,
    /// A freshly trained behavior joins the library only below this loss.
    pub theta_learn: f64,
    pub buffer_size: usize,
    pub alpha: f64,
    pub hyper: Hyper,
    pub max_behaviors: Option<usize>,
    /// Per-step MSE above which a selected behavior's sample is kept for
    /// refinement.
    pub correction_tol: f64,
}

impl ControllerConfig {
    pub fn new(context_width: usize, state_width: usize) -> ControllerConfig {
        ControllerConfig {
            context_width,
            state_width,
            theta_select: 0.05,
            theta_learn: 0.01,
            buffer_size: 32,
            alpha: DEFAULT_ALPHA,
            hyper: Hyper::default(),
            max_behaviors: None,
            correction_tol: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Collecting,
    Selected(BehaviorId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub context: Vec<f64>,
    /// State that actually followed, including any manual correction.
    pub next: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepOutcome {
    /// Prediction of the selected behavior, none while collecting.
    pub action: Option<Vec<f64>>,
    pub mode: Mode,
    /// Behavior learnt during this step.
    pub learned: Option<BehaviorId>,
    /// Per-step MSE of every behavior on this observation.
    pub step_errors: Vec<(BehaviorId, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub config: ControllerConfig,
    pub library: BehaviorLibrary,
    pub mode: Mode,
    pub buffer: Dataset,
    trainings: u64,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Controller, AncError> {
        let c = &config;
        if !(c.alpha > 0.0 && c.alpha <= 1.0) {
            return Err(AncError::InvalidParameter("alpha must lie in (0, 1]"));
        }
        if c.buffer_size == 0 || c.context_width == 0 || c.state_width == 0 {
            return Err(AncError::InvalidParameter(
                "widths and buffer size must be positive",
            ));
        }
        if c.max_behaviors == Some(0) {
            return Err(AncError::InvalidParameter("behavior cap must be positive"));
        }
        Ok(Controller {
            config,
            library: BehaviorLibrary::default(),
            mode: Mode::Collecting,
            buffer: Dataset::default(),
            trainings: 0,
        })
    }

    fn check(&self, obs: &Observation) -> Result<(), AncError> {
        let c = &self.config;
        for (expected, found) in [
            (c.context_width, obs.context.len()),
            (c.state_width, obs.next.len()),
        ] {
            if expected != found {
                return Err(AncError::WidthMismatch { expected, found });
            }
        }
        Ok(())
    }

    /// Scores every behavior on the observation, then selects, collects or
    /// learns. Leaving the collecting mode discards a partial buffer.
    pub fn step(&mut self, obs: &Observation) -> Result<StepOutcome, AncError> {
        self.check(obs)?;
        let alpha = self.config.alpha;
        let mut step_errors = Vec::with_capacity(self.library.len());
        for e in &mut self.library.entries {
            let err = mse(&e.behavior.predict(&obs.context)?, &obs.next);
            e.error = (1.0 - alpha) * e.error + alpha * err;
            step_errors.push((e.id, err));
        }
        let sample = Sample {
            context: obs.context.clone(),
            next: obs.next.clone(),
        };
        let mut learned = None;
        if select_behavior(&self.library, self.config.theta_select) == Selection::LearnNew {
            self.buffer.samples.push(sample.clone());
            if self.buffer.len() >= self.config.buffer_size {
                learned = self.learn()?;
            }
        }
        self.mode = match select_behavior(&self.library, self.config.theta_select) {
            Selection::Behavior(id) => {
                self.buffer.samples.clear();
                let err = step_errors
                    .iter()
                    .find(|(b, _)| *b == id)
                    .map_or(0.0, |(_, e)| *e);
                if err > self.config.correction_tol {
                    let entry = self
                        .library
                        .entries
                        .iter_mut()
                        .find(|e| e.id == id)
                        .expect("selected behavior exists");
                    entry.refinement.samples.push(sample);
                }
                Mode::Selected(id)
            }
            Selection::LearnNew => Mode::Collecting,
        };
        let action = match self.mode {
            Mode::Selected(id) => Some(
                self.library
                    .get(id)
                    .expect("selected behavior exists")
                    .behavior
                    .predict(&obs.context)?,
            ),
            Mode::Collecting => None,
        };
        Ok(StepOutcome {
            action,
            mode: self.mode,
            learned,
            step_errors,
        })
    }

    /// Trains on the full buffer and clears it. The result joins the library
    /// with its training loss as initial error when that loss is below
    /// `theta_learn`.
    fn learn(&mut self) -> Result<Option<BehaviorId>, AncError> {
        let mut hyper = self.config.hyper;
        hyper.seed = hyper.seed.wrapping_add(self.trainings);
        self.trainings += 1;
        let trained = train_behavior(&self.buffer, &hyper)?;
        self.buffer.samples.clear();
        let loss = trained.final_loss();
        if loss >= self.config.theta_learn {
            return Ok(None);
        }
        if let Some(cap) = self.config.max_behaviors {
            while self.library.len() >= cap {
                self.library.evict_worst();
            }
        }
        Ok(Some(self.library.insert(trained.behavior, loss)))
    }

    /// Continues training a behavior on the corrections gathered while it
    /// was selected, then clears them. Returns the loss on those samples.
    pub fn refine(&mut self, id: BehaviorId) -> Result<Option<f64>, AncError> {
        let hyper = self.config.hyper;
        let entry = self
            .library
            .entries
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or(AncError::UnknownBehavior(id))?;
        if entry.refinement.is_empty() {
            return Ok(None);
        }
        let ds = core::mem::take(&mut entry.refinement);
        let curve = entry.behavior.net.descend(&ds, hyper.rate, hyper.epochs)?;
        entry.behavior.trained_on ^= ds.fingerprint();
        Ok(curve.last().copied())
    }
}
