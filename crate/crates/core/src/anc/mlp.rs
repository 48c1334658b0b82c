use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AncError, Dataset};

pub const DEFAULT_HIDDEN: usize = 16;

/// One tanh hidden layer and a linear output. Matrices are row-major with
/// one row per output unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct Forward {
    h: Vec<f64>,
    y: Vec<f64>,
}

impl Mlp {
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Mlp {
        Mlp {
            inputs,
            hidden,
            outputs,
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; outputs * hidden],
            b2: vec![0.0; outputs],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mlp::zeros(inputs, hidden, outputs);
        let b = 1.0 / libm::sqrt(inputs.max(1) as f64);
        m.w1.iter_mut().for_each(|w| *w = rng.random_range(-b..b));
        let b = 1.0 / libm::sqrt(hidden.max(1) as f64);
        m.w2.iter_mut().for_each(|w| *w = rng.random_range(-b..b));
        m
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
                let z: f64 = row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b1[j];
                libm::tanh(z)
            })
            .collect();
        let y = (0..self.outputs)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                row.iter().zip(&h).map(|(w, h)| w * h).sum::<f64>() + self.b2[k]
            })
            .collect();
        Forward { h, y }
    }

    pub fn predict(&self, context: &[f64]) -> Result<Vec<f64>, AncError> {
        if context.len() != self.inputs {
            return Err(AncError::WidthMismatch {
                expected: self.inputs,
                found: context.len(),
            });
        }
        Ok(self.forward(context).y)
    }

    fn check(&self, ds: &Dataset) -> Result<(), AncError> {
        if ds.is_empty() {
            return Err(AncError::EmptyDataset);
        }
        let (i, o) = ds.widths();
        if i != self.inputs {
            return Err(AncError::WidthMismatch {
                expected: self.inputs,
                found: i,
            });
        }
        if o != self.outputs {
            return Err(AncError::WidthMismatch {
                expected: self.outputs,
                found: o,
            });
        }
        Ok(())
    }

    /// Mean over samples and outputs of the squared error.
    pub fn loss(&self, ds: &Dataset) -> Result<f64, AncError> {
        self.check(ds)?;
        let total: f64 = ds
            .samples
            .iter()
            .map(|s| mse(&self.forward(&s.context).y, &s.next))
            .sum();
        Ok(total / ds.len() as f64)
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// All parameters in the order `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let mut it = p.iter().copied();
        for v in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            v.iter_mut()
                .for_each(|x| *x = it.next().expect("length checked"));
        }
    }

    /// Loss gradient by backpropagation, laid out like [`Mlp::params`].
    pub fn gradient(&self, ds: &Dataset) -> Result<Vec<f64>, AncError> {
        self.check(ds)?;
        let (ni, nh, no) = (self.inputs, self.hidden, self.outputs);
        let mut gw1 = vec![0.0; nh * ni];
        let mut gb1 = vec![0.0; nh];
        let mut gw2 = vec![0.0; no * nh];
        let mut gb2 = vec![0.0; no];
        let scale = 2.0 / (ds.len() * no) as f64;
        for s in &ds.samples {
            let f = self.forward(&s.context);
            let dy: Vec<f64> =
                f.y.iter()
                    .zip(&s.next)
                    .map(|(y, t)| scale * (y - t))
                    .collect();
            let mut dz = vec![0.0; nh];
            for k in 0..no {
                gb2[k] += dy[k];
                for j in 0..nh {
                    gw2[k * nh + j] += dy[k] * f.h[j];
                    dz[j] += dy[k] * self.w2[k * nh + j];
                }
            }
            for j in 0..nh {
                let d = dz[j] * (1.0 - f.h[j] * f.h[j]);
                gb1[j] += d;
                for i in 0..ni {
                    gw1[j * ni + i] += d * s.context[i];
                }
            }
        }
        Ok([gw1, gb1, gw2, gb2].concat())
    }

    /// Full-batch gradient descent. Returns the loss at the start of every
    /// epoch followed by the final loss.
    pub fn descend(
        &mut self,
        ds: &Dataset,
        rate: f64,
        epochs: usize,
    ) -> Result<Vec<f64>, AncError> {
        let mut curve = Vec::with_capacity(epochs + 1);
        let mut p = self.params();
        for _ in 0..epochs {
            curve.push(self.loss(ds)?);
            let g = self.gradient(ds)?;
            p.iter_mut().zip(&g).for_each(|(p, g)| *p -= rate * g);
            self.set_params(&p);
        }
        let last = self.loss(ds)?;
        if !last.is_finite() {
            return Err(AncError::NonFinite);
        }
        curve.push(last);
        Ok(curve)
    }
}

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub hidden: usize,
    pub rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            hidden: DEFAULT_HIDDEN,
            rate: 0.1,
            epochs: 2_000,
            seed: 0,
        }
    }
}

/// A trained network with the fingerprint of the data it was fitted on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    pub net: Mlp,
    pub trained_on: u64,
}

impl Behavior {
    pub fn predict(&self, context: &[f64]) -> Result<Vec<f64>, AncError> {
        self.net.predict(context)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trained {
    pub behavior: Behavior,
    /// Loss at the start of each epoch, then the final loss.
    pub curve: Vec<f64>,
    /// Fitted on a single sample.
    pub degenerate: bool,
}

impl Trained {
    pub fn final_loss(&self) -> f64 {
        *self.curve.last().expect("curve holds the final loss")
    }
}

pub fn train_behavior(ds: &Dataset, hyper: &Hyper) -> Result<Trained, AncError> {
    ds.validate()?;
    if !(hyper.rate > 0.0 && hyper.rate.is_finite()) || hyper.hidden == 0 {
        return Err(AncError::InvalidParameter(
            "rate must be positive and hidden width non-zero",
        ));
    }
    let (i, o) = ds.widths();
    let mut net = Mlp::init(i, hyper.hidden, o, hyper.seed);
    let curve = net.descend(ds, hyper.rate, hyper.epochs)?;
    Ok(Trained {
        behavior: Behavior {
            net,
            trained_on: ds.fingerprint(),
        },
        curve,
        degenerate: ds.len() == 1,
    })
}
