//! First-order optimizers over a [`ParamStore`]'s accumulated gradients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
const ADAGRAD_INIT: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        let zeros = || store.iter().map(|p| Matrix::zeros(p.value.raw_dim())).collect::<Vec<_>>();
        let (first, second) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adagrad => (
                Vec::new(),
                store
                    .iter()
                    .map(|p| Matrix::from_elem(p.value.raw_dim(), ADAGRAD_INIT))
                    .collect(),
            ),
            OptimizerKind::Adam => (zeros(), zeros()),
        };
        Ok(Self {
            kind,
            lr,
            step: 0,
            first,
            second,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Apply one update from the store's accumulated gradients. A parameter
    /// whose gradient is exactly zero is left unchanged.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in store.iter_mut() {
                    p.value.scaled_add(-lr, &p.grad);
                }
            }
            OptimizerKind::Adagrad => {
                for (p, acc) in store.iter_mut().zip(&mut self.second) {
                    ndarray::Zip::from(&mut p.value)
                        .and(acc)
                        .and(&p.grad)
                        .for_each(|w, a, &g| {
                            *a += g * g;
                            *w -= lr * g / a.sqrt();
                        });
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    ndarray::Zip::from(&mut p.value)
                        .and(m)
                        .and(v)
                        .and(&p.grad)
                        .for_each(|w, m, v, &g| {
                            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                            if *m != 0.0 {
                                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                            }
                        });
                }
            }
        }
        store.enforce_frozen();
    }
}

/// Multiply the learning rate by `factor` whenever dev F1 fails to improve
/// on the best seen so far.
#[derive(Clone, Debug)]
pub struct PlateauDecay {
    factor: f64,
    best: f64,
}

impl PlateauDecay {
    pub fn new(factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::Config(format!("decay factor must be in (0, 1], got {factor}")));
        }
        Ok(Self {
            factor,
            best: f64::NEG_INFINITY,
        })
    }

    /// Record an epoch's dev F1; returns the new learning rate when it decays.
    pub fn observe(&mut self, dev_f1: f64, optimizer: &mut Optimizer) -> Option<f64> {
        if dev_f1 > self.best {
            self.best = dev_f1;
            None
        } else if self.factor < 1.0 {
            let lr = optimizer.lr() * self.factor;
            optimizer.set_lr(lr);
            Some(lr)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (ParamStore, crate::tensor::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Matrix::from_elem((2, 2), 1.0)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_values_untouched() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adagrad, OptimizerKind::Adam] {
            let (mut s, id) = store();
            let mut opt = Optimizer::new(kind, 0.5, &s).unwrap();
            for _ in 0..3 {
                s.zero_grad();
                opt.step(&mut s);
            }
            assert_eq!(s.value(id), &Matrix::from_elem((2, 2), 1.0), "{kind}");
        }
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let (mut s, id) = store();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, &s).unwrap();
        let mut g = Matrix::zeros((2, 2));
        g[[0, 1]] = 2.0;
        s.iter_mut().next().unwrap().grad.assign(&g);
        opt.step(&mut s);
        assert_eq!(s.value(id)[[0, 1]], 0.0);
        assert_eq!(s.value(id)[[1, 1]], 1.0);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let (mut s, id) = store();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, &s).unwrap();
        s.iter_mut().next().unwrap().grad.fill(3.0);
        opt.step(&mut s);
        assert!((s.value(id)[[0, 0]] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn plateau_decay_halves_on_stall() {
        let (s, _) = store();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 1.0, &s).unwrap();
        let mut d = PlateauDecay::new(0.5).unwrap();
        assert_eq!(d.observe(0.3, &mut opt), None);
        assert_eq!(d.observe(0.3, &mut opt), Some(0.5));
        assert_eq!(d.observe(0.4, &mut opt), None);
        assert_eq!(d.observe(0.1, &mut opt), Some(0.25));
        assert!(PlateauDecay::new(0.0).is_err());
    }
}
