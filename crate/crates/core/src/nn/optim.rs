//! Optimizers and the learning-rate schedule.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exact value of the shortest decimal representation of `v`.
fn decimal(v: f64) -> Result<BigRational> {
    if !v.is_finite() {
        return Err(Error::Invalid(format!("{v} is not finite")));
    }
    let text = format!("{}", v.abs());
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let digits: BigInt = format!("{int}{frac}").parse().expect("decimal digits");
    let scale = num_traits::pow(BigInt::from(10), frac.len());
    let r = BigRational::new(digits, scale);
    Ok(if v < 0.0 { -r } else { r })
}

/// Step decay: `base * factor^floor(epoch / every)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub every: u32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 0.001,
            factor: 0.6,
            every: 20,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base.is_finite() && self.base > 0.0) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {}", self.base)));
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::Invalid(format!("decay factor must lie in (0, 1], got {}", self.factor)));
        }
        if self.every == 0 {
            return Err(Error::Invalid("decay interval must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate of `epoch`, evaluated in exact decimal arithmetic and
    /// rounded once.
    pub fn at(&self, epoch: u32) -> f64 {
        let base = decimal(self.base).expect("validated schedule");
        let factor = decimal(self.factor).expect("validated schedule");
        let mut r = base;
        let steps = epoch / self.every;
        let mut f = BigRational::one();
        for _ in 0..steps {
            f *= &factor;
        }
        r *= f;
        r.to_f64().unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Adam with bias correction, or plain gradient descent.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Adam => (vec![T::zero(); len], vec![T::zero(); len]),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::of(lr);
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p = *p - lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
                let (c1, c2) = (T::one() - b1, T::one() - b2);
                let bc1 = T::of(1.0 - self.beta1.powi(self.step));
                let bc2 = T::of(1.0 - self.beta2.powi(self.step));
                let (lr, eps) = (T::of(lr), T::of(self.eps));
                for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = b1 * *m + c1 * g;
                    *v = b2 * *v + c2 * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p = *p - lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}
