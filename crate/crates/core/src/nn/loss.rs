//! Group losses over candidate scores.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Negative log-softmax of the true candidate within its group.
    #[default]
    SoftmaxRegression,
    /// Independent connection / non-connection classification per candidate.
    TwoClass,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::SoftmaxRegression => "softmax_regression",
            LossKind::TwoClass => "two_class",
        }
    }

    pub fn outputs(self) -> usize {
        match self {
            LossKind::SoftmaxRegression => 1,
            LossKind::TwoClass => 2,
        }
    }

    /// Loss and gradient for a network output of `n x outputs()`.
    pub fn evaluate<T: Scalar>(self, output: &[T], t: usize) -> (f64, Vec<T>) {
        match self {
            LossKind::SoftmaxRegression => softmax_regression_loss(output, t),
            LossKind::TwoClass => {
                let plus: Vec<T> = output.iter().step_by(2).copied().collect();
                let minus: Vec<T> = output.iter().skip(1).step_by(2).copied().collect();
                let (loss, dplus, dminus) = two_class_loss(&plus, &minus, t);
                let grad = dplus.into_iter().zip(dminus).flat_map(|(p, m)| [p, m]).collect();
                (loss, grad)
            }
        }
    }
}

/// Softmax probabilities of `scores`, computed with max-shift in `f64`.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `-log(exp(s_t) / sum_j exp(s_j))` and its gradient `softmax(s) - onehot(t)`.
///
/// `t` is zero-based.
pub fn softmax_regression_loss<T: Scalar>(scores: &[T], t: usize) -> (f64, Vec<T>) {
    assert!(t < scores.len(), "true index {t} out of range for {} scores", scores.len());
    let s: Vec<f64> = scores.iter().map(|v| v.f64()).collect();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + s.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let p = softmax(&s);
    let grad = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| T::of(if j == t { pj - 1.0 } else { pj }))
        .collect();
    (lse - s[t], grad)
}

/// `ln(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function without overflow.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Averaged two-class cross-entropy with the true candidate `t` (zero-based)
/// as the only connection. Returns the loss and the gradients with respect
/// to the connection and non-connection scores; the latter is the exact
/// negation of the former.
pub fn two_class_loss<T: Scalar>(plus: &[T], minus: &[T], t: usize) -> (f64, Vec<T>, Vec<T>) {
    assert_eq!(plus.len(), minus.len());
    assert!(t < plus.len(), "true index {t} out of range for {} pairs", plus.len());
    let n = plus.len() as f64;
    let mut loss = 0.0;
    let mut dplus = Vec::with_capacity(plus.len());
    for (j, (&sp, &sm)) in plus.iter().zip(minus).enumerate() {
        let d = sp.f64() - sm.f64();
        if j == t {
            loss += softplus(-d);
            dplus.push(-sigmoid(-d) / n);
        } else {
            loss += softplus(d);
            dplus.push(sigmoid(d) / n);
        }
    }
    let dplus: Vec<T> = dplus.into_iter().map(T::of).collect();
    let dminus = dplus.iter().map(|&g| -g).collect();
    (loss / n, dplus, dminus)
}
