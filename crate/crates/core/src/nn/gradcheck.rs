//! Central finite-difference checks of the network gradient.

use super::loss::LossKind;
use super::network::{GroupInput, Network};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// The perturbation moved some activation across a kink or changed a
    /// pooling choice.
    pub crosses_kink: bool,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub within: usize,
    pub outliers: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn fraction_within(&self) -> f64 {
        self.within as f64 / self.checked.max(1) as f64
    }

    pub fn outliers_all_at_kinks(&self) -> bool {
        self.outliers.iter().all(|o| o.crosses_kink)
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares every parameter's analytic gradient of the group loss with a
/// central difference of step `h`.
pub fn check_network(
    net: &Network<f64>,
    input: &GroupInput<f64>,
    loss: LossKind,
    t: usize,
    h: f64,
    tolerance: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let fwd = net.forward(input)?;
    let (_, dout) = loss.evaluate(&fwd.output, t);
    let analytic = net.backward(&fwd, &dout)?;
    let mut work = net.clone();
    let mut report = GradCheckReport::default();
    for e in net.entries() {
        for i in 0..e.len() {
            let idx = e.offset + i;
            let orig = net.params[idx];
            work.params[idx] = orig + h;
            let fp = work.forward(input)?;
            let lp = loss.evaluate(&fp.output, t).0;
            work.params[idx] = orig - h;
            let fm = work.forward(input)?;
            let lm = loss.evaluate(&fm.output, t).0;
            work.params[idx] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let rel = relative_error(analytic[idx], numeric, floor);
            report.checked += 1;
            if rel <= tolerance {
                report.within += 1;
            } else {
                report.outliers.push(ParamCheck {
                    name: e.name.clone(),
                    index: i,
                    analytic: analytic[idx],
                    numeric,
                    rel_error: rel,
                    crosses_kink: fp.pattern() != fm.pattern() || fp.pattern() != fwd.pattern(),
                });
            }
        }
    }
    Ok(report)
}
