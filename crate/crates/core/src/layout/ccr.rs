use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GroundTruth;
use crate::error::{Error, Result};

/// Sink-pin weighted correct connection rate, kept as exact counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ccr {
    pub correct_pins: u64,
    pub total_pins: u64,
}

impl Ccr {
    pub fn fraction(&self) -> f64 {
        self.correct_pins as f64 / self.total_pins as f64
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.fraction()
    }
}

/// Weighs each sink fragment by its sink count; sinks missing from
/// `selected` count as wrong.
pub fn compute_ccr(selected: &BTreeMap<u32, u32>, truth: &GroundTruth) -> Result<Ccr> {
    if truth.is_empty() {
        return Err(Error::Invalid("ground truth holds no sink fragments".into()));
    }
    let mut ccr = Ccr {
        correct_pins: 0,
        total_pins: 0,
    };
    for e in &truth.entries {
        ccr.total_pins += e.sink_count as u64;
        if selected.get(&e.sink) == Some(&e.source) {
            ccr.correct_pins += e.sink_count as u64;
        }
    }
    if ccr.total_pins == 0 {
        return Err(Error::Invalid("ground truth holds no sink pins".into()));
    }
    Ok(ccr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::TruthEntry;

    fn truth(counts: &[(u32, u32, u32)]) -> GroundTruth {
        GroundTruth::new(
            counts
                .iter()
                .map(|&(sink, source, sink_count)| TruthEntry { sink, source, sink_count })
                .collect(),
        )
    }

    #[test]
    fn all_correct_is_one() {
        let t = truth(&[(0, 5, 1), (1, 6, 2)]);
        let sel = BTreeMap::from([(0, 5), (1, 6)]);
        assert_eq!(compute_ccr(&sel, &t).unwrap().fraction(), 1.0);
    }

    #[test]
    fn weights_by_sink_count() {
        let t = truth(&[(0, 5, 1), (1, 6, 3)]);
        let sel = BTreeMap::from([(0, 9), (1, 6)]);
        assert_eq!(compute_ccr(&sel, &t).unwrap().fraction(), 0.75);
    }

    #[test]
    fn missing_selection_counts_as_wrong() {
        let t = truth(&[(0, 5, 1), (1, 6, 1)]);
        let sel = BTreeMap::from([(1, 6)]);
        assert_eq!(compute_ccr(&sel, &t).unwrap().fraction(), 0.5);
    }

    #[test]
    fn empty_truth_is_rejected() {
        assert!(compute_ccr(&BTreeMap::new(), &GroundTruth::default()).is_err());
    }
}
