//! End-to-end attack runs, the proximity baseline and reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateGenerator, CandidateGroup};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureSet};
use crate::ingest::CellLibrary;
use crate::layout::{build_fragments, compute_ccr, Ccr, FragmentKind, GroundTruth, SplitLayout};
use crate::nn::{self, prediction_ccr, Model, NetworkConfig, Prediction, TrainConfig};

/// Candidate with the smallest Manhattan distance; ties go to the lowest
/// source fragment id.
pub fn baseline_proximity(group: &CandidateGroup) -> Option<usize> {
    (0..group.len()).min_by_key(|&j| {
        let c = &group.candidates[j];
        (c.manhattan(), c.source_fragment)
    })
}

fn proximity_prediction(group: &CandidateGroup, sink_pins: u32) -> Prediction {
    let candidate = baseline_proximity(group);
    let chosen = candidate.map(|j| &group.candidates[j]);
    Prediction {
        sink_fragment: group.sink_fragment,
        sink_pins,
        source_fragment: chosen.map(|c| c.source_fragment),
        candidate,
        correct: chosen.and_then(|c| match c.label {
            crate::candidates::Label::Positive => Some(true),
            crate::candidates::Label::Negative => Some(false),
            crate::candidates::Label::Unknown => None,
        }),
        scores: group.candidates.iter().map(|c| -(c.manhattan() as f64)).collect(),
    }
}

/// Outcome of attacking one design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub design: String,
    pub method: String,
    pub split_layer: u8,
    pub candidates: usize,
    pub sink_fragments: usize,
    pub source_fragments: usize,
    /// Present when ground truth was supplied.
    pub ccr: Option<Ccr>,
    pub extraction_seconds: f64,
    pub inference_seconds: f64,
    pub predictions: Vec<Prediction>,
}

impl AttackReport {
    pub fn ccr_percent(&self) -> Option<f64> {
        self.ccr.map(|c| c.percent())
    }

    /// Sink to selected source for every predictable sink.
    pub fn selection(&self) -> BTreeMap<u32, u32> {
        self.predictions
            .iter()
            .filter_map(|p| p.source_fragment.map(|s| (p.sink_fragment, s)))
            .collect()
    }

    /// Recomputes the CCR of the stored predictions against `truth`.
    pub fn evaluate(&self, truth: &GroundTruth) -> Result<Ccr> {
        compute_ccr(&self.selection(), truth)
    }

    /// The report without wall-clock fields, for byte comparisons.
    pub fn without_timing(&self) -> AttackReport {
        AttackReport {
            extraction_seconds: 0.0,
            inference_seconds: 0.0,
            ..self.clone()
        }
    }
}

fn fragment_counts(layout: &SplitLayout) -> Result<(usize, usize, crate::layout::Fragments)> {
    let f = build_fragments(layout)?;
    let sinks = f.list.iter().filter(|x| x.kind == FragmentKind::Sink).count();
    Ok((sinks, f.len() - sinks, f))
}

fn finish_ccr(preds: &[Prediction], truth: Option<&GroundTruth>) -> Result<Option<Ccr>> {
    let Some(truth) = truth else { return Ok(None) };
    let selected: BTreeMap<u32, u32> = preds
        .iter()
        .filter_map(|p| p.source_fragment.map(|s| (p.sink_fragment, s)))
        .collect();
    let ccr = compute_ccr(&selected, truth)?;
    let from_labels = prediction_ccr(preds);
    if (from_labels - ccr.fraction()).abs() > 1e-12 {
        return Err(Error::Invariant(format!(
            "label-based CCR {from_labels} disagrees with truth-based CCR {}",
            ccr.fraction()
        )));
    }
    Ok(Some(ccr))
}

/// Extracts features with the model's configuration and predicts every sink.
pub fn run_attack(
    model: &Model,
    layout: &SplitLayout,
    lib: &CellLibrary,
    truth: Option<&GroundTruth>,
) -> Result<(AttackReport, FeatureSet)> {
    let capacity = model.features.capacity;
    let start = Instant::now();
    let (sinks, sources, fragments) = fragment_counts(layout)?;
    let groups = CandidateGenerator::new(layout, &fragments).select_all(capacity, truth);
    let set = FeatureExtractor::new(layout, &fragments, lib, model.features.config.clone())?.extract(&groups, capacity)?;
    let extraction_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let predictions = model.predict_set(&set)?;
    let inference_seconds = start.elapsed().as_secs_f64();
    let ccr = finish_ccr(&predictions, truth)?;
    Ok((
        AttackReport {
            design: layout.design.clone(),
            method: model.loss.name().into(),
            split_layer: layout.split_layer,
            candidates: capacity,
            sink_fragments: sinks,
            source_fragments: sources,
            ccr,
            extraction_seconds,
            inference_seconds,
            predictions,
        },
        set,
    ))
}

/// Proximity attack over the same candidate groups the model would see.
pub fn run_baseline(layout: &SplitLayout, truth: Option<&GroundTruth>, capacity: usize) -> Result<AttackReport> {
    let start = Instant::now();
    let (sinks, sources, fragments) = fragment_counts(layout)?;
    let groups = CandidateGenerator::new(layout, &fragments).select_all(capacity, truth);
    let extraction_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let predictions: Vec<Prediction> = groups
        .iter()
        .map(|g| proximity_prediction(g, fragments.get(g.sink_fragment).sink_count()))
        .collect();
    let inference_seconds = start.elapsed().as_secs_f64();
    let ccr = finish_ccr(&predictions, truth)?;
    Ok(AttackReport {
        design: layout.design.clone(),
        method: "proximity".into(),
        split_layer: layout.split_layer,
        candidates: capacity,
        sink_fragments: sinks,
        source_fragments: sources,
        ccr,
        extraction_seconds,
        inference_seconds,
        predictions,
    })
}

/// Proximity predictions straight from a feature cache.
pub fn baseline_on_features(set: &FeatureSet) -> Vec<Prediction> {
    set.groups.iter().map(|g| proximity_prediction(&g.group, g.sink_pins)).collect()
}

/// Table-style summary: one row per report plus a pooled row.
pub fn summary_csv(reports: &[AttackReport]) -> String {
    let mut s = String::from("design,method,split_layer,sk,sc,ccr_percent,extraction_s,inference_s\n");
    let fmt_ccr = |c: Option<Ccr>| c.map(|c| format!("{:.2}", c.percent())).unwrap_or_default();
    for r in reports {
        writeln!(
            s,
            "{},{},{},{},{},{},{:.3},{:.3}",
            r.design,
            r.method,
            r.split_layer,
            r.sink_fragments,
            r.source_fragments,
            fmt_ccr(r.ccr),
            r.extraction_seconds,
            r.inference_seconds
        )
        .unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub softmax_regression_ccr: f64,
    pub two_class_ccr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Mean test CCR over the training seeds.
    pub softmax_regression_ccr: f64,
    pub two_class_ccr: f64,
    /// Softmax-regression CCR over two-class CCR.
    pub ratio: f64,
    pub runs: Vec<AblationRun>,
}

/// Trains one model per loss and training seed on the same data and
/// compares mean test CCR.
pub fn ablate(
    network: &NetworkConfig,
    train: &[&FeatureSet],
    val: &[&FeatureSet],
    test: &[&FeatureSet],
    tc: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Invalid("ablation needs at least one training seed".into()));
    }
    let run = |loss: nn::LossKind, seed: u64| -> Result<f64> {
        let mut net = network.clone();
        net.outputs = loss.outputs();
        let cfg = TrainConfig { loss, seed, ..tc.clone() };
        let (model, _) = nn::train(net, train, val, &cfg)?;
        nn::evaluate(&model, test)
    };
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        runs.push(AblationRun {
            seed,
            softmax_regression_ccr: run(nn::LossKind::SoftmaxRegression, seed)?,
            two_class_ccr: run(nn::LossKind::TwoClass, seed)?,
        });
    }
    let mean = |f: fn(&AblationRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let soft = mean(|r| r.softmax_regression_ccr);
    let two = mean(|r| r.two_class_ccr);
    Ok(AblationReport {
        softmax_regression_ccr: soft,
        two_class_ccr: two,
        ratio: if two > 0.0 { soft / two } else { f64::INFINITY },
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::{CandidateVpp, Label};

    fn group(d: &[(i64, u32)]) -> CandidateGroup {
        CandidateGroup {
            sink_fragment: 0,
            capacity: 31,
            candidates: d
                .iter()
                .map(|&(dist, src)| CandidateVpp {
                    sink_vpin: 0,
                    source_vpin: src,
                    sink_fragment: 0,
                    source_fragment: src,
                    dist_nonpref: dist,
                    dist_pref: 0,
                    label: Label::Unknown,
                })
                .collect(),
            contains_positive: false,
        }
    }

    #[test]
    fn proximity_picks_the_nearest() {
        assert_eq!(baseline_proximity(&group(&[(5, 1), (2, 2), (9, 3)])), Some(1));
        assert_eq!(baseline_proximity(&group(&[(2, 7), (2, 4)])), Some(1));
        assert_eq!(baseline_proximity(&group(&[])), None);
    }
}
