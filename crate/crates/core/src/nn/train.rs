//! Training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::model::{group_input, Model, ModelFeatures, Prediction};
use super::network::{Network, NetworkConfig};
use super::optim::{LrSchedule, Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::features::{FeatureSet, NormalizationStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    /// Keep the parameters of the epoch with the best validation CCR rather
    /// than those of the last epoch.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            schedule: LrSchedule::default(),
            seed: 0,
            optimizer: OptimizerKind::Adam,
            loss: LossKind::SoftmaxRegression,
            keep_best: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub loss: f64,
    /// `None` without validation data.
    pub val_ccr: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub kept_epoch: Option<u32>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_ccr,lr\n");
        for r in &self.epochs {
            let val = r.val_ccr.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{}", r.epoch, r.loss, val, r.lr).unwrap();
        }
        s
    }
}

/// Sink-pin weighted fraction of correct predictions.
pub fn prediction_ccr(preds: &[Prediction]) -> f64 {
    let total: u64 = preds.iter().map(|p| p.sink_pins as u64).sum();
    let good: u64 = preds
        .iter()
        .filter(|p| p.correct == Some(true))
        .map(|p| p.sink_pins as u64)
        .sum();
    if total == 0 {
        0.0
    } else {
        good as f64 / total as f64
    }
}

/// Pooled CCR of a model over several designs.
pub fn evaluate(model: &Model, sets: &[&FeatureSet]) -> Result<f64> {
    let mut preds = Vec::new();
    for s in sets {
        preds.extend(model.predict_set(s)?);
    }
    Ok(prediction_ccr(&preds))
}

/// Fits normalization over every candidate vector of the training groups
/// that carry a positive.
pub fn fit_normalization(sets: &[&FeatureSet]) -> Result<NormalizationStats> {
    NormalizationStats::fit(
        sets.iter()
            .flat_map(|s| s.groups.iter().filter(|g| g.group.contains_positive))
            .flat_map(|g| g.vectors.iter().map(|v| v.as_slice())),
    )
}

/// Trains a network on `train`, selecting by CCR on `val`.
pub fn train(
    network: NetworkConfig,
    train: &[&FeatureSet],
    val: &[&FeatureSet],
    tc: &TrainConfig,
) -> Result<(Model, History)> {
    tc.schedule.validate()?;
    let first = train.first().ok_or_else(|| Error::Invalid("no training data".into()))?;
    for s in train.iter().chain(val) {
        s.check_compatible(&first.header)?;
    }
    let features = ModelFeatures::from_header(&first.header);
    if network.feature_count != features.names.len()
        || (network.uses_images() && network.image_channels != features.image_channels())
    {
        return Err(Error::Invalid(format!(
            "network expects F={} and {} image channels, features provide F={} and {}",
            network.feature_count,
            network.image_channels,
            features.names.len(),
            features.image_channels()
        )));
    }
    if network.uses_images() && network.image_size != features.config.image_size {
        return Err(Error::Invalid(format!(
            "network expects {}-pixel images, features have {}",
            network.image_size, features.config.image_size
        )));
    }
    if network.outputs != tc.loss.outputs() {
        return Err(Error::Invalid(format!(
            "{:?} loss needs {} outputs, network has {}",
            tc.loss,
            tc.loss.outputs(),
            network.outputs
        )));
    }
    let examples: Vec<(usize, usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            s.groups
                .iter()
                .enumerate()
                .filter_map(move |(gi, g)| g.group.positive_index().map(|t| (si, gi, t)))
        })
        .collect();
    if examples.is_empty() {
        return Err(Error::Invalid("training set has no group containing its true source".into()));
    }
    let normalization = fit_normalization(train)?;
    let mut model = Model {
        network: Network::new(network, tc.seed)?,
        loss: tc.loss,
        features,
        normalization,
    };
    let mut opt = Optimizer::<f32>::new(tc.optimizer, model.network.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order = examples;
    let mut history = History::default();
    let mut best: Option<(f64, Vec<f32>)> = None;
    for epoch in 0..tc.epochs {
        let lr = tc.schedule.at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &(si, gi, t) in &order {
            let set = train[si];
            let input = group_input::<f32>(set, &set.groups[gi], &model.normalization, model.network.config().uses_images())?;
            let fwd = model.network.forward(&input)?;
            let (loss, dout) = tc.loss.evaluate(&fwd.output, t);
            if !loss.is_finite() {
                return Err(Error::Invariant(format!("non-finite training loss at epoch {epoch}")));
            }
            total += loss;
            let grads = model.network.backward(&fwd, &dout)?;
            opt.update(&mut model.network.params, &grads, lr);
        }
        let loss = total / order.len() as f64;
        let val_ccr = if val.is_empty() {
            None
        } else {
            Some(evaluate(&model, val)?)
        };
        log::info!(
            "epoch {epoch}: loss {loss:.6} lr {lr} val_ccr {}",
            val_ccr.map_or("-".into(), |v| format!("{:.4}", v))
        );
        history.epochs.push(EpochRecord { epoch, loss, val_ccr, lr });
        if let (true, Some(v)) = (tc.keep_best, val_ccr) {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, model.network.params.clone()));
                history.kept_epoch = Some(epoch);
            }
        }
    }
    match best {
        Some((_, params)) => model.network.params = params,
        None => history.kept_epoch = tc.epochs.checked_sub(1),
    }
    Ok((model, history))
}
