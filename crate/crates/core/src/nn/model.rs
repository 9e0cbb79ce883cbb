//! Trained model bundle and its binary container.
//!
//! Layout (little-endian): magic `SMDL`, `u32` format version, `u32` header
//! length, JSON [`ModelHeader`], then every parameter as `f32` in the order
//! of the header's parameter table (each layer's weight then bias; the
//! vector path, the convolution groups, the image head, the merged path).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::network::{GroupInput, Network, NetworkConfig, ParamEntry};
use crate::binio::{Reader, Writer};
use crate::candidates::{CandidateVpp, Label};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureHeader, FeatureSet, GroupFeatures, NormalizationStats};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"SMDL";
pub const MODEL_VERSION: u32 = 1;

/// What the model expects of its input features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFeatures {
    pub names: Vec<String>,
    pub split_layer: u8,
    pub capacity: usize,
    pub config: FeatureConfig,
}

impl ModelFeatures {
    pub fn from_header(h: &FeatureHeader) -> Self {
        ModelFeatures {
            names: h.names.clone(),
            split_layer: h.split_layer,
            capacity: h.capacity,
            config: h.config.clone(),
        }
    }

    pub fn check(&self, h: &FeatureHeader) -> Result<()> {
        if self.names != h.names
            || self.split_layer != h.split_layer
            || self.config != h.config
        {
            return Err(Error::Invalid(format!(
                "features of {} (m={}, F={}, scales={:?}, size={}) do not match the model (m={}, F={}, scales={:?}, size={})",
                h.design,
                h.split_layer,
                h.feature_count,
                h.config.scales,
                h.config.image_size,
                self.split_layer,
                self.names.len(),
                self.config.scales,
                self.config.image_size
            )));
        }
        Ok(())
    }

    pub fn image_channels(&self) -> usize {
        self.config.encoding.channels(self.config.scales.len(), self.split_layer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub network: NetworkConfig,
    pub loss: LossKind,
    pub features: ModelFeatures,
    pub normalization: NormalizationStats,
    pub parameters: Vec<ParamEntry>,
}

/// The selection made for one sink fragment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sink_fragment: u32,
    pub sink_pins: u32,
    /// `None` when the sink had no candidates.
    pub source_fragment: Option<u32>,
    pub candidate: Option<usize>,
    pub correct: Option<bool>,
    pub scores: Vec<f64>,
}

/// Index of the highest score; ties go to the lowest source fragment id.
pub fn select_best(scores: &[f64], candidates: &[CandidateVpp]) -> Option<usize> {
    (0..scores.len().min(candidates.len())).reduce(|best, j| {
        let better = scores[j] > scores[best]
            || (scores[j] == scores[best] && candidates[j].source_fragment < candidates[best].source_fragment);
        if better {
            j
        } else {
            best
        }
    })
}

pub(crate) fn prediction_of(g: &GroupFeatures, scores: Vec<f64>) -> Prediction {
    let candidate = select_best(&scores, &g.group.candidates);
    let chosen = candidate.map(|j| &g.group.candidates[j]);
    Prediction {
        sink_fragment: g.group.sink_fragment,
        sink_pins: g.sink_pins,
        source_fragment: chosen.map(|c| c.source_fragment),
        candidate,
        correct: chosen.and_then(|c| match c.label {
            Label::Positive => Some(true),
            Label::Negative => Some(false),
            Label::Unknown => None,
        }),
        scores,
    }
}

/// Builds the network input of a group: normalized vectors and, when
/// `with_images` is set, the sink image followed by one image per
/// candidate source.
pub fn group_input<T: Scalar>(
    set: &FeatureSet,
    g: &GroupFeatures,
    stats: &NormalizationStats,
    with_images: bool,
) -> Result<GroupInput<T>> {
    let m = set.header.split_layer;
    let enc = set.header.config.encoding;
    let mut vectors = Vec::with_capacity(g.len() * set.header.feature_count);
    for v in &g.vectors {
        vectors.extend(stats.applied(v).into_iter().map(T::of));
    }
    let mut images = Vec::new();
    if with_images {
        set.sink_image(g)?.write_channels(m, enc, &mut images);
        for c in &g.group.candidates {
            set.image(c.source_vpin)?.write_channels(m, enc, &mut images);
        }
    }
    Ok(GroupInput {
        n: g.len(),
        vectors,
        images,
    })
}

#[derive(Clone, Debug)]
pub struct Model {
    pub network: Network<f32>,
    pub loss: LossKind,
    pub features: ModelFeatures,
    pub normalization: NormalizationStats,
}

impl Model {
    pub fn header(&self) -> ModelHeader {
        ModelHeader {
            network: self.network.config().clone(),
            loss: self.loss,
            features: self.features.clone(),
            normalization: self.normalization.clone(),
            parameters: self.network.entries().to_vec(),
        }
    }

    /// Ranking score of every candidate of a nonempty group.
    pub fn score_group(&self, set: &FeatureSet, g: &GroupFeatures) -> Result<Vec<f64>> {
        let input = group_input::<f32>(set, g, &self.normalization, self.network.config().uses_images())?;
        let fwd = self.network.forward(&input)?;
        Ok(fwd.scores().into_iter().map(f64::from).collect())
    }

    pub fn predict_group(&self, set: &FeatureSet, g: &GroupFeatures) -> Result<Prediction> {
        let scores = if g.is_empty() {
            Vec::new()
        } else {
            self.score_group(set, g)?
        };
        Ok(prediction_of(g, scores))
    }

    /// Predictions for every group, in group order.
    pub fn predict_set(&self, set: &FeatureSet) -> Result<Vec<Prediction>> {
        self.features.check(&set.header)?;
        set.groups.par_iter().map(|g| self.predict_group(set, g)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        w.len_u32(header.len());
        w.bytes(&header);
        for &p in &self.network.params {
            w.f32(p);
        }
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data, Error::Model);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Model("bad magic, not a model file".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported version {version}, expected {MODEL_VERSION}")));
        }
        let hlen = r.u32()? as usize;
        let h: ModelHeader =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Model(format!("header: {e}")))?;
        h.network.validate()?;
        let fcount = h.features.names.len();
        if h.network.feature_count != fcount || h.normalization.len() != fcount {
            return Err(Error::Model(format!(
                "header declares F = {} but the feature ledger has {} entries and normalization {}",
                h.network.feature_count,
                fcount,
                h.normalization.len()
            )));
        }
        if h.network.uses_images() && h.network.image_channels != h.features.image_channels() {
            return Err(Error::Model(format!(
                "network expects {} image channels, features provide {}",
                h.network.image_channels,
                h.features.image_channels()
            )));
        }
        let expected = super::network::param_count(&h.network);
        if r.remaining() != expected * 4 {
            return Err(Error::Model(format!(
                "parameter blob is {} bytes, header configuration needs {} ({} parameters)",
                r.remaining(),
                expected * 4,
                expected
            )));
        }
        let params = (0..expected).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let network = Network::from_params(h.network, params)?;
        if network.entries() != h.parameters.as_slice() {
            return Err(Error::Model("parameter table does not match the configuration".into()));
        }
        Ok(Model {
            network,
            loss: h.loss,
            features: h.features,
            normalization: h.normalization,
        })
    }
}
