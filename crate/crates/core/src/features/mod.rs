//! Vector and image features of candidate virtual pin pairs.

mod cache;
mod normalize;
mod raster;
mod vector;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{load_feature_set, save_feature_set, CACHE_MAGIC, CACHE_VERSION};
pub use normalize::NormalizationStats;
pub use raster::{ImageEncoding, ImageStack, LayoutImage, Rasterizer, DEFAULT_IMAGE_SIZE, DEFAULT_SCALES};
pub use vector::{driver_delay_lb, layer_wirelengths_vias, load_cap_bounds, vpp_distances, CapBounds, FragmentStats};

use crate::candidates::{CandidateGroup, CandidateVpp, Label};
use crate::error::{Error, Result};
use crate::ingest::CellLibrary;
use crate::layout::{Fragments, SplitLayout};

/// Number of vector features for split layer `m`.
pub fn feature_count(split_layer: u8) -> usize {
    4 * split_layer as usize + 15
}

/// Names of the vector features in order.
pub fn feature_names(split_layer: u8) -> Vec<String> {
    let m = split_layer as usize;
    let mut names: Vec<String> = [
        "dist_pref",
        "dist_nonpref",
        "dist_sum",
        "abs_pref",
        "abs_nonpref",
        "abs_sum",
        "ratio_pref",
        "ratio_nonpref",
        "ratio_sum",
        "abs_ratio_pref",
        "abs_ratio_nonpref",
        "abs_ratio_sum",
        "cap_upper_ff",
        "cap_lower_ff",
        "sink_count",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for who in ["sink", "source"] {
        names.extend((1..=m).map(|l| format!("{who}_wl_m{l}_um")));
    }
    for who in ["sink", "source"] {
        names.extend((1..m).map(|c| format!("{who}_vias_v{c}{}", c + 1)));
    }
    names.push("driver_delay_ps".into());
    names.push("total_wl_um".into());
    names
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    /// Microns per pixel of each raster.
    pub scales: Vec<f64>,
    pub image_size: usize,
    #[serde(default)]
    pub encoding: ImageEncoding,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            scales: DEFAULT_SCALES.to_vec(),
            image_size: DEFAULT_IMAGE_SIZE,
            encoding: ImageEncoding::BitPlanes,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Invalid(format!("scales must be positive: {:?}", self.scales)));
        }
        if self.image_size == 0 || self.image_size.is_multiple_of(2) {
            return Err(Error::Invalid(format!("image size must be odd, got {}", self.image_size)));
        }
        Ok(())
    }
}

/// Features of one candidate group. Images live in the owning [`FeatureSet`]
/// keyed by virtual pin.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupFeatures {
    pub group: CandidateGroup,
    /// Sink pins held by the sink fragment.
    pub sink_pins: u32,
    /// Virtual pin whose raster represents the sink fragment.
    pub sink_vpin: Option<u32>,
    pub vectors: Vec<Vec<f64>>,
}

impl GroupFeatures {
    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureHeader {
    pub design: String,
    pub feature_count: usize,
    pub split_layer: u8,
    pub capacity: usize,
    pub config: FeatureConfig,
    pub names: Vec<String>,
}

/// Extracted features of a whole design.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub header: FeatureHeader,
    pub groups: Vec<GroupFeatures>,
    pub images: BTreeMap<u32, ImageStack>,
}

impl FeatureSet {
    pub fn image(&self, vpin: u32) -> Result<&ImageStack> {
        self.images
            .get(&vpin)
            .ok_or_else(|| Error::Cache(format!("no image for virtual pin {vpin}")))
    }

    pub fn sink_image(&self, g: &GroupFeatures) -> Result<&ImageStack> {
        let v = g
            .sink_vpin
            .ok_or_else(|| Error::Invalid(format!("sink fragment {} has no candidates", g.group.sink_fragment)))?;
        self.image(v)
    }

    /// Total sink pins over every group.
    pub fn total_sink_pins(&self) -> u64 {
        self.groups.iter().map(|g| g.sink_pins as u64).sum()
    }

    pub fn check_compatible(&self, other: &FeatureHeader) -> Result<()> {
        let h = &self.header;
        if h.feature_count != other.feature_count
            || h.split_layer != other.split_layer
            || h.config.scales != other.config.scales
            || h.config.image_size != other.config.image_size
        {
            return Err(Error::Invalid(format!(
                "feature layout mismatch: F={} m={} scales={:?} size={} vs F={} m={} scales={:?} size={}",
                h.feature_count,
                h.split_layer,
                h.config.scales,
                h.config.image_size,
                other.feature_count,
                other.split_layer,
                other.config.scales,
                other.config.image_size
            )));
        }
        Ok(())
    }
}

pub struct FeatureExtractor<'a> {
    layout: &'a SplitLayout,
    fragments: &'a Fragments,
    stats: Vec<FragmentStats>,
    rasterizer: Rasterizer<'a>,
    config: FeatureConfig,
    names: Vec<String>,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(layout: &'a SplitLayout, fragments: &'a Fragments, lib: &CellLibrary, config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        let pins = lib.resolve_pins(&layout.cells, &layout.pins)?;
        let stats = fragments
            .list
            .iter()
            .enumerate()
            .map(|(i, f)| {
                debug_assert_eq!(f.id as usize, i);
                FragmentStats::new(f, layout, &pins)
            })
            .collect();
        Ok(FeatureExtractor {
            layout,
            fragments,
            stats,
            rasterizer: Rasterizer::new(layout, fragments, config.image_size)?,
            names: feature_names(layout.split_layer),
            config,
        })
    }

    pub fn fragment_stats(&self, fragment: u32) -> &FragmentStats {
        &self.stats[fragment as usize]
    }

    pub fn rasterizer(&self) -> &Rasterizer<'a> {
        &self.rasterizer
    }

    /// Vector features of one pair in ledger order.
    pub fn vector(&self, vpp: &CandidateVpp) -> Result<Vec<f64>> {
        let layout = self.layout;
        let p = layout.virtual_pins[vpp.sink_vpin as usize].at;
        let q = layout.virtual_pins[vpp.source_vpin as usize].at;
        let sink = &self.stats[vpp.sink_fragment as usize];
        let source = &self.stats[vpp.source_fragment as usize];
        let sink_count = self.fragments.get(vpp.sink_fragment).sink_count();
        let caps = load_cap_bounds(sink, sink_count, source)?;
        let driver = source.driver.expect("checked by load_cap_bounds");
        let mut v = Vec::with_capacity(self.names.len());
        v.extend(vpp_distances(p, q, layout)?);
        v.push(caps.upper_f * 1e15);
        v.push(caps.lower_f * 1e15);
        v.push(caps.sink_count as f64);
        v.extend(layer_wirelengths_vias(sink, source));
        v.push(driver_delay_lb(&driver, caps.lower_f) * 1e12);
        v.push(sink.total_wirelength_um() + source.total_wirelength_um());
        if vpp.label == Label::Positive && caps.lower_f > caps.upper_f {
            log::debug!(
                "sink fragment {}: true source {} violates its load bound ({:.3} fF > {:.3} fF)",
                vpp.sink_fragment,
                vpp.source_fragment,
                caps.lower_f * 1e15,
                caps.upper_f * 1e15
            );
        }
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteFeature {
                sink_fragment: vpp.sink_fragment,
                index,
                name: self.names[index].clone(),
            });
        }
        Ok(v)
    }

    pub fn group(&self, group: &CandidateGroup) -> Result<GroupFeatures> {
        Ok(GroupFeatures {
            group: group.clone(),
            sink_pins: self.fragments.get(group.sink_fragment).sink_count(),
            sink_vpin: group.candidates.first().map(|c| c.sink_vpin),
            vectors: group.candidates.iter().map(|c| self.vector(c)).collect::<Result<_>>()?,
        })
    }

    pub fn image(&self, vpin: u32) -> Result<ImageStack> {
        self.rasterizer.stack(vpin, &self.config.scales)
    }

    pub fn header(&self, capacity: usize) -> FeatureHeader {
        FeatureHeader {
            design: self.layout.design.clone(),
            feature_count: self.names.len(),
            split_layer: self.layout.split_layer,
            capacity,
            config: self.config.clone(),
            names: self.names.clone(),
        }
    }

    /// Extracts every group plus the rasters of every referenced virtual pin.
    pub fn extract(&self, groups: &[CandidateGroup], capacity: usize) -> Result<FeatureSet> {
        let feats = groups.par_iter().map(|g| self.group(g)).collect::<Result<Vec<_>>>()?;
        let vpins: BTreeSet<u32> = feats
            .iter()
            .flat_map(|g| g.sink_vpin.into_iter().chain(g.group.candidates.iter().map(|c| c.source_vpin)))
            .collect();
        let vpins: Vec<u32> = vpins.into_iter().collect();
        let stacks = vpins.par_iter().map(|&v| self.image(v)).collect::<Result<Vec<_>>>()?;
        Ok(FeatureSet {
            header: self.header(capacity),
            groups: feats,
            images: vpins.into_iter().zip(stacks).collect(),
        })
    }
}

/// Runs fragment construction, candidate selection and extraction.
pub fn extract_design(
    layout: &SplitLayout,
    lib: &CellLibrary,
    config: FeatureConfig,
    capacity: usize,
    truth: Option<&crate::layout::GroundTruth>,
) -> Result<FeatureSet> {
    let fragments = crate::layout::build_fragments(layout)?;
    let groups = crate::candidates::CandidateGenerator::new(layout, &fragments).select_all(capacity, truth);
    FeatureExtractor::new(layout, &fragments, lib, config)?.extract(&groups, capacity)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_length_matches_count() {
        for m in 1..=6 {
            assert_eq!(feature_names(m).len(), feature_count(m));
        }
        assert_eq!(feature_count(3), 27);
        let n = feature_names(3);
        assert_eq!(n[15], "sink_wl_m1_um");
        assert_eq!(n[21], "sink_vias_v12");
        assert_eq!(n[26], "total_wl_um");
    }
}
