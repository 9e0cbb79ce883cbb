//! Binary feature cache.
//!
//! Layout (little-endian): magic `SMFC`, `u32` version, `u32` header length,
//! JSON [`FeatureHeader`], `u32` image count, then per image the virtual pin
//! id, its center and `scales × size²` `u16` pixels, then `u32` group count
//! and per group its candidates with their `f64` feature vectors.

use std::collections::BTreeMap;

use super::{FeatureHeader, FeatureSet, GroupFeatures, ImageStack, LayoutImage};
use crate::binio::{Reader, Writer};
use crate::candidates::{CandidateGroup, CandidateVpp, Label};
use crate::error::{Error, Result};
use crate::geom::Point;

pub const CACHE_MAGIC: &[u8; 4] = b"SMFC";
pub const CACHE_VERSION: u32 = 1;

fn label_code(l: Label) -> u8 {
    match l {
        Label::Unknown => 0,
        Label::Positive => 1,
        Label::Negative => 2,
    }
}

pub fn save_feature_set(set: &FeatureSet) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(CACHE_MAGIC);
    w.u32(CACHE_VERSION);
    let header = serde_json::to_vec(&set.header).expect("header serializes");
    w.len_u32(header.len());
    w.bytes(&header);
    w.len_u32(set.images.len());
    for (&vpin, stack) in &set.images {
        w.u32(vpin);
        w.i64(stack.center.x);
        w.i64(stack.center.y);
        for img in &stack.images {
            for &p in &img.pixels {
                w.u16(p);
            }
        }
    }
    w.len_u32(set.groups.len());
    for g in &set.groups {
        w.u32(g.group.sink_fragment);
        w.len_u32(g.group.capacity);
        w.u8(g.group.contains_positive as u8);
        w.u32(g.sink_pins);
        w.u32(g.sink_vpin.map_or(u32::MAX, |v| v));
        w.len_u32(g.group.candidates.len());
        for (c, v) in g.group.candidates.iter().zip(&g.vectors) {
            w.u32(c.sink_vpin);
            w.u32(c.source_vpin);
            w.u32(c.sink_fragment);
            w.u32(c.source_fragment);
            w.i64(c.dist_nonpref);
            w.i64(c.dist_pref);
            w.u8(label_code(c.label));
            for &x in v {
                w.f64(x);
            }
        }
    }
    w.buf
}

pub fn load_feature_set(data: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader::new(data, Error::Cache);
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::Cache("bad magic, not a feature cache".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("unsupported version {version}, expected {CACHE_VERSION}")));
    }
    let hlen = r.u32()? as usize;
    let header: FeatureHeader =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Cache(format!("header: {e}")))?;
    if header.names.len() != header.feature_count {
        return Err(Error::Cache(format!(
            "header lists {} feature names for F = {}",
            header.names.len(),
            header.feature_count
        )));
    }
    let size = header.config.image_size;
    let f = header.feature_count;
    let nimg = r.u32()? as usize;
    let mut images = BTreeMap::new();
    for _ in 0..nimg {
        let vpin = r.u32()?;
        let center = Point::new(r.i64()?, r.i64()?);
        let images_of = header
            .config
            .scales
            .iter()
            .map(|_| {
                let pixels = (0..size * size).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
                Ok(LayoutImage { size, pixels })
            })
            .collect::<Result<Vec<_>>>()?;
        images.insert(
            vpin,
            ImageStack {
                vpin,
                center,
                images: images_of,
            },
        );
    }
    let ngroups = r.u32()? as usize;
    let mut groups = Vec::with_capacity(ngroups.min(1 << 20));
    for _ in 0..ngroups {
        let sink_fragment = r.u32()?;
        let capacity = r.u32()? as usize;
        let contains_positive = r.u8()? != 0;
        let sink_pins = r.u32()?;
        let sink_vpin = Some(r.u32()?).filter(|&v| v != u32::MAX);
        let n = r.u32()? as usize;
        let mut candidates = Vec::with_capacity(n.min(1 << 16));
        let mut vectors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let c = CandidateVpp {
                sink_vpin: r.u32()?,
                source_vpin: r.u32()?,
                sink_fragment: r.u32()?,
                source_fragment: r.u32()?,
                dist_nonpref: r.i64()?,
                dist_pref: r.i64()?,
                label: match r.u8()? {
                    0 => Label::Unknown,
                    1 => Label::Positive,
                    2 => Label::Negative,
                    x => return Err(Error::Cache(format!("bad label code {x}"))),
                },
            };
            vectors.push((0..f).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
            candidates.push(c);
        }
        groups.push(GroupFeatures {
            group: CandidateGroup {
                sink_fragment,
                capacity,
                candidates,
                contains_positive,
            },
            sink_pins,
            sink_vpin,
            vectors,
        });
    }
    r.finish()?;
    Ok(FeatureSet { header, groups, images })
}
