//! Readers and writers for layouts, libraries and ground truth.

mod def;
mod library;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use def::{emit_def, parse_def_subset};
pub use library::{
    load_library, save_library, CellLibrary, DriverElectrical, LibPin, Master, PinElectrical, PortElectrical,
    DEFAULT_DRIVE_RES_OHM, DEFAULT_INTRINSIC_DELAY_S,
};

use crate::error::{Error, Result};
use crate::layout::{FullLayout, GroundTruth, SplitLayout, TechConfig};

/// Deserializes JSON, reporting the path to the offending field on failure.
pub(crate) fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: match e.path().to_string() {
            p if p == "." => "<root>".to_string(),
            p => p,
        },
        message: e.inner().to_string(),
    })
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("in-memory values serialize");
    s.push('\n');
    s
}

#[derive(Clone, Debug, PartialEq)]
pub enum NativeLayout {
    Full(FullLayout),
    Split(SplitLayout),
}

impl NativeLayout {
    pub fn into_full(self) -> Result<FullLayout> {
        match self {
            NativeLayout::Full(f) => Ok(f),
            NativeLayout::Split(_) => Err(Error::Invalid("expected a full layout, got a split layout".into())),
        }
    }

    pub fn into_split(self) -> Result<SplitLayout> {
        match self {
            NativeLayout::Split(s) => Ok(s),
            NativeLayout::Full(_) => Err(Error::Invalid("expected a split layout, got a full layout".into())),
        }
    }
}

/// Parses a native JSON layout. Split files are recognized by their
/// `split_layer` key.
pub fn load_native(text: &str) -> Result<NativeLayout> {
    let is_split = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(text)
        .map(|m| m.contains_key("split_layer"))
        .unwrap_or(false);
    if is_split {
        let s: SplitLayout = from_json(text)?;
        s.validate()?;
        Ok(NativeLayout::Split(s))
    } else {
        let f: FullLayout = from_json(text)?;
        f.validate()?;
        Ok(NativeLayout::Full(f))
    }
}

pub fn save_native(layout: &NativeLayout) -> String {
    match layout {
        NativeLayout::Full(f) => save_full(f),
        NativeLayout::Split(s) => save_split(s),
    }
}

pub fn save_full(layout: &FullLayout) -> String {
    to_json(layout)
}

pub fn save_split(layout: &SplitLayout) -> String {
    to_json(layout)
}

pub fn load_tech(text: &str) -> Result<TechConfig> {
    let t: TechConfig = from_json(text)?;
    t.validate()?;
    Ok(t)
}

pub fn save_tech(tech: &TechConfig) -> String {
    to_json(tech)
}

pub fn load_truth(text: &str) -> Result<GroundTruth> {
    let t: GroundTruth = from_json(text)?;
    if t.entries.windows(2).any(|w| w[0].sink >= w[1].sink) {
        return Err(Error::Schema {
            path: "entries".into(),
            message: "sink ids must be strictly increasing".into(),
        });
    }
    Ok(t)
}

pub fn save_truth(truth: &GroundTruth) -> String {
    to_json(truth)
}
