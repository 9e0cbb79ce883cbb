//! Pin-centered layout rasters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, Rect};
use crate::layout::spatial::ShapeIndex;
use crate::layout::{Fragments, SplitLayout};
use crate::scalar::Scalar;

pub const DEFAULT_IMAGE_SIZE: usize = 99;
pub const DEFAULT_SCALES: [f64; 3] = [0.05, 0.1, 0.2];

/// How an image stack is presented to the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageEncoding {
    /// One binary channel per layer bit per scale.
    #[default]
    BitPlanes,
    /// One channel per scale holding the pixel value scaled into `[0, 1]`.
    Packed,
}

impl ImageEncoding {
    pub fn channels(self, scales: usize, split_layer: u8) -> usize {
        match self {
            ImageEncoding::BitPlanes => scales * 2 * split_layer as usize,
            ImageEncoding::Packed => scales,
        }
    }
}

/// A square raster of `2m` layer bits per pixel, row-major with row 0 at the
/// lowest y.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutImage {
    pub size: usize,
    pub pixels: Vec<u16>,
}

impl LayoutImage {
    pub fn empty(size: usize) -> Self {
        LayoutImage {
            size,
            pixels: vec![0; size * size],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.size + col]
    }
}

/// Rasters of one virtual pin at several scales.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageStack {
    pub vpin: u32,
    pub center: Point,
    pub images: Vec<LayoutImage>,
}

impl ImageStack {
    /// Appends the network input channels of this stack to `out`.
    pub fn write_channels<T: Scalar>(&self, split_layer: u8, encoding: ImageEncoding, out: &mut Vec<T>) {
        let bits = 2 * split_layer as u32;
        match encoding {
            ImageEncoding::BitPlanes => {
                for img in &self.images {
                    for b in 0..bits {
                        out.extend(img.pixels.iter().map(|&p| if p >> b & 1 == 1 { T::one() } else { T::zero() }));
                    }
                }
            }
            ImageEncoding::Packed => {
                let full = ((1u32 << bits) - 1) as f64;
                for img in &self.images {
                    out.extend(img.pixels.iter().map(|&p| T::of(p as f64 / full)));
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct RasterShape {
    layers: u16,
    owner: Option<u32>,
}

/// Spatial index over every FEOL shape of a split layout.
pub struct Rasterizer<'a> {
    layout: &'a SplitLayout,
    index: ShapeIndex<RasterShape>,
    size: usize,
}

impl<'a> Rasterizer<'a> {
    pub fn new(layout: &'a SplitLayout, fragments: &Fragments, size: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::Invalid(format!("image size must be odd, got {size}")));
        }
        if layout.split_layer > 8 {
            return Err(Error::Invalid("rasters support at most 8 FEOL layers".into()));
        }
        let layer_bit = |l: u8| 1u16 << (l - 1);
        let m = layout.split_layer;
        let wires = layout.wires.iter().enumerate().map(|(i, w)| {
            (
                w.rect(),
                RasterShape {
                    layers: layer_bit(w.layer),
                    owner: fragments.wire_owner[i],
                },
            )
        });
        let vias = layout.vias.iter().enumerate().map(|(i, v)| {
            (
                Rect::point(v.at),
                RasterShape {
                    layers: layer_bit(v.cut) | layer_bit(v.cut + 1),
                    owner: fragments.via_owner[i],
                },
            )
        });
        let vpins = layout.virtual_pins.iter().enumerate().map(|(i, v)| {
            (
                Rect::point(v.at),
                RasterShape {
                    layers: layer_bit(m),
                    owner: fragments.vpin_owner[i],
                },
            )
        });
        Ok(Rasterizer {
            layout,
            index: ShapeIndex::new(wires.chain(vias).chain(vpins)),
            size,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Rasterizes the neighbourhood of virtual pin `vpin` at `scale` microns
    /// per pixel.
    pub fn rasterize(&self, vpin: u32, scale: f64) -> Result<LayoutImage> {
        let pin = self
            .layout
            .virtual_pins
            .get(vpin as usize)
            .ok_or_else(|| Error::Invalid(format!("unknown virtual pin {vpin}")))?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Invalid(format!("scale must be positive, got {scale}")));
        }
        let m = self.layout.split_layer;
        let size = self.size;
        let step = scale * self.layout.tech.dbu_per_micron as f64;
        let half = size as f64 / 2.0;
        let left = pin.at.x as f64 - half * step;
        let bottom = pin.at.y as f64 - half * step;
        let window = Rect {
            x0: left.floor() as i64,
            y0: bottom.floor() as i64,
            x1: (left + size as f64 * step).ceil() as i64,
            y1: (bottom + size as f64 * step).ceil() as i64,
        };
        let mut img = LayoutImage::empty(size);
        let die = &self.layout.die_area;
        let Some(window) = window.intersection(die) else {
            return Ok(img);
        };
        let cell = |v: i64, origin: f64| ((v as f64 - origin) / step).floor();
        for (rect, shape) in self.index.query(&window) {
            let Some(r) = rect.intersection(die) else { continue };
            let c0 = cell(r.x0, left).max(0.0);
            let c1 = cell(r.x1, left).min(size as f64 - 1.0);
            let r0 = cell(r.y0, bottom).max(0.0);
            let r1 = cell(r.y1, bottom).min(size as f64 - 1.0);
            if c0 > c1 || r0 > r1 {
                continue;
            }
            let own = shape.owner.is_some() && shape.owner == pin.fragment;
            let bits = if own { shape.layers << m } else { shape.layers };
            for row in r0 as usize..=r1 as usize {
                for px in &mut img.pixels[row * size + c0 as usize..=row * size + c1 as usize] {
                    *px |= bits;
                }
            }
        }
        Ok(img)
    }

    pub fn stack(&self, vpin: u32, scales: &[f64]) -> Result<ImageStack> {
        Ok(ImageStack {
            vpin,
            center: self.layout.virtual_pins[vpin as usize].at,
            images: scales.iter().map(|&s| self.rasterize(vpin, s)).collect::<Result<_>>()?,
        })
    }
}
