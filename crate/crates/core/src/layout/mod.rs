//! Layout data model: the full pre-split database, the attacker's FEOL-only
//! view, fragments, ground truth and the correct connection rate.

mod ccr;
mod fragments;
pub mod spatial;
mod split;
pub mod union_find;

use serde::{Deserialize, Serialize};

pub use ccr::{compute_ccr, Ccr};
pub use fragments::{build_fragments, Fragment, FragmentKind, Fragments};
pub use split::{split_layout, GroundTruth, TruthEntry};

use crate::error::{Error, Result};
use crate::geom::{Direction, Orientation, Point, Rect};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerTech {
    pub name: String,
    pub direction: Direction,
    /// Farads per micron of wire.
    pub unit_cap_f_per_um: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutTech {
    pub name: String,
    /// Farads per via.
    pub cap_f: f64,
}

/// Metal stack description. Metal layers are numbered from 1; cut layer `l`
/// joins metal `l` and `l + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechConfig {
    pub dbu_per_micron: u32,
    pub layers: Vec<LayerTech>,
    pub cuts: Vec<CutTech>,
}

impl TechConfig {
    /// Alternating stack with M1 horizontal and uniform capacitances.
    pub fn uniform(num_layers: u8, dbu_per_micron: u32, unit_cap_f_per_um: f64, via_cap_f: f64) -> Self {
        let layers = (1..=num_layers)
            .map(|l| LayerTech {
                name: format!("metal{l}"),
                direction: if l % 2 == 1 {
                    Direction::Horizontal
                } else {
                    Direction::Vertical
                },
                unit_cap_f_per_um,
            })
            .collect();
        let cuts = (1..num_layers)
            .map(|l| CutTech {
                name: format!("via{l}{}", l + 1),
                cap_f: via_cap_f,
            })
            .collect();
        TechConfig {
            dbu_per_micron,
            layers,
            cuts,
        }
    }

    pub fn num_layers(&self) -> u8 {
        self.layers.len() as u8
    }

    pub fn layer(&self, l: u8) -> &LayerTech {
        &self.layers[l as usize - 1]
    }

    pub fn cut(&self, c: u8) -> &CutTech {
        &self.cuts[c as usize - 1]
    }

    pub fn direction(&self, l: u8) -> Direction {
        self.layer(l).direction
    }

    pub fn layer_by_name(&self, name: &str) -> Option<u8> {
        self.layers.iter().position(|l| l.name == name).map(|i| i as u8 + 1)
    }

    pub fn cut_by_name(&self, name: &str) -> Option<u8> {
        self.cuts.iter().position(|c| c.name == name).map(|i| i as u8 + 1)
    }

    pub fn dbu_to_um(&self, v: i64) -> f64 {
        v as f64 / self.dbu_per_micron as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Layout(format!("tech: {m}")));
        if self.dbu_per_micron == 0 {
            return bad("dbu_per_micron must be positive".into());
        }
        if self.layers.is_empty() || self.layers.len() > 16 {
            return bad(format!("expected 1..=16 metal layers, got {}", self.layers.len()));
        }
        if self.cuts.len() + 1 != self.layers.len() {
            return bad(format!(
                "{} metal layers need {} cut layers, got {}",
                self.layers.len(),
                self.layers.len() - 1,
                self.cuts.len()
            ));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].direction == pair[1].direction {
                return bad(format!(
                    "preferred directions of layers {} and {} do not alternate",
                    i + 1,
                    i + 2
                ));
            }
        }
        for l in &self.layers {
            if !(l.unit_cap_f_per_um >= 0.0 && l.unit_cap_f_per_um.is_finite()) {
                return bad(format!("layer {}: capacitance must be finite and >= 0", l.name));
            }
        }
        for c in &self.cuts {
            if !(c.cap_f >= 0.0 && c.cap_f.is_finite()) {
                return bad(format!("cut {}: capacitance must be finite and >= 0", c.name));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub name: String,
    pub master: String,
    pub origin: Point,
    #[serde(default)]
    pub orient: Orientation,
}

/// Role of a pin on its net: `Output` drives the net, `Input` is a sink.
/// Primary inputs of the design are therefore `Output` pins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PinDirection {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pin {
    /// Owning instance; `None` for top-level ports.
    pub cell: Option<String>,
    pub name: String,
    pub direction: PinDirection,
    pub layer: u8,
    pub rect: Rect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wire {
    pub net: u32,
    pub layer: u8,
    pub a: Point,
    pub b: Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Via {
    pub net: u32,
    /// Cut layer joining metal `cut` and `cut + 1`.
    pub cut: u8,
    pub at: Point,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Net {
    pub name: String,
    pub driver: u32,
    pub sinks: Vec<u32>,
}

/// Untagged wire segment of the split view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub layer: u8,
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn rect(&self) -> Rect {
        Rect::new(self.a, self.b)
    }

    pub fn length(&self) -> i64 {
        self.a.manhattan(self.b)
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.a.x == self.b.x || self.a.y == self.b.y
    }
}

impl Wire {
    pub fn segment(&self) -> Segment {
        Segment {
            layer: self.layer,
            a: self.a,
            b: self.b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViaPoint {
    pub cut: u8,
    pub at: Point,
}

/// A cut via from the split layer into the hidden upper layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualPin {
    pub id: u32,
    pub at: Point,
    /// Owning fragment; `None` when the via sits on floating geometry that
    /// holds no cell pin.
    pub fragment: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FullLayout {
    pub design: String,
    pub tech: TechConfig,
    pub die_area: Rect,
    pub cells: Vec<Cell>,
    pub pins: Vec<Pin>,
    pub wires: Vec<Wire>,
    pub vias: Vec<Via>,
    pub nets: Vec<Net>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitLayout {
    pub design: String,
    pub tech: TechConfig,
    pub die_area: Rect,
    pub split_layer: u8,
    pub cells: Vec<Cell>,
    pub pins: Vec<Pin>,
    pub wires: Vec<Segment>,
    pub vias: Vec<ViaPoint>,
    pub virtual_pins: Vec<VirtualPin>,
}

fn check_point(die: &Rect, p: Point, what: impl FnOnce() -> String) -> Result<()> {
    if die.contains(p) {
        Ok(())
    } else {
        Err(Error::Layout(format!("{} at ({}, {}) lies outside the die area", what(), p.x, p.y)))
    }
}

fn check_common(tech: &TechConfig, die: &Rect, pins: &[Pin], top_layer: u8) -> Result<()> {
    tech.validate()?;
    if die.width() <= 0 || die.height() <= 0 {
        return Err(Error::Layout("die area has zero extent".into()));
    }
    for (i, p) in pins.iter().enumerate() {
        if p.layer == 0 || p.layer > top_layer {
            return Err(Error::Layout(format!("pins[{i}]: layer {} out of range", p.layer)));
        }
        if !die.contains_rect(&p.rect) {
            return Err(Error::Layout(format!("pins[{i}]: shape lies outside the die area")));
        }
    }
    Ok(())
}

impl FullLayout {
    /// Highest metal layer carrying a wire or a via landing.
    pub fn top_routed_layer(&self) -> u8 {
        let w = self.wires.iter().map(|w| w.layer).max().unwrap_or(0);
        let v = self.vias.iter().map(|v| v.cut + 1).max().unwrap_or(0);
        w.max(v)
    }

    pub fn validate(&self) -> Result<()> {
        let top = self.tech.num_layers();
        check_common(&self.tech, &self.die_area, &self.pins, top)?;
        let nnets = self.nets.len() as u32;
        for (i, w) in self.wires.iter().enumerate() {
            if w.net >= nnets {
                return Err(Error::Layout(format!("wires[{i}]: unknown net {}", w.net)));
            }
            if w.layer == 0 || w.layer > top {
                return Err(Error::Layout(format!("wires[{i}]: layer {} out of range", w.layer)));
            }
            if !w.segment().is_axis_aligned() {
                return Err(Error::Layout(format!("wires[{i}]: segment is not axis-aligned")));
            }
            check_point(&self.die_area, w.a, || format!("wires[{i}]"))?;
            check_point(&self.die_area, w.b, || format!("wires[{i}]"))?;
        }
        for (i, v) in self.vias.iter().enumerate() {
            if v.net >= nnets {
                return Err(Error::Layout(format!("vias[{i}]: unknown net {}", v.net)));
            }
            if v.cut == 0 || v.cut >= top {
                return Err(Error::Layout(format!("vias[{i}]: cut layer {} out of range", v.cut)));
            }
            check_point(&self.die_area, v.at, || format!("vias[{i}]"))?;
        }
        let mut pin_net = vec![None; self.pins.len()];
        for (n, net) in self.nets.iter().enumerate() {
            for (role, &p) in std::iter::once(("driver", &net.driver)).chain(net.sinks.iter().map(|s| ("sink", s))) {
                let pin = self.pins.get(p as usize).ok_or_else(|| {
                    Error::Layout(format!("nets[{n}] ({}): unknown {role} pin {p}", net.name))
                })?;
                let want = if role == "driver" { PinDirection::Output } else { PinDirection::Input };
                if pin.direction != want {
                    return Err(Error::Layout(format!(
                        "nets[{n}] ({}): {role} pin {p} has direction {:?}",
                        net.name, pin.direction
                    )));
                }
                if let Some(other) = pin_net[p as usize].replace(n) {
                    return Err(Error::Layout(format!("pin {p} belongs to nets {other} and {n}")));
                }
            }
            if net.sinks.is_empty() {
                return Err(Error::Layout(format!("nets[{n}] ({}): no sink pins", net.name)));
            }
        }
        Ok(())
    }

    /// Net index of every pin, if any.
    pub fn pin_nets(&self) -> Vec<Option<u32>> {
        let mut out = vec![None; self.pins.len()];
        for (n, net) in self.nets.iter().enumerate() {
            out[net.driver as usize] = Some(n as u32);
            for &s in &net.sinks {
                out[s as usize] = Some(n as u32);
            }
        }
        out
    }

    /// Sorts wires and vias into a canonical order and normalizes segment
    /// endpoints so that structurally equal layouts compare equal.
    pub fn canonicalize(&mut self) {
        for w in &mut self.wires {
            if (w.b.x, w.b.y) < (w.a.x, w.a.y) {
                std::mem::swap(&mut w.a, &mut w.b);
            }
        }
        self.wires
            .sort_by_key(|w| (w.net, w.layer, w.a.x, w.a.y, w.b.x, w.b.y));
        self.vias.sort_by_key(|v| (v.net, v.cut, v.at.x, v.at.y));
    }
}

impl SplitLayout {
    pub fn validate(&self) -> Result<()> {
        let m = self.split_layer;
        if m == 0 || m >= self.tech.num_layers() {
            return Err(Error::Layout(format!("split layer {m} out of range")));
        }
        check_common(&self.tech, &self.die_area, &self.pins, m)?;
        for (i, w) in self.wires.iter().enumerate() {
            if w.layer == 0 || w.layer > m {
                return Err(Error::Layout(format!("wires[{i}]: layer {} above the split layer", w.layer)));
            }
            if !w.is_axis_aligned() {
                return Err(Error::Layout(format!("wires[{i}]: segment is not axis-aligned")));
            }
            check_point(&self.die_area, w.a, || format!("wires[{i}]"))?;
            check_point(&self.die_area, w.b, || format!("wires[{i}]"))?;
        }
        for (i, v) in self.vias.iter().enumerate() {
            if v.cut == 0 || v.cut >= m {
                return Err(Error::Layout(format!("vias[{i}]: cut layer {} out of range", v.cut)));
            }
            check_point(&self.die_area, v.at, || format!("vias[{i}]"))?;
        }
        for (i, v) in self.virtual_pins.iter().enumerate() {
            if v.id as usize != i {
                return Err(Error::Layout(format!("virtual_pins[{i}]: id {} out of sequence", v.id)));
            }
            check_point(&self.die_area, v.at, || format!("virtual_pins[{i}]"))?;
        }
        Ok(())
    }

    pub fn split_direction(&self) -> Direction {
        self.tech.direction(self.split_layer)
    }

    pub fn dbu_to_um(&self, v: i64) -> f64 {
        self.tech.dbu_to_um(v)
    }
}
