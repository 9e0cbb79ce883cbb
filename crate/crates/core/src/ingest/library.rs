use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::from_json;
use crate::error::{Error, Result};
use crate::geom::{Point, Rect};
use crate::layout::{Cell, Pin, PinDirection};

pub const DEFAULT_DRIVE_RES_OHM: f64 = 1_000.0;
pub const DEFAULT_INTRINSIC_DELAY_S: f64 = 10e-12;

fn default_drive_res() -> f64 {
    DEFAULT_DRIVE_RES_OHM
}

fn default_intrinsic_delay() -> f64 {
    DEFAULT_INTRINSIC_DELAY_S
}

fn default_layer() -> u8 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibPin {
    pub direction: PinDirection,
    #[serde(default)]
    pub cap_f: f64,
    #[serde(default = "default_layer")]
    pub layer: u8,
    /// Pin shape relative to the master's lower-left corner, in microns.
    #[serde(default)]
    pub rect_um: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Master {
    #[serde(default)]
    pub size_um: [f64; 2],
    pub pins: BTreeMap<String, LibPin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cap_f: Option<f64>,
    #[serde(default = "default_drive_res")]
    pub drive_res_ohm: f64,
    #[serde(default = "default_intrinsic_delay")]
    pub intrinsic_delay_s: f64,
}

/// Electrical view of top-level ports: primary inputs drive like a cell
/// output, primary outputs load like a cell input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortElectrical {
    #[serde(default)]
    pub pin_cap_f: f64,
    pub max_cap_f: f64,
    #[serde(default = "default_drive_res")]
    pub drive_res_ohm: f64,
    #[serde(default = "default_intrinsic_delay")]
    pub intrinsic_delay_s: f64,
}

impl Default for PortElectrical {
    fn default() -> Self {
        PortElectrical {
            pin_cap_f: 0.0,
            max_cap_f: 100e-15,
            drive_res_ohm: DEFAULT_DRIVE_RES_OHM,
            intrinsic_delay_s: DEFAULT_INTRINSIC_DELAY_S,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellLibrary {
    pub masters: BTreeMap<String, Master>,
    #[serde(default)]
    pub port: PortElectrical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriverElectrical {
    pub max_cap_f: f64,
    pub drive_res_ohm: f64,
    pub intrinsic_delay_s: f64,
}

/// Library quantities resolved for one layout pin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinElectrical {
    pub cap_f: f64,
    pub driver: Option<DriverElectrical>,
}

fn um_to_dbu(v: f64, dbu: u32) -> i64 {
    (v * dbu as f64).round() as i64
}

impl CellLibrary {
    pub fn validate(&self) -> Result<()> {
        let schema = |path: String, message: &str| {
            Err(Error::Schema {
                path,
                message: message.to_string(),
            })
        };
        for (name, m) in &self.masters {
            let has_output = m.pins.values().any(|p| p.direction == PinDirection::Output);
            if has_output && !m.max_cap_f.is_some_and(|c| c > 0.0 && c.is_finite()) {
                return schema(
                    format!("masters.{name}.max_cap_f"),
                    "masters with an output pin need a positive max_cap_f",
                );
            }
            if !(m.drive_res_ohm >= 0.0 && m.intrinsic_delay_s >= 0.0) {
                return schema(format!("masters.{name}"), "drive resistance and delay must be >= 0");
            }
            for (pname, p) in &m.pins {
                if !(p.cap_f >= 0.0 && p.cap_f.is_finite()) {
                    return schema(format!("masters.{name}.pins.{pname}.cap_f"), "pin capacitance must be >= 0");
                }
                if p.layer == 0 {
                    return schema(format!("masters.{name}.pins.{pname}.layer"), "layers are numbered from 1");
                }
            }
        }
        if !(self.port.max_cap_f > 0.0 && self.port.pin_cap_f >= 0.0) {
            return schema("port".into(), "port capacitances out of range");
        }
        Ok(())
    }

    pub fn master(&self, name: &str) -> Result<&Master> {
        self.masters
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("unknown cell master {name}")))
    }

    /// Absolute shapes of every pin of a placed cell, in pin-name order.
    pub fn place_pins(&self, cell: &Cell, dbu: u32) -> Result<Vec<Pin>> {
        let master = self.master(&cell.master)?;
        let (w, h) = (um_to_dbu(master.size_um[0], dbu), um_to_dbu(master.size_um[1], dbu));
        Ok(master
            .pins
            .iter()
            .map(|(name, p)| {
                let [x0, y0, x1, y1] = p.rect_um.map(|v| um_to_dbu(v, dbu));
                let a = cell.orient.apply(Point::new(x0, y0), w, h);
                let b = cell.orient.apply(Point::new(x1, y1), w, h);
                Pin {
                    cell: Some(cell.name.clone()),
                    name: name.clone(),
                    direction: p.direction,
                    layer: p.layer,
                    rect: Rect::new(a, b).translate(cell.origin.x, cell.origin.y),
                }
            })
            .collect())
    }

    /// Resolves the electrical quantities of every pin against its master.
    pub fn resolve_pins(&self, cells: &[Cell], pins: &[Pin]) -> Result<Vec<PinElectrical>> {
        let by_name: HashMap<&str, &Cell> = cells.iter().map(|c| (c.name.as_str(), c)).collect();
        pins.iter()
            .map(|pin| {
                let Some(cell_name) = &pin.cell else {
                    return Ok(match pin.direction {
                        PinDirection::Output => PinElectrical {
                            cap_f: 0.0,
                            driver: Some(DriverElectrical {
                                max_cap_f: self.port.max_cap_f,
                                drive_res_ohm: self.port.drive_res_ohm,
                                intrinsic_delay_s: self.port.intrinsic_delay_s,
                            }),
                        },
                        PinDirection::Input => PinElectrical {
                            cap_f: self.port.pin_cap_f,
                            driver: None,
                        },
                    });
                };
                let cell = by_name
                    .get(cell_name.as_str())
                    .ok_or_else(|| Error::Invalid(format!("pin {}: unknown instance {cell_name}", pin.name)))?;
                let master = self.master(&cell.master)?;
                let lp = master.pins.get(&pin.name).ok_or_else(|| {
                    Error::Invalid(format!("master {} has no pin {}", cell.master, pin.name))
                })?;
                Ok(PinElectrical {
                    cap_f: lp.cap_f,
                    driver: (lp.direction == PinDirection::Output).then(|| DriverElectrical {
                        max_cap_f: master.max_cap_f.unwrap_or(0.0),
                        drive_res_ohm: master.drive_res_ohm,
                        intrinsic_delay_s: master.intrinsic_delay_s,
                    }),
                })
            })
            .collect()
    }
}

pub fn load_library(text: &str) -> Result<CellLibrary> {
    let lib: CellLibrary = from_json(text)?;
    lib.validate()?;
    Ok(lib)
}

pub fn save_library(lib: &CellLibrary) -> String {
    let mut s = serde_json::to_string_pretty(lib).expect("library serializes");
    s.push('\n');
    s
}
