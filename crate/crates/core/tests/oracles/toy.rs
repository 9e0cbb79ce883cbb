//! Hand-built layouts made of top-level ports, for tests that need exact
//! control over geometry.

use smattack_core::geom::{Point, Rect};
use smattack_core::layout::{FullLayout, Net, Pin, PinDirection, TechConfig, Via, Wire};

pub struct Toy {
    pub full: FullLayout,
}

impl Toy {
    /// Five-layer stack with M1 horizontal, 1000 database units per micron.
    pub fn new(side: i64) -> Self {
        Toy {
            full: FullLayout {
                design: "toy".into(),
                tech: TechConfig::uniform(5, 1000, 0.2e-15, 0.5e-15),
                die_area: Rect::new(Point::new(0, 0), Point::new(side, side)),
                cells: vec![],
                pins: vec![],
                wires: vec![],
                vias: vec![],
                nets: vec![],
            },
        }
    }

    pub fn port(&mut self, name: &str, direction: PinDirection, at: (i64, i64)) -> u32 {
        self.port_on(1, name, direction, at)
    }

    pub fn port_on(&mut self, layer: u8, name: &str, direction: PinDirection, at: (i64, i64)) -> u32 {
        self.full.pins.push(Pin {
            cell: None,
            name: name.into(),
            direction,
            layer,
            rect: Rect::new(Point::new(at.0 - 10, at.1 - 10), Point::new(at.0 + 10, at.1 + 10)),
        });
        self.full.pins.len() as u32 - 1
    }

    pub fn net(&mut self, driver: u32, sinks: &[u32]) -> u32 {
        self.full.nets.push(Net {
            name: format!("n{}", self.full.nets.len()),
            driver,
            sinks: sinks.to_vec(),
        });
        self.full.nets.len() as u32 - 1
    }

    pub fn wire(&mut self, net: u32, layer: u8, a: (i64, i64), b: (i64, i64)) {
        self.full.wires.push(Wire {
            net,
            layer,
            a: Point::new(a.0, a.1),
            b: Point::new(b.0, b.1),
        });
    }

    /// Vias from metal `from` up to metal `to` at one point.
    pub fn stack(&mut self, net: u32, at: (i64, i64), from: u8, to: u8) {
        for cut in from..to {
            self.full.vias.push(Via {
                net,
                cut,
                at: Point::new(at.0, at.1),
            });
        }
    }

    /// Joins `a` and `b` through metal `layer` above the split, rising from
    /// metal `from` at both ends.
    pub fn bridge(&mut self, net: u32, a: (i64, i64), b: (i64, i64), from: u8, layer: u8) {
        self.stack(net, a, from, layer);
        self.stack(net, b, from, layer);
        let corner = (b.0, a.1);
        if corner != a {
            self.wire(net, layer, a, corner);
        }
        if corner != b {
            self.wire(net, layer, corner, b);
        }
    }
}
