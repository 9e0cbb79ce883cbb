//! Reader and writer for a routed-DEF subset: DESIGN, UNITS, DIEAREA,
//! placed COMPONENTS, PINS and NETS with regular routing.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::library::CellLibrary;
use crate::error::{Error, Result};
use crate::geom::{Orientation, Point, Rect};
use crate::layout::{Cell, FullLayout, Net, Pin, PinDirection, TechConfig, Via, Wire};

#[derive(Clone, Copy, Debug)]
struct Token<'a> {
    text: &'a str,
    line: usize,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let body = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        };
        out.extend(body.split_whitespace().map(|t| Token { text: t, line: line_no }));
    }
    out
}

struct Parser<'a> {
    tokens: Vec<Token<'a>>,
    pos: usize,
}

struct PortDecl {
    name: String,
    net: Option<String>,
    direction: PinDirection,
    layer: u8,
    rect: Rect,
    line: usize,
}

impl<'a> Parser<'a> {
    fn line(&self) -> usize {
        self.tokens
            .get(self.pos)
            .or_else(|| self.tokens.last())
            .map_or(1, |t| t.line)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Def {
            line: self.line(),
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<&'a str> {
        self.tokens.get(self.pos).map(|t| t.text)
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.tokens.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.text)
            }
            None => self.err("unexpected end of input"),
        }
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        let got = self.next()?;
        if got == want {
            Ok(())
        } else {
            self.pos -= 1;
            self.err(format!("expected `{want}`, found `{got}`"))
        }
    }

    fn int(&mut self) -> Result<i64> {
        let t = self.next()?;
        t.parse().or_else(|_| {
            self.pos -= 1;
            self.err(format!("expected an integer, found `{t}`"))
        })
    }

    /// `( x y )` where either coordinate may be `*` to repeat `prev`.
    fn point(&mut self, prev: Option<Point>) -> Result<Point> {
        self.expect("(")?;
        let mut coords = [0i64; 2];
        for (axis, c) in coords.iter_mut().enumerate() {
            let t = self.next()?;
            *c = if t == "*" {
                match prev {
                    Some(p) => [p.x, p.y][axis],
                    None => {
                        self.pos -= 1;
                        return self.err("`*` without a previous point");
                    }
                }
            } else {
                t.parse().or_else(|_| {
                    self.pos -= 1;
                    self.err(format!("expected a coordinate, found `{t}`"))
                })?
            };
        }
        if self.peek() != Some(")") {
            return self.err("unsupported point form (extension values are not part of the subset)");
        }
        self.pos += 1;
        Ok(Point::new(coords[0], coords[1]))
    }

    fn orientation(&mut self) -> Result<Orientation> {
        let t = self.next()?;
        Orientation::parse(t).map_or_else(
            || {
                self.pos -= 1;
                self.err(format!("unknown orientation `{t}`"))
            },
            Ok,
        )
    }

    fn section_count(&mut self) -> Result<usize> {
        let n = self.int()?;
        self.expect(";")?;
        usize::try_from(n).or_else(|_| self.err("negative section count"))
    }

    fn section_end(&mut self, name: &str, declared: usize, found: usize) -> Result<()> {
        self.expect("END")?;
        self.expect(name)?;
        if declared != found {
            return self.err(format!("{name} declares {declared} entries but holds {found}"));
        }
        Ok(())
    }
}

/// Parses the supported DEF subset into a canonical [`FullLayout`]. Cell pin
/// shapes come from the library; layer and via names from `tech`.
pub fn parse_def_subset(text: &str, lib: &CellLibrary, tech: &TechConfig) -> Result<FullLayout> {
    tech.validate()?;
    let mut p = Parser {
        tokens: tokenize(text),
        pos: 0,
    };
    let mut design = None;
    let mut die = None;
    let mut cells: Vec<Cell> = Vec::new();
    let mut ports: Vec<PortDecl> = Vec::new();
    // (name, connections with line, wires, vias)
    type NetDecl = (String, Vec<(String, String, usize)>, Vec<(u8, Point, Point)>, Vec<(u8, Point)>, usize);
    let mut nets: Vec<NetDecl> = Vec::new();

    loop {
        let Some(tok) = p.peek() else {
            return p.err("missing `END DESIGN`");
        };
        match tok {
            "VERSION" | "DIVIDERCHAR" | "BUSBITCHARS" => {
                p.pos += 1;
                p.next()?;
                p.expect(";")?;
            }
            "DESIGN" => {
                p.pos += 1;
                design = Some(p.next()?.to_string());
                p.expect(";")?;
            }
            "UNITS" => {
                p.pos += 1;
                p.expect("DISTANCE")?;
                p.expect("MICRONS")?;
                let dbu = p.int()?;
                if dbu != tech.dbu_per_micron as i64 {
                    p.pos -= 1;
                    return p.err(format!(
                        "UNITS DISTANCE MICRONS {dbu} differs from the technology's {}",
                        tech.dbu_per_micron
                    ));
                }
                p.expect(";")?;
            }
            "DIEAREA" => {
                p.pos += 1;
                let a = p.point(None)?;
                let b = p.point(None)?;
                if p.peek() != Some(";") {
                    return p.err("polygonal DIEAREA is not supported");
                }
                p.pos += 1;
                die = Some(Rect::new(a, b));
            }
            "COMPONENTS" => {
                p.pos += 1;
                let declared = p.section_count()?;
                while p.peek() == Some("-") {
                    p.pos += 1;
                    let name = p.next()?.to_string();
                    let master = p.next()?.to_string();
                    if !lib.masters.contains_key(&master) {
                        p.pos -= 1;
                        return p.err(format!("unknown cell master `{master}`"));
                    }
                    let mut placed = None;
                    loop {
                        match p.next()? {
                            ";" => break,
                            "+" => match p.next()? {
                                "PLACED" | "FIXED" => {
                                    let at = p.point(None)?;
                                    placed = Some((at, p.orientation()?));
                                }
                                other => {
                                    p.pos -= 1;
                                    return p.err(format!("unsupported component attribute `{other}`"));
                                }
                            },
                            other => {
                                p.pos -= 1;
                                return p.err(format!("unexpected `{other}` in component {name}"));
                            }
                        }
                    }
                    let Some((origin, orient)) = placed else {
                        return p.err(format!("component {name} is not placed"));
                    };
                    cells.push(Cell {
                        name,
                        master,
                        origin,
                        orient,
                    });
                }
                p.section_end("COMPONENTS", declared, cells.len())?;
            }
            "PINS" => {
                p.pos += 1;
                let declared = p.section_count()?;
                while p.peek() == Some("-") {
                    p.pos += 1;
                    let line = p.line();
                    let name = p.next()?.to_string();
                    let (mut net, mut direction, mut shape, mut placed) = (None, None, None, None);
                    loop {
                        match p.next()? {
                            ";" => break,
                            "+" => match p.next()? {
                                "NET" => net = Some(p.next()?.to_string()),
                                "DIRECTION" => {
                                    direction = Some(match p.next()? {
                                        // a primary input drives its net
                                        "INPUT" => PinDirection::Output,
                                        "OUTPUT" => PinDirection::Input,
                                        other => {
                                            p.pos -= 1;
                                            return p.err(format!("unsupported pin direction `{other}`"));
                                        }
                                    })
                                }
                                "USE" => {
                                    let u = p.next()?;
                                    if u != "SIGNAL" {
                                        p.pos -= 1;
                                        return p.err(format!("unsupported pin use `{u}`"));
                                    }
                                }
                                "LAYER" => {
                                    let lname = p.next()?;
                                    let Some(layer) = tech.layer_by_name(lname) else {
                                        p.pos -= 1;
                                        return p.err(format!("unknown layer `{lname}`"));
                                    };
                                    let a = p.point(None)?;
                                    let b = p.point(None)?;
                                    shape = Some((layer, a, b));
                                }
                                "PLACED" | "FIXED" => {
                                    let at = p.point(None)?;
                                    placed = Some((at, p.orientation()?));
                                }
                                other => {
                                    p.pos -= 1;
                                    return p.err(format!("unsupported pin attribute `{other}`"));
                                }
                            },
                            other => {
                                p.pos -= 1;
                                return p.err(format!("unexpected `{other}` in pin {name}"));
                            }
                        }
                    }
                    let (Some(direction), Some((layer, a, b)), Some((at, orient))) = (direction, shape, placed) else {
                        return p.err(format!("pin {name} needs DIRECTION, LAYER and PLACED"));
                    };
                    let rect = Rect::new(orient.apply(a, 0, 0), orient.apply(b, 0, 0)).translate(at.x, at.y);
                    ports.push(PortDecl {
                        name,
                        net,
                        direction,
                        layer,
                        rect,
                        line,
                    });
                }
                p.section_end("PINS", declared, ports.len())?;
            }
            "NETS" => {
                p.pos += 1;
                let declared = p.section_count()?;
                while p.peek() == Some("-") {
                    p.pos += 1;
                    let line = p.line();
                    let name = p.next()?.to_string();
                    let mut conns = Vec::new();
                    while p.peek() == Some("(") {
                        p.pos += 1;
                        let l = p.line();
                        let inst = p.next()?.to_string();
                        let pin = p.next()?.to_string();
                        p.expect(")")?;
                        conns.push((inst, pin, l));
                    }
                    let (mut wires, mut vias) = (Vec::new(), Vec::new());
                    loop {
                        match p.next()? {
                            ";" => break,
                            "+" => match p.next()? {
                                "USE" => {
                                    let u = p.next()?;
                                    if u != "SIGNAL" {
                                        p.pos -= 1;
                                        return p.err(format!("unsupported net use `{u}`"));
                                    }
                                }
                                "ROUTED" => parse_routing(&mut p, tech, &mut wires, &mut vias)?,
                                other => {
                                    p.pos -= 1;
                                    return p.err(format!("unsupported net attribute `{other}`"));
                                }
                            },
                            other => {
                                p.pos -= 1;
                                return p.err(format!("unexpected `{other}` in net {name}"));
                            }
                        }
                    }
                    nets.push((name, conns, wires, vias, line));
                }
                p.section_end("NETS", declared, nets.len())?;
            }
            "END" => {
                p.pos += 1;
                p.expect("DESIGN")?;
                break;
            }
            other => return p.err(format!("unsupported DEF statement `{other}`")),
        }
    }
    if p.pos != p.tokens.len() {
        return p.err("trailing content after `END DESIGN`");
    }
    let Some(die_area) = die else {
        return p.err("missing DIEAREA");
    };

    let mut pins: Vec<Pin> = Vec::new();
    for c in &cells {
        pins.extend(lib.place_pins(c, tech.dbu_per_micron)?);
    }
    let mut pin_index: HashMap<(Option<String>, String), u32> = pins
        .iter()
        .enumerate()
        .map(|(i, pin)| ((pin.cell.clone(), pin.name.clone()), i as u32))
        .collect();
    for port in &ports {
        let key = (None, port.name.clone());
        if pin_index.contains_key(&key) {
            return Err(Error::Def {
                line: port.line,
                message: format!("duplicate pin `{}`", port.name),
            });
        }
        pin_index.insert(key, pins.len() as u32);
        pins.push(Pin {
            cell: None,
            name: port.name.clone(),
            direction: port.direction,
            layer: port.layer,
            rect: port.rect,
        });
    }

    let mut out_nets = Vec::with_capacity(nets.len());
    let mut out_wires = Vec::new();
    let mut out_vias = Vec::new();
    for (n, (name, conns, wires, vias, line)) in nets.into_iter().enumerate() {
        let mut members = Vec::with_capacity(conns.len());
        for (inst, pin, l) in conns {
            let key = if inst == "PIN" { (None, pin.clone()) } else { (Some(inst.clone()), pin.clone()) };
            let Some(&idx) = pin_index.get(&key) else {
                return Err(Error::Def {
                    line: l,
                    message: format!("net {name}: unknown pin ( {inst} {pin} )"),
                });
            };
            members.push(idx);
        }
        let drivers: Vec<u32> = members
            .iter()
            .copied()
            .filter(|&i| pins[i as usize].direction == PinDirection::Output)
            .collect();
        if drivers.len() != 1 {
            return Err(Error::Def {
                line,
                message: format!("net {name} has {} drivers, expected exactly one", drivers.len()),
            });
        }
        let sinks = members.iter().copied().filter(|&i| i != drivers[0]).collect();
        out_nets.push(Net {
            name,
            driver: drivers[0],
            sinks,
        });
        out_wires.extend(wires.into_iter().map(|(layer, a, b)| Wire {
            net: n as u32,
            layer,
            a,
            b,
        }));
        out_vias.extend(vias.into_iter().map(|(cut, at)| Via { net: n as u32, cut, at }));
    }
    for port in &ports {
        if let Some(net_name) = &port.net {
            let idx = pin_index[&(None, port.name.clone())];
            let ok = out_nets
                .iter()
                .any(|n| &n.name == net_name && (n.driver == idx || n.sinks.contains(&idx)));
            if !ok {
                return Err(Error::Def {
                    line: port.line,
                    message: format!("pin {} names net {net_name}, which does not connect it", port.name),
                });
            }
        }
    }

    let mut layout = FullLayout {
        design: design.unwrap_or_default(),
        tech: tech.clone(),
        die_area,
        cells,
        pins,
        wires: out_wires,
        vias: out_vias,
        nets: out_nets,
    };
    layout.canonicalize();
    layout.validate()?;
    Ok(layout)
}

fn parse_routing(
    p: &mut Parser<'_>,
    tech: &TechConfig,
    wires: &mut Vec<(u8, Point, Point)>,
    vias: &mut Vec<(u8, Point)>,
) -> Result<()> {
    loop {
        let lname = p.next()?;
        let Some(mut layer) = tech.layer_by_name(lname) else {
            p.pos -= 1;
            return p.err(format!("unknown routing layer `{lname}`"));
        };
        // optional width, ignored: wires are center lines
        if p.peek().is_some_and(|t| t.parse::<i64>().is_ok()) {
            p.pos += 1;
        }
        let mut cur: Option<Point> = None;
        loop {
            match p.peek() {
                Some("(") => {
                    let pt = p.point(cur)?;
                    if let Some(prev) = cur {
                        if prev.x != pt.x && prev.y != pt.y {
                            return p.err("routed segment is not axis-aligned");
                        }
                        if prev != pt {
                            wires.push((layer, prev, pt));
                        }
                    }
                    cur = Some(pt);
                }
                Some("NEW") => {
                    p.pos += 1;
                    break;
                }
                Some(";") | Some("+") | None => return Ok(()),
                Some(name) => {
                    let Some(cut) = tech.cut_by_name(name) else {
                        return p.err(format!("unsupported routing element `{name}`"));
                    };
                    let Some(at) = cur else {
                        return p.err(format!("via {name} before any routed point"));
                    };
                    layer = if layer == cut {
                        cut + 1
                    } else if layer == cut + 1 {
                        cut
                    } else {
                        return p.err(format!("via {name} does not touch the current layer"));
                    };
                    vias.push((cut, at));
                    p.pos += 1;
                }
            }
        }
    }
}

/// Writes `layout` in the DEF subset accepted by [`parse_def_subset`]:
/// one `NEW` path per wire and per via, in canonical order.
pub fn emit_def(layout: &FullLayout) -> String {
    let mut canon = layout.clone();
    canon.canonicalize();
    let tech = &canon.tech;
    let mut s = String::new();
    let _ = writeln!(s, "VERSION 5.8 ;\nDIVIDERCHAR \"/\" ;\nBUSBITCHARS \"[]\" ;");
    let _ = writeln!(s, "DESIGN {} ;", if canon.design.is_empty() { "top" } else { &canon.design });
    let _ = writeln!(s, "UNITS DISTANCE MICRONS {} ;", tech.dbu_per_micron);
    let d = canon.die_area;
    let _ = writeln!(s, "DIEAREA ( {} {} ) ( {} {} ) ;\n", d.x0, d.y0, d.x1, d.y1);

    let _ = writeln!(s, "COMPONENTS {} ;", canon.cells.len());
    for c in &canon.cells {
        let _ = writeln!(
            s,
            "- {} {} + PLACED ( {} {} ) {} ;",
            c.name,
            c.master,
            c.origin.x,
            c.origin.y,
            c.orient.name()
        );
    }
    let _ = writeln!(s, "END COMPONENTS\n");

    let pin_nets = canon.pin_nets();
    let ports: Vec<(usize, &Pin)> = canon.pins.iter().enumerate().filter(|(_, p)| p.cell.is_none()).collect();
    let _ = writeln!(s, "PINS {} ;", ports.len());
    for (i, pin) in ports {
        let _ = write!(s, "- {}", pin.name);
        if let Some(n) = pin_nets[i] {
            let _ = write!(s, " + NET {}", canon.nets[n as usize].name);
        }
        let dir = match pin.direction {
            PinDirection::Output => "INPUT",
            PinDirection::Input => "OUTPUT",
        };
        let r = pin.rect;
        let _ = writeln!(
            s,
            " + DIRECTION {dir} + USE SIGNAL + LAYER {} ( 0 0 ) ( {} {} ) + PLACED ( {} {} ) N ;",
            tech.layer(pin.layer).name,
            r.width(),
            r.height(),
            r.x0,
            r.y0
        );
    }
    let _ = writeln!(s, "END PINS\n");

    let _ = writeln!(s, "NETS {} ;", canon.nets.len());
    for (n, net) in canon.nets.iter().enumerate() {
        let _ = write!(s, "- {}", net.name);
        for &pi in std::iter::once(&net.driver).chain(&net.sinks) {
            let pin = &canon.pins[pi as usize];
            let _ = write!(s, " ( {} {} )", pin.cell.as_deref().unwrap_or("PIN"), pin.name);
        }
        let mut first = true;
        let mut lead = |s: &mut String| {
            if first {
                first = false;
                s.push_str("\n  + ROUTED ");
            } else {
                s.push_str("\n    NEW ");
            }
        };
        for w in canon.wires.iter().filter(|w| w.net == n as u32) {
            lead(&mut s);
            let _ = write!(
                s,
                "{} ( {} {} ) ( {} {} )",
                tech.layer(w.layer).name,
                w.a.x,
                w.a.y,
                w.b.x,
                w.b.y
            );
        }
        for v in canon.vias.iter().filter(|v| v.net == n as u32) {
            lead(&mut s);
            let _ = write!(
                s,
                "{} ( {} {} ) {}",
                tech.layer(v.cut).name,
                v.at.x,
                v.at.y,
                tech.cut(v.cut).name
            );
        }
        let _ = writeln!(s, " ;");
    }
    let _ = writeln!(s, "END NETS\n\nEND DESIGN");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::load_library;

    fn lib() -> CellLibrary {
        load_library(
            r#"{"masters": {
                "INV_X1": {"size_um": [0.4, 1.4], "max_cap_f": 6e-14,
                    "pins": {"A": {"direction": "input", "cap_f": 1.5e-15, "rect_um": [0.05, 0.5, 0.1, 0.6]},
                             "ZN": {"direction": "output", "rect_um": [0.3, 0.5, 0.35, 0.6]}}}}}"#,
        )
        .unwrap()
    }

    fn tech() -> TechConfig {
        TechConfig::uniform(4, 1000, 1e-16, 1e-17)
    }

    const MINIMAL: &str = "VERSION 5.8 ;
DESIGN tiny ;
UNITS DISTANCE MICRONS 1000 ;
DIEAREA ( 0 0 ) ( 10000 10000 ) ;
COMPONENTS 2 ;
- u1 INV_X1 + PLACED ( 1000 1000 ) N ;
- u2 INV_X1 + PLACED ( 3000 1000 ) N ;
END COMPONENTS
NETS 1 ;
- n1 ( u1 ZN ) ( u2 A )
  + ROUTED metal1 ( 1325 1550 ) ( 3075 * ) ;
END NETS
END DESIGN
";

    #[test]
    fn minimal_two_pin_net() {
        let f = parse_def_subset(MINIMAL, &lib(), &tech()).unwrap();
        assert_eq!(f.nets.len(), 1);
        assert_eq!(f.wires.len(), 1);
        assert_eq!(f.wires[0].layer, 1);
        assert_eq!(f.wires[0].a, Point::new(1325, 1550));
        assert_eq!(f.wires[0].b, Point::new(3075, 1550));
        let net = &f.nets[0];
        assert_eq!(f.pins[net.driver as usize].name, "ZN");
        assert_eq!(f.pins[net.sinks[0] as usize].cell.as_deref(), Some("u2"));
        // the wire ends inside both pin shapes
        assert!(f.pins[net.driver as usize].rect.contains(f.wires[0].a));
        assert!(f.pins[net.sinks[0] as usize].rect.contains(f.wires[0].b));
    }

    #[test]
    fn via_lands_on_cut_layer_and_switches_layer() {
        let text = MINIMAL.replace(
            "+ ROUTED metal1 ( 1325 1550 ) ( 3075 * ) ;",
            "+ ROUTED metal1 ( 1325 1550 ) via12 ( * 4000 ) via23 ( 3075 * ) ;",
        );
        let f = parse_def_subset(&text, &lib(), &tech()).unwrap();
        assert_eq!(
            f.vias,
            vec![
                Via { net: 0, cut: 1, at: Point::new(1325, 1550) },
                Via { net: 0, cut: 2, at: Point::new(1325, 4000) },
            ]
        );
        let layers: Vec<u8> = f.wires.iter().map(|w| w.layer).collect();
        assert_eq!(layers, vec![2, 3]);
    }

    #[test]
    fn unsupported_statement_is_located() {
        let text = MINIMAL.replace("COMPONENTS 2 ;", "ROW r0 core 0 0 N DO 10 BY 1 STEP 200 0 ;\nCOMPONENTS 2 ;");
        match parse_def_subset(&text, &lib(), &tech()) {
            Err(Error::Def { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("ROW"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn net_driver_count_is_checked() {
        let text = MINIMAL.replace("( u1 ZN ) ( u2 A )", "( u1 A ) ( u2 A )");
        let err = parse_def_subset(&text, &lib(), &tech()).unwrap_err().to_string();
        assert!(err.contains("0 drivers"), "{err}");
        let text = MINIMAL.replace("( u1 ZN ) ( u2 A )", "( u1 ZN ) ( u2 ZN )");
        let err = parse_def_subset(&text, &lib(), &tech()).unwrap_err().to_string();
        assert!(err.contains("2 drivers"), "{err}");
    }

    #[test]
    fn unknown_master_is_rejected() {
        let text = MINIMAL.replace("u2 INV_X1", "u2 NAND9");
        let err = parse_def_subset(&text, &lib(), &tech()).unwrap_err().to_string();
        assert!(err.contains("NAND9"), "{err}");
    }

    #[test]
    fn emit_then_parse_is_identity() {
        let text = MINIMAL.replace(
            "+ ROUTED metal1 ( 1325 1550 ) ( 3075 * ) ;",
            "+ ROUTED metal1 ( 1325 1550 ) via12 ( * 4000 ) via23 ( 3075 * ) via23 ;",
        );
        let f = parse_def_subset(&text, &lib(), &tech()).unwrap();
        let again = parse_def_subset(&emit_def(&f), &lib(), &tech()).unwrap();
        assert_eq!(again, f);
    }
}
