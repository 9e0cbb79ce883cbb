//! Seeded synthetic benchmark layouts.
//!
//! Every net climbs from its M1 pins through M2 stubs onto M3 tracks, leaves
//! the FEOL through one `via34` per fragment and is closed in M4/M5. Sinks
//! are scattered around their driver with a configurable bias, and driver
//! strengths are optionally sized so that the load bound singles out the
//! true source.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::FragmentStats;
use crate::geom::{Orientation, Point, Rect};
use crate::ingest::{CellLibrary, LibPin, Master, PortElectrical};
use crate::layout::{build_fragments, split_layout, Cell, FullLayout, Net, Pin, PinDirection, TechConfig, Via, Wire};

const DBU: u32 = 1000;
const PITCH: i64 = 50;
const DRIVER_MASTERS: usize = 64;
const SINK_MASTERS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub nets: usize,
    /// Relative weight of fanout `1, 2, ...`.
    pub fanout_weights: Vec<f64>,
    /// Die side; defaults to `8 * sqrt(nets)` microns.
    pub die_um: Option<f64>,
    /// Proximity bias: sinks scatter around their driver with standard
    /// deviation `spread_um / bias`. Zero places sinks uniformly, infinity
    /// on top of the driver.
    pub bias: f64,
    pub spread_um: f64,
    /// Uniform jitter added to every sink position.
    pub noise_um: f64,
    /// Fraction of nets whose driver is the weakest one able to carry the load.
    pub cap_signal: f64,
    pub driver_spacing_um: f64,
    /// Probability that a sink shares its driver's FEOL fragment.
    pub share_driver: f64,
    /// Probability that a sink joins the previous sink's fragment when they
    /// are close.
    pub merge_sinks: f64,
    /// Split layer the capacitance signal is sized for.
    pub split_layer: u8,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            nets: 200,
            fanout_weights: vec![0.6, 0.25, 0.15],
            die_um: None,
            bias: 0.7,
            spread_um: 4.0,
            noise_um: 0.0,
            cap_signal: 1.0,
            driver_spacing_um: 2.0,
            share_driver: 0.15,
            merge_sinks: 0.3,
            split_layer: 3,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn die_side_um(&self) -> f64 {
        self.die_um.unwrap_or(8.0 * (self.nets as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.nets == 0 {
            return Err(Error::Invalid("net count must be positive".into()));
        }
        if self.fanout_weights.is_empty()
            || self.fanout_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.fanout_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Invalid("fanout weights must be non-negative with a positive sum".into()));
        }
        let side = self.die_side_um();
        if !(side.is_finite() && side > 2.0) {
            return Err(Error::Invalid(format!("die side {side} um is too small")));
        }
        if [self.bias, self.spread_um, self.noise_um].iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Invalid("bias, spread and noise must be non-negative".into()));
        }
        for (name, p) in [
            ("cap signal", self.cap_signal),
            ("driver sharing", self.share_driver),
            ("sink merging", self.merge_sinks),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Invalid(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        if !(1..=4).contains(&self.split_layer) {
            return Err(Error::Invalid(format!("split layer {} outside 1..=4", self.split_layer)));
        }
        Ok(())
    }
}

/// The five-layer stack used by generated designs.
pub fn synthetic_tech() -> TechConfig {
    let mut t = TechConfig::uniform(5, DBU, 0.2e-15, 0.05e-15);
    for (l, c) in t.layers.iter_mut().zip([0.16e-15, 0.18e-15, 0.2e-15, 0.2e-15, 0.2e-15]) {
        l.unit_cap_f_per_um = c;
    }
    t
}

fn log_spaced(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    lo * (hi / lo).powf(i as f64 / (n - 1) as f64)
}

fn single_pin_master(pin: &str, direction: PinDirection, cap_f: f64) -> Master {
    Master {
        size_um: [0.2, 0.2],
        pins: BTreeMap::from([(
            pin.to_string(),
            LibPin {
                direction,
                cap_f,
                layer: 1,
                rect_um: [0.08, 0.08, 0.12, 0.12],
            },
        )]),
        max_cap_f: None,
        drive_res_ohm: 1000.0,
        intrinsic_delay_s: 10e-12,
    }
}

/// Driver masters `DRV_00..` with maximum loads log-spaced over 1-200 fF and
/// sink masters `SNK_0..` with input loads log-spaced over 0.5-8 fF.
pub fn synthetic_library() -> CellLibrary {
    let mut masters = BTreeMap::new();
    for i in 0..DRIVER_MASTERS {
        let max_cap = log_spaced(1e-15, 200e-15, DRIVER_MASTERS, i);
        let mut m = single_pin_master("Z", PinDirection::Output, 0.0);
        m.max_cap_f = Some(max_cap);
        m.drive_res_ohm = 4000.0 * (1e-15 / max_cap).sqrt();
        m.intrinsic_delay_s = 8e-12 + 4e-12 * i as f64 / DRIVER_MASTERS as f64;
        masters.insert(format!("DRV_{i:02}"), m);
    }
    for i in 0..SINK_MASTERS {
        let cap = log_spaced(0.5e-15, 8e-15, SINK_MASTERS, i);
        masters.insert(format!("SNK_{i}"), single_pin_master("A", PinDirection::Input, cap));
    }
    CellLibrary {
        masters,
        port: PortElectrical::default(),
    }
}

fn driver_max_caps() -> Vec<f64> {
    (0..DRIVER_MASTERS)
        .map(|i| log_spaced(1e-15, 200e-15, DRIVER_MASTERS, i))
        .collect()
}

/// Free grid columns; each pin and each virtual pin owns one.
struct Columns {
    used: Vec<bool>,
}

impl Columns {
    fn x(i: usize) -> i64 {
        PITCH / 2 + i as i64 * PITCH
    }

    fn index(x: f64) -> isize {
        ((x - (PITCH / 2) as f64) / PITCH as f64).round() as isize
    }

    /// Nearest free column to `x` strictly inside `(lo, hi)`.
    fn take_near(&mut self, x: f64, lo: i64, hi: i64) -> Option<i64> {
        let n = self.used.len() as isize;
        let c = Self::index(x).clamp(0, n - 1);
        for d in 0..n {
            for i in [c - d, c + d] {
                if i < 0 || i >= n || (d == 0 && i != c) {
                    continue;
                }
                let xi = Self::x(i as usize);
                if !self.used[i as usize] && xi > lo && xi < hi {
                    self.used[i as usize] = true;
                    return Some(xi);
                }
            }
            if c - d < 0 && c + d >= n {
                break;
            }
        }
        None
    }
}

/// Horizontal tracks of one metal layer with their occupied intervals.
struct Tracks {
    busy: Vec<Vec<(i64, i64)>>,
}

impl Tracks {
    fn y(i: usize) -> i64 {
        PITCH / 2 + i as i64 * PITCH
    }

    /// Reserves `[x0, x1]` on the free track nearest to `y`.
    fn take_near(&mut self, y: i64, x0: i64, x1: i64) -> Option<i64> {
        let n = self.busy.len() as isize;
        let c = Columns::index(y as f64).clamp(0, n - 1);
        for d in 0..n {
            for i in [c - d, c + d] {
                if i < 0 || i >= n || (d == 0 && i != c) {
                    continue;
                }
                let t = &mut self.busy[i as usize];
                if t.iter().all(|&(a, b)| b < x0 || a > x1) {
                    t.push((x0, x1));
                    return Some(Self::y(i as usize));
                }
            }
            if c - d < 0 && c + d >= n {
                break;
            }
        }
        None
    }
}

struct PlacedPin {
    at: Point,
}

struct FragmentPlan {
    net: usize,
    pins: Vec<usize>,
    vpin_x: i64,
    track: i64,
    span: (i64, i64),
}

fn unroutable(what: &str) -> Error {
    Error::Invalid(format!("unroutable spec: no room for {what}; enlarge the die"))
}

fn pick_fanout(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i + 1;
        }
        u -= w;
    }
    weights.len()
}

/// Whether a virtual pin at `vx` on a wire spanning `span` prefers a
/// partner at column `t` along the wire's axis.
fn prefers_along(vx: i64, span: (i64, i64), t: i64) -> bool {
    let east = span.1 > vx;
    let west = span.0 < vx;
    (east && t <= vx) || (west && t >= vx) || (!east && !west)
}

/// Generates a routed layout and the library it refers to.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(FullLayout, CellLibrary)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lib = synthetic_library();
    let tech = synthetic_tech();
    let side = (spec.die_side_um() * DBU as f64).round() as i64;
    let slots = ((side - PITCH / 2) / PITCH) as usize;
    let mut columns = Columns { used: vec![false; slots] };
    // border columns stay free so a span can always grow by one pitch
    columns.used[0] = true;
    columns.used[slots - 1] = true;
    let mut m3 = Tracks {
        busy: vec![Vec::new(); slots],
    };
    let mut m5 = Tracks {
        busy: vec![Vec::new(); slots],
    };
    let snap_y = |y: f64| Tracks::y(Columns::index(y).clamp(0, slots as isize - 1) as usize);
    let margin = PITCH as f64;
    let hi = side as f64 - margin;

    // drivers, spread with a minimum spacing where possible
    let spacing = spec.driver_spacing_um * DBU as f64;
    let mut drivers: Vec<(f64, f64)> = Vec::with_capacity(spec.nets);
    for _ in 0..spec.nets {
        let mut best = (0.0, 0.0);
        for attempt in 0..64 {
            let p = (rng.random_range(margin..hi), rng.random_range(margin..hi));
            best = p;
            let clear = drivers
                .iter()
                .all(|q| (q.0 - p.0).abs().max((q.1 - p.1).abs()) >= spacing);
            if clear || attempt == 63 {
                break;
            }
        }
        drivers.push(best);
    }

    let sigma = if spec.bias == 0.0 {
        f64::INFINITY
    } else {
        spec.spread_um * DBU as f64 / spec.bias
    };
    let scatter = (sigma.is_finite() && sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    let noise = spec.noise_um * DBU as f64;

    let mut pins: Vec<PlacedPin> = Vec::new();
    let mut pin_master: Vec<String> = Vec::new();
    let mut nets: Vec<(usize, Vec<usize>)> = Vec::new();
    for d in &drivers {
        let x = columns
            .take_near(d.0, i64::MIN, i64::MAX)
            .ok_or_else(|| unroutable("driver pins"))?;
        let driver = pins.len();
        pins.push(PlacedPin {
            at: Point::new(x, snap_y(d.1)),
        });
        pin_master.push(String::new());
        let fanout = pick_fanout(&mut rng, &spec.fanout_weights);
        let mut sinks = Vec::with_capacity(fanout);
        for _ in 0..fanout {
            let (mut sx, mut sy) = match &scatter {
                _ if sigma.is_infinite() => (rng.random_range(margin..hi), rng.random_range(margin..hi)),
                Some(n) => (d.0 + n.sample(&mut rng), d.1 + n.sample(&mut rng)),
                None => *d,
            };
            if noise > 0.0 {
                sx += rng.random_range(-noise..noise);
                sy += rng.random_range(-noise..noise);
            }
            let (sx, sy) = (sx.clamp(margin, hi), sy.clamp(margin, hi));
            let x = columns
                .take_near(sx, i64::MIN, i64::MAX)
                .ok_or_else(|| unroutable("sink pins"))?;
            sinks.push(pins.len());
            pins.push(PlacedPin {
                at: Point::new(x, snap_y(sy)),
            });
            pin_master.push(format!("SNK_{}", rng.random_range(0..SINK_MASTERS)));
        }
        nets.push((driver, sinks));
    }

    // FEOL fragments: the driver's, then groups of sinks
    let near = 3.0 * DBU as f64;
    let mut plans: Vec<FragmentPlan> = Vec::new();
    let mut driver_plan = vec![0usize; nets.len()];
    for (n, (driver, sinks)) in nets.iter().enumerate() {
        let mut driver_pins = vec![*driver];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (k, &s) in sinks.iter().enumerate() {
            let share = k > 0 || sinks.len() > 1;
            if share && rng.random_bool(spec.share_driver) && driver_pins.len() == 1 && sinks.len() > 1 {
                driver_pins.push(s);
                continue;
            }
            let merge = groups.last().is_some_and(|g| {
                let a = pins[*g.last().unwrap()].at;
                let b = pins[s].at;
                ((a.x - b.x).abs() as f64) < near && ((a.y - b.y).abs() as f64) < near
            }) && rng.random_bool(spec.merge_sinks);
            if merge {
                groups.last_mut().unwrap().push(s);
            } else {
                groups.push(vec![s]);
            }
        }
        if groups.is_empty() {
            groups.push(vec![driver_pins.pop().unwrap()]);
        }

        // the driver's virtual pin leans toward its sinks
        let dp = pins[*driver].at;
        let cx = groups.iter().flatten().map(|&s| pins[s].at.x as f64).sum::<f64>()
            / groups.iter().map(|g| g.len()).sum::<usize>() as f64;
        let lean = (cx - dp.x as f64).signum() * rng.random_range(0.1..0.6) * DBU as f64;
        let vx = columns
            .take_near(dp.x as f64 + lean, i64::MIN, i64::MAX)
            .ok_or_else(|| unroutable("virtual pins"))?;
        let xs = driver_pins.iter().map(|&p| pins[p].at.x).chain([vx]);
        let span = (xs.clone().min().unwrap(), xs.max().unwrap());
        let track = m3.take_near(dp.y, span.0, span.1).ok_or_else(|| unroutable("M3 tracks"))?;
        driver_plan[n] = plans.len();
        plans.push(FragmentPlan {
            net: n,
            pins: driver_pins,
            vpin_x: vx,
            track,
            span,
        });

        for g in groups {
            let t = vx;
            let lo = g.iter().map(|&p| pins[p].at.x).min().unwrap();
            let hi = g.iter().map(|&p| pins[p].at.x).max().unwrap();
            let reach = rng.random_range(0.1..1.0) * DBU as f64;
            let svx = if t > hi {
                columns.take_near(hi as f64 + reach, hi, i64::MAX)
            } else if t < lo {
                columns.take_near(lo as f64 - reach, i64::MIN, lo)
            } else {
                columns.take_near(t as f64, lo, hi)
            }
            .or_else(|| columns.take_near(t as f64, i64::MIN, i64::MAX))
            .ok_or_else(|| unroutable("virtual pins"))?;
            let mut span = (lo.min(svx), hi.max(svx));
            if !prefers_along(svx, span, t) {
                if svx == span.0 {
                    span.0 -= PITCH;
                } else {
                    span.1 += PITCH;
                }
            }
            let y = (g.iter().map(|&p| pins[p].at.y).sum::<i64>() as f64 / g.len() as f64) as i64;
            let track = m3.take_near(y, span.0, span.1).ok_or_else(|| unroutable("M3 tracks"))?;
            plans.push(FragmentPlan {
                net: n,
                pins: g,
                vpin_x: svx,
                track,
                span,
            });
        }
    }

    // geometry
    let mut wires = Vec::new();
    let mut vias = Vec::new();
    let mut net_vpins: Vec<Vec<i64>> = vec![Vec::new(); nets.len()];
    let mut vpin_track: Vec<Vec<(i64, i64)>> = vec![Vec::new(); nets.len()];
    for f in &plans {
        let net = f.net as u32;
        let ty = f.track;
        let mut stops = vec![f.span.0, f.span.1, f.vpin_x];
        for &p in &f.pins {
            let at = pins[p].at;
            vias.push(Via { net, cut: 1, at });
            if at.y != ty {
                wires.push(Wire {
                    net,
                    layer: 2,
                    a: at,
                    b: Point::new(at.x, ty),
                });
            }
            vias.push(Via {
                net,
                cut: 2,
                at: Point::new(at.x, ty),
            });
            stops.push(at.x);
        }
        stops.sort_unstable();
        stops.dedup();
        for w in stops.windows(2) {
            wires.push(Wire {
                net,
                layer: 3,
                a: Point::new(w[0], ty),
                b: Point::new(w[1], ty),
            });
        }
        vias.push(Via {
            net,
            cut: 3,
            at: Point::new(f.vpin_x, ty),
        });
        net_vpins[f.net].push(f.vpin_x);
        vpin_track[f.net].push((f.vpin_x, ty));
    }
    for (n, xs) in net_vpins.iter_mut().enumerate() {
        xs.sort_unstable();
        let dy = pins[nets[n].0].at.y;
        let by = m5
            .take_near(dy, xs[0], *xs.last().unwrap())
            .ok_or_else(|| unroutable("M5 tracks"))?;
        let net = n as u32;
        for &(x, ty) in &vpin_track[n] {
            if ty != by {
                wires.push(Wire {
                    net,
                    layer: 4,
                    a: Point::new(x, ty),
                    b: Point::new(x, by),
                });
            }
            vias.push(Via {
                net,
                cut: 4,
                at: Point::new(x, by),
            });
        }
        for w in xs.windows(2) {
            wires.push(Wire {
                net,
                layer: 5,
                a: Point::new(w[0], by),
                b: Point::new(w[1], by),
            });
        }
    }

    // cells and pins
    let width = 6usize.max(format!("{}", pins.len()).len());
    let mut cells = Vec::with_capacity(pins.len());
    for (i, p) in pins.iter().enumerate() {
        let master = if pin_master[i].is_empty() {
            "DRV_00".to_string()
        } else {
            pin_master[i].clone()
        };
        cells.push(Cell {
            name: format!("u{i:0width$}"),
            master,
            origin: Point::new(p.at.x - 100, p.at.y - 100),
            orient: Orientation::N,
        });
    }
    let mut layout = FullLayout {
        design: format!("synth_n{}_s{}", spec.nets, spec.seed),
        tech,
        die_area: Rect::new(Point::new(0, 0), Point::new(side, side)),
        cells,
        pins: Vec::new(),
        wires,
        vias,
        nets: nets
            .iter()
            .enumerate()
            .map(|(n, (d, s))| Net {
                name: format!("n{n}"),
                driver: *d as u32,
                sinks: s.iter().map(|&p| p as u32).collect(),
            })
            .collect(),
    };
    layout.pins = place_all(&lib, &layout.cells)?;
    size_drivers(&mut layout, &lib, spec, &nets, &mut rng)?;
    layout.canonicalize();
    layout.validate()?;
    Ok((layout, lib))
}

fn place_all(lib: &CellLibrary, cells: &[Cell]) -> Result<Vec<Pin>> {
    let mut pins = Vec::with_capacity(cells.len());
    for c in cells {
        pins.extend(lib.place_pins(c, DBU)?);
    }
    Ok(pins)
}

/// Chooses every driver master from the load its net presents at the split
/// layer.
fn size_drivers(
    layout: &mut FullLayout,
    lib: &CellLibrary,
    spec: &SynthSpec,
    nets: &[(usize, Vec<usize>)],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let (split, _) = split_layout(layout, spec.split_layer)?;
    let frags = build_fragments(&split)?;
    let elec = lib.resolve_pins(&split.cells, &split.pins)?;
    let stats: Vec<FragmentStats> = frags.list.iter().map(|f| FragmentStats::new(f, &split, &elec)).collect();
    let caps = driver_max_caps();
    for (driver, sinks) in nets {
        let Some(src) = frags.pin_owner[*driver] else { continue };
        let s = &stats[src as usize];
        let mut needed = 0.0f64;
        for &p in sinks {
            if let Some(f) = frags.pin_owner[p].filter(|&f| f != src) {
                let k = &stats[f as usize];
                needed = needed.max(k.sink_cap_f + k.wire_cap_f + k.via_cap_f + s.wire_cap_f + s.via_cap_f);
            }
        }
        let target = if rng.random_bool(spec.cap_signal) {
            needed
        } else {
            needed * rng.random_range(1.5f64.ln()..10f64.ln()).exp()
        };
        let idx = caps.iter().position(|&c| c >= target).unwrap_or(caps.len() - 1);
        layout.cells[*driver].master = format!("DRV_{idx:02}");
    }
    Ok(())
}
