//! Brute-force reference implementations for the integration tests. Each
//! oracle works from raw geometry with quadratic scans and shares no code
//! with the library beyond the data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smattack_core::candidates::{CandidateVpp, Label};
use smattack_core::geom::{Direction, Point, Rect};
use smattack_core::ingest::CellLibrary;
use smattack_core::layout::{split_layout, FragmentKind, FullLayout, GroundTruth, PinDirection, SplitLayout};
use smattack_core::synth::{generate_synthetic, SynthSpec};

pub struct Instance {
    pub spec: SynthSpec,
    pub full: FullLayout,
    pub lib: CellLibrary,
    pub split: SplitLayout,
    pub truth: GroundTruth,
}

/// A small synthetic design with randomized generator settings and split layer.
pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0a0a_c1e5);
    let biases = [0.0, 0.5, 1.0, 3.0, f64::INFINITY];
    let spec = SynthSpec {
        nets: rng.random_range(6..=24),
        bias: biases[rng.random_range(0..biases.len())],
        noise_um: if rng.random_bool(0.3) { rng.random_range(0.0..1.5) } else { 0.0 },
        cap_signal: rng.random_range(0.0..=1.0),
        share_driver: rng.random_range(0.0..0.5),
        merge_sinks: rng.random_range(0.0..0.9),
        seed,
        ..SynthSpec::default()
    };
    let split_at = rng.random_range(2..=4);
    let (full, lib) = generate_synthetic(&spec).expect("generator accepts the spec");
    let (split, truth) = split_layout(&full, split_at).expect("generated layouts split cleanly");
    Instance {
        spec,
        full,
        lib,
        split,
        truth,
    }
}

fn touches(a: &[(u8, Rect)], b: &[(u8, Rect)]) -> bool {
    a.iter().any(|(la, ra)| {
        b.iter()
            .any(|(lb, rb)| la == lb && ra.x0 <= rb.x1 && rb.x0 <= ra.x1 && ra.y0 <= rb.y1 && rb.y0 <= ra.y1)
    })
}

/// Component label of every node by breadth-first search over the
/// all-pairs touch relation.
fn components(nodes: &[Vec<(u8, Rect)>]) -> Vec<usize> {
    let n = nodes.len();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if label[j] == usize::MAX && touches(&nodes[i], &nodes[j]) {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    label
}

fn pt(p: Point) -> Rect {
    Rect {
        x0: p.x,
        y0: p.y,
        x1: p.x,
        y1: p.y,
    }
}

fn seg_rect(a: Point, b: Point) -> Rect {
    Rect {
        x0: a.x.min(b.x),
        y0: a.y.min(b.y),
        x1: a.x.max(b.x),
        y1: a.y.max(b.y),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleFragment {
    pub kind: FragmentKind,
    pub wires: Vec<u32>,
    pub vias: Vec<u32>,
    pub vpins: Vec<u32>,
    pub driver: Option<u32>,
    pub sinks: Vec<u32>,
}

/// Connected components of the split view that hold a virtual pin and at
/// least one cell pin, ordered by smallest virtual pin.
pub fn fragments(l: &SplitLayout) -> Vec<OracleFragment> {
    let m = l.split_layer;
    let mut nodes: Vec<Vec<(u8, Rect)>> = Vec::new();
    nodes.extend(l.wires.iter().map(|w| vec![(w.layer, seg_rect(w.a, w.b))]));
    nodes.extend(l.vias.iter().map(|v| vec![(v.cut, pt(v.at)), (v.cut + 1, pt(v.at))]));
    nodes.extend(l.virtual_pins.iter().map(|v| vec![(m, pt(v.at))]));
    nodes.extend(l.pins.iter().map(|p| vec![(p.layer, p.rect)]));
    let label = components(&nodes);
    let (nw, nv, np) = (l.wires.len(), l.vias.len(), l.virtual_pins.len());

    let mut by_label: BTreeMap<usize, OracleFragment> = BTreeMap::new();
    let mut blank = || OracleFragment {
        kind: FragmentKind::Sink,
        wires: vec![],
        vias: vec![],
        vpins: vec![],
        driver: None,
        sinks: vec![],
    };
    for (i, &c) in label.iter().enumerate() {
        let f = by_label.entry(c).or_insert_with(&mut blank);
        if i < nw {
            f.wires.push(i as u32);
        } else if i < nw + nv {
            f.vias.push((i - nw) as u32);
        } else if i < nw + nv + np {
            f.vpins.push((i - nw - nv) as u32);
        } else {
            let pin = (i - nw - nv - np) as u32;
            match l.pins[pin as usize].direction {
                PinDirection::Output => {
                    assert!(f.driver.is_none(), "two drivers in one component");
                    f.driver = Some(pin);
                    f.kind = FragmentKind::Source;
                }
                PinDirection::Input => f.sinks.push(pin),
            }
        }
    }
    let mut out: Vec<OracleFragment> = by_label
        .into_values()
        .filter(|f| !f.vpins.is_empty() && (f.driver.is_some() || !f.sinks.is_empty()))
        .collect();
    out.sort_by_key(|f| f.vpins[0]);
    out
}

/// Fragment id holding each virtual pin.
pub fn vpin_owner(frags: &[OracleFragment], vpins: usize) -> Vec<Option<u32>> {
    let mut owner = vec![None; vpins];
    for (id, f) in frags.iter().enumerate() {
        for &v in &f.vpins {
            owner[v as usize] = Some(id as u32);
        }
    }
    owner
}

/// Sink fragment to source fragment by tracing the complete routed
/// geometry from a sink pin to the driver it reaches.
pub fn truth(full: &FullLayout, split: &SplitLayout) -> BTreeMap<u32, (u32, u32)> {
    let frags = fragments(split);
    let mut nodes: Vec<Vec<(u8, Rect)>> = Vec::new();
    nodes.extend(full.wires.iter().map(|w| vec![(w.layer, seg_rect(w.a, w.b))]));
    nodes.extend(full.vias.iter().map(|v| vec![(v.cut, pt(v.at)), (v.cut + 1, pt(v.at))]));
    let base = nodes.len();
    nodes.extend(full.pins.iter().map(|p| vec![(p.layer, p.rect)]));
    let label = components(&nodes);
    let mut out = BTreeMap::new();
    for (id, f) in frags.iter().enumerate() {
        if f.kind != FragmentKind::Sink {
            continue;
        }
        let c = label[base + f.sinks[0] as usize];
        let drivers: Vec<u32> = (0..full.pins.len() as u32)
            .filter(|&p| label[base + p as usize] == c && full.pins[p as usize].direction == PinDirection::Output)
            .collect();
        assert_eq!(drivers.len(), 1, "a routed net reaches exactly one driver");
        let source = frags
            .iter()
            .position(|g| g.driver == Some(drivers[0]))
            .expect("the driver's geometry holds a virtual pin");
        out.insert(id as u32, (source as u32, f.sinks.len() as u32));
    }
    out
}

/// Half-line test per split-layer segment touching `p`: some segment's far
/// end lies on the other side of `p` from `q` along the segment, or `q` is
/// level with `p` on that axis.
pub fn prefers(l: &SplitLayout, p: Point, q: Point) -> bool {
    let mut incident = false;
    for w in l.wires.iter().filter(|w| w.layer == l.split_layer && w.a != w.b) {
        let r = seg_rect(w.a, w.b);
        if !(r.x0 <= p.x && p.x <= r.x1 && r.y0 <= p.y && p.y <= r.y1) {
            continue;
        }
        let horizontal = w.a.y == w.b.y;
        let coord = |v: Point| if horizontal { v.x } else { v.y };
        for e in [w.a, w.b] {
            let away = coord(e) - coord(p);
            if away == 0 {
                continue;
            }
            incident = true;
            let toward = coord(q) - coord(p);
            if toward == 0 || (toward > 0) != (away > 0) {
                return true;
            }
        }
    }
    !incident
}

fn preferred_axis(l: &SplitLayout) -> Direction {
    l.tech.layers[l.split_layer as usize - 1].direction
}

/// Exhaustive candidate selection for every sink fragment, in id order.
pub fn candidates(l: &SplitLayout, truth: &GroundTruth, n: usize) -> Vec<(u32, Vec<CandidateVpp>)> {
    let frags = fragments(l);
    let horizontal = preferred_axis(l) == Direction::Horizontal;
    let mut out = Vec::new();
    for (sink_id, sink) in frags.iter().enumerate() {
        if sink.kind != FragmentKind::Sink {
            continue;
        }
        let true_source = truth.entries.iter().find(|e| e.sink == sink_id as u32).map(|e| e.source);
        let mut best: Vec<CandidateVpp> = Vec::new();
        for (src_id, src) in frags.iter().enumerate() {
            if src.kind != FragmentKind::Source {
                continue;
            }
            let mut pairs = Vec::new();
            for &p in &sink.vpins {
                for &q in &src.vpins {
                    let (pa, qa) = (l.virtual_pins[p as usize].at, l.virtual_pins[q as usize].at);
                    if !(prefers(l, pa, qa) || prefers(l, qa, pa)) {
                        continue;
                    }
                    let (dx, dy) = ((qa.x - pa.x).abs(), (qa.y - pa.y).abs());
                    let (pref, nonpref) = if horizontal { (dx, dy) } else { (dy, dx) };
                    pairs.push(CandidateVpp {
                        sink_vpin: p,
                        source_vpin: q,
                        sink_fragment: sink_id as u32,
                        source_fragment: src_id as u32,
                        dist_nonpref: nonpref,
                        dist_pref: pref,
                        label: if Some(src_id as u32) == true_source {
                            Label::Positive
                        } else {
                            Label::Negative
                        },
                    });
                }
            }
            if let Some(b) = pairs
                .into_iter()
                .min_by_key(|c| (c.dist_nonpref, c.dist_pref, c.source_vpin, c.sink_vpin))
            {
                best.push(b);
            }
        }
        best.sort_by_key(|c| (c.dist_nonpref, c.dist_pref, c.source_vpin, c.sink_vpin));
        best.truncate(n);
        out.push((sink_id as u32, best));
    }
    out
}

/// CCR by listing every sink pin and checking its fragment's selection.
pub fn ccr(selected: &BTreeMap<u32, u32>, truth: &[(u32, u32, u32)]) -> (u64, u64) {
    let mut pins: Vec<(u32, u32)> = Vec::new();
    for &(sink, source, count) in truth {
        for _ in 0..count {
            pins.push((sink, source));
        }
    }
    let correct = pins.iter().filter(|(s, src)| selected.get(s) == Some(src)).count();
    (correct as u64, pins.len() as u64)
}

/// Raster of one virtual pin by testing every pixel square against every
/// shape. Pixel `(row, col)` covers `[x0, x0 + step)` by `[y0, y0 + step)`.
pub fn raster(l: &SplitLayout, frags: &[OracleFragment], vpin: u32, scale: f64, size: usize) -> Vec<u16> {
    let m = l.split_layer;
    let owner = vpin_owner(frags, l.virtual_pins.len());
    let mut wire_owner = vec![None; l.wires.len()];
    let mut via_owner = vec![None; l.vias.len()];
    for (id, f) in frags.iter().enumerate() {
        for &w in &f.wires {
            wire_owner[w as usize] = Some(id as u32);
        }
        for &v in &f.vias {
            via_owner[v as usize] = Some(id as u32);
        }
    }
    let mine = owner[vpin as usize];
    let bit = |layer: u8| 1u16 << (layer - 1);
    let mut shapes: Vec<(Rect, u16, Option<u32>)> = Vec::new();
    for (i, w) in l.wires.iter().enumerate() {
        shapes.push((seg_rect(w.a, w.b), bit(w.layer), wire_owner[i]));
    }
    for (i, v) in l.vias.iter().enumerate() {
        shapes.push((pt(v.at), bit(v.cut) | bit(v.cut + 1), via_owner[i]));
    }
    for (i, v) in l.virtual_pins.iter().enumerate() {
        shapes.push((pt(v.at), bit(m), owner[i]));
    }
    let c = l.virtual_pins[vpin as usize].at;
    let step = scale * l.tech.dbu_per_micron as f64;
    let die = l.die_area;
    let mut out = vec![0u16; size * size];
    for row in 0..size {
        for col in 0..size {
            let x0 = c.x as f64 + (col as f64 - (size / 2) as f64 - 0.5) * step;
            let y0 = c.y as f64 + (row as f64 - (size / 2) as f64 - 0.5) * step;
            let (x1, y1) = (x0 + step, y0 + step);
            for (r, layers, own) in &shapes {
                let (rx0, ry0) = (r.x0.max(die.x0) as f64, r.y0.max(die.y0) as f64);
                let (rx1, ry1) = (r.x1.min(die.x1) as f64, r.y1.min(die.y1) as f64);
                if rx0 > rx1 || ry0 > ry1 {
                    continue;
                }
                if rx0 < x1 && rx1 >= x0 && ry0 < y1 && ry1 >= y0 {
                    let is_own = own.is_some() && *own == mine;
                    out[row * size + col] |= if is_own { layers << m } else { *layers };
                }
            }
        }
    }
    out
}

/// Per-layer wirelength in microns and per-cut via count of one fragment,
/// summed segment by segment.
pub fn fragment_lengths(l: &SplitLayout, f: &OracleFragment) -> (Vec<f64>, Vec<u32>) {
    let m = l.split_layer as usize;
    let mut wl = vec![0.0; m];
    for &w in &f.wires {
        let s = &l.wires[w as usize];
        let len = (s.a.x - s.b.x).abs() + (s.a.y - s.b.y).abs();
        wl[s.layer as usize - 1] += len as f64 / l.tech.dbu_per_micron as f64;
    }
    let mut vias = vec![0u32; m - 1];
    for &v in &f.vias {
        vias[l.vias[v as usize].cut as usize - 1] += 1;
    }
    (wl, vias)
}

fn pin_cap(l: &SplitLayout, lib: &CellLibrary, pin: u32) -> f64 {
    let p = &l.pins[pin as usize];
    match &p.cell {
        Some(cell) => {
            let c = l.cells.iter().find(|c| &c.name == cell).expect("pin cell exists");
            lib.masters[&c.master].pins[&p.name].cap_f
        }
        None => lib.port.pin_cap_f,
    }
}

/// Lower load bound of a (sink, source) fragment pair in farads.
pub fn lower_bound(l: &SplitLayout, lib: &CellLibrary, sink: &OracleFragment, source: &OracleFragment) -> f64 {
    let mut total = 0.0;
    for f in [sink, source] {
        let (wl, vias) = fragment_lengths(l, f);
        for (layer, len) in wl.iter().enumerate() {
            total += len * l.tech.layers[layer].unit_cap_f_per_um;
        }
        for (cut, n) in vias.iter().enumerate() {
            total += *n as f64 * l.tech.cuts[cut].cap_f;
        }
    }
    total + sink.sinks.iter().map(|&p| pin_cap(l, lib, p)).sum::<f64>()
}

pub mod toy;
