use serde::{Deserialize, Serialize};

use super::fragments::{build_from_graph, pin_label, SplitGraph};
use super::{FragmentKind, Fragments, FullLayout, Segment, SplitLayout, ViaPoint, VirtualPin};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub sink: u32,
    pub source: u32,
    pub sink_count: u32,
}

/// True source fragment of every sink fragment, sorted by sink id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub entries: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn new(mut entries: Vec<TruthEntry>) -> Self {
        entries.sort_by_key(|e| e.sink);
        GroundTruth { entries }
    }

    pub fn source_of(&self, sink: u32) -> Option<u32> {
        self.entry(sink).map(|e| e.source)
    }

    pub fn entry(&self, sink: u32) -> Option<&TruthEntry> {
        self.entries
            .binary_search_by_key(&sink, |e| e.sink)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn total_sink_pins(&self) -> u64 {
        self.entries.iter().map(|e| e.sink_count as u64).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Removes all geometry above `split_layer`, turns every cut via from the
/// split layer upward into a virtual pin, and records which source fragment
/// each sink fragment truly connects to.
pub fn split_layout(full: &FullLayout, split_layer: u8) -> Result<(SplitLayout, GroundTruth)> {
    full.validate()?;
    let top = full.top_routed_layer();
    if split_layer == 0 || split_layer >= top {
        return Err(Error::Invalid(format!(
            "split layer {split_layer} must lie in 1..{top} (top routed layer is {top})"
        )));
    }
    let m = split_layer;

    let mut wires = Vec::new();
    let mut wire_nets = Vec::new();
    for w in full.wires.iter().filter(|w| w.layer <= m) {
        wires.push(Segment {
            layer: w.layer,
            a: w.a,
            b: w.b,
        });
        wire_nets.push(w.net);
    }
    let mut vias = Vec::new();
    let mut via_nets = Vec::new();
    let mut virtual_pins = Vec::new();
    let mut vpin_nets = Vec::new();
    for v in &full.vias {
        if v.cut < m {
            vias.push(ViaPoint { cut: v.cut, at: v.at });
            via_nets.push(v.net);
        } else if v.cut == m {
            virtual_pins.push(VirtualPin {
                id: virtual_pins.len() as u32,
                at: v.at,
                fragment: None,
            });
            vpin_nets.push(v.net);
        }
    }
    let pins = full
        .pins
        .iter()
        .filter(|p| p.layer <= m)
        .cloned()
        .collect::<Vec<_>>();
    if pins.len() != full.pins.len() {
        return Err(Error::Invalid(format!(
            "split layer {m} lies below some pin shapes"
        )));
    }

    let mut split = SplitLayout {
        design: full.design.clone(),
        tech: full.tech.clone(),
        die_area: full.die_area,
        split_layer: m,
        cells: full.cells.clone(),
        pins,
        wires,
        vias,
        virtual_pins,
    };
    let mut graph = SplitGraph::new(&split);
    let frags = build_from_graph(&split, &mut graph)?;
    for (v, owner) in split.virtual_pins.iter_mut().zip(&frags.vpin_owner) {
        v.fragment = *owner;
    }

    let pin_nets = full.pin_nets();
    let frag_nets = fragment_nets(&split, &frags, &wire_nets, &via_nets, &vpin_nets, &pin_nets)?;

    // every sink pin must reach its driver through the FEOL or through a
    // pair of fragments
    for (n, net) in full.nets.iter().enumerate() {
        let droot = graph.uf.find(graph.pin_node(net.driver as usize));
        for &s in &net.sinks {
            let sroot = graph.uf.find(graph.pin_node(s as usize));
            if sroot == droot {
                continue;
            }
            let sink_frag = frags.pin_owner[s as usize];
            let src_frag = frags.pin_owner[net.driver as usize];
            if sink_frag.is_none() || src_frag.is_none() {
                return Err(Error::Layout(format!(
                    "net {} ({n}): sink {} is disconnected in the FEOL but {} no virtual pin",
                    net.name,
                    pin_label(&split, s),
                    if sink_frag.is_none() { "its geometry holds" } else { "the driver geometry holds" }
                )));
            }
        }
    }

    let mut entries = Vec::new();
    for f in frags.sinks() {
        let net = frag_nets[f.id as usize];
        let driver = full.nets[net as usize].driver;
        let source = frags.pin_owner[driver as usize].ok_or_else(|| {
            Error::Layout(format!("net {}: driver holds no virtual pin", full.nets[net as usize].name))
        })?;
        debug_assert_eq!(frags.get(source).kind, FragmentKind::Source);
        entries.push(TruthEntry {
            sink: f.id,
            source,
            sink_count: f.sink_count(),
        });
    }
    Ok((split, GroundTruth::new(entries)))
}

fn fragment_nets(
    split: &SplitLayout,
    frags: &Fragments,
    wire_nets: &[u32],
    via_nets: &[u32],
    vpin_nets: &[u32],
    pin_nets: &[Option<u32>],
) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(frags.len());
    for f in &frags.list {
        let mut nets = f
            .wires
            .iter()
            .map(|&w| Some(wire_nets[w as usize]))
            .chain(f.vias.iter().map(|&v| Some(via_nets[v as usize])))
            .chain(f.virtual_pins.iter().map(|&v| Some(vpin_nets[v as usize])))
            .chain(f.driver.iter().chain(&f.sinks).map(|&p| pin_nets[p as usize]))
            .flatten()
            .collect::<Vec<_>>();
        nets.sort_unstable();
        nets.dedup();
        match nets.as_slice() {
            [n] => out.push(*n),
            _ => {
                return Err(Error::Layout(format!(
                    "fragment {} (virtual pin at {:?}) shorts nets {:?}",
                    f.id, split.virtual_pins[f.virtual_pins[0] as usize].at, nets
                )))
            }
        }
    }
    Ok(out)
}
