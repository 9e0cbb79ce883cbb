use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::spatial::connect_shapes;
use super::union_find::UnionFind;
use super::{PinDirection, SplitLayout};
use crate::error::{Error, Result};
use crate::geom::Rect;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FragmentKind {
    Source,
    Sink,
}

/// Connected FEOL geometry holding at least one virtual pin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub id: u32,
    pub kind: FragmentKind,
    /// Indices into the split layout's `wires`.
    pub wires: Vec<u32>,
    /// Indices into the split layout's `vias`.
    pub vias: Vec<u32>,
    pub virtual_pins: Vec<u32>,
    pub driver: Option<u32>,
    pub sinks: Vec<u32>,
}

impl Fragment {
    pub fn sink_count(&self) -> u32 {
        self.sinks.len() as u32
    }
}

/// Fragment partition of a split layout plus reverse ownership maps.
#[derive(Clone, Debug, Default)]
pub struct Fragments {
    pub list: Vec<Fragment>,
    pub wire_owner: Vec<Option<u32>>,
    pub via_owner: Vec<Option<u32>>,
    pub vpin_owner: Vec<Option<u32>>,
    pub pin_owner: Vec<Option<u32>>,
}

impl Fragments {
    pub fn get(&self, id: u32) -> &Fragment {
        &self.list[id as usize]
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Fragment> {
        self.list.iter().filter(|f| f.kind == FragmentKind::Source)
    }

    pub fn sinks(&self) -> impl Iterator<Item = &Fragment> {
        self.list.iter().filter(|f| f.kind == FragmentKind::Sink)
    }
}

/// Connectivity of the attacker-visible geometry. Node numbering: wires,
/// then vias, then virtual pins, then cell pins.
pub(crate) struct SplitGraph {
    pub uf: UnionFind,
    pub wires: usize,
    pub vias: usize,
    pub vpins: usize,
}

impl SplitGraph {
    pub fn new(layout: &SplitLayout) -> Self {
        let (nw, nv, np) = (layout.wires.len(), layout.vias.len(), layout.virtual_pins.len());
        let mut shapes: Vec<(u8, Rect, u32)> = Vec::with_capacity(nw + 2 * nv + np + layout.pins.len());
        for (i, w) in layout.wires.iter().enumerate() {
            shapes.push((w.layer, w.rect(), i as u32));
        }
        for (i, v) in layout.vias.iter().enumerate() {
            let node = (nw + i) as u32;
            shapes.push((v.cut, Rect::point(v.at), node));
            shapes.push((v.cut + 1, Rect::point(v.at), node));
        }
        for (i, v) in layout.virtual_pins.iter().enumerate() {
            shapes.push((layout.split_layer, Rect::point(v.at), (nw + nv + i) as u32));
        }
        for (i, p) in layout.pins.iter().enumerate() {
            shapes.push((p.layer, p.rect, (nw + nv + np + i) as u32));
        }
        let uf = connect_shapes(nw + nv + np + layout.pins.len(), &shapes);
        SplitGraph {
            uf,
            wires: nw,
            vias: nv,
            vpins: np,
        }
    }

    pub fn via_node(&self, i: usize) -> u32 {
        (self.wires + i) as u32
    }

    pub fn vpin_node(&self, i: usize) -> u32 {
        (self.wires + self.vias + i) as u32
    }

    pub fn pin_node(&self, i: usize) -> u32 {
        (self.wires + self.vias + self.vpins + i) as u32
    }
}

/// Partitions FEOL geometry into fragments: connected components holding at
/// least one virtual pin. A component with a driver pin is a source; one with
/// only sink pins is a sink. Components without any cell pin are dropped.
///
/// Fragment ids follow the smallest virtual pin id of each component.
pub fn build_fragments(layout: &SplitLayout) -> Result<Fragments> {
    let mut graph = SplitGraph::new(layout);
    build_from_graph(layout, &mut graph)
}

pub(crate) fn build_from_graph(layout: &SplitLayout, graph: &mut SplitGraph) -> Result<Fragments> {
    // root -> (drivers, sinks)
    let mut pins_by_root: BTreeMap<u32, (Vec<u32>, Vec<u32>)> = BTreeMap::new();
    for (i, p) in layout.pins.iter().enumerate() {
        let root = graph.uf.find(graph.pin_node(i));
        let entry = pins_by_root.entry(root).or_default();
        match p.direction {
            PinDirection::Output => entry.0.push(i as u32),
            PinDirection::Input => entry.1.push(i as u32),
        }
    }
    for (drivers, _) in pins_by_root.values() {
        if drivers.len() > 1 {
            let names: Vec<String> = drivers.iter().map(|&d| pin_label(layout, d)).collect();
            return Err(Error::Layout(format!(
                "connected FEOL geometry holds several driver pins: {}",
                names.join(", ")
            )));
        }
    }

    let mut frag_of_root: BTreeMap<u32, u32> = BTreeMap::new();
    let mut list: Vec<Fragment> = Vec::new();
    let mut vpin_owner = vec![None; layout.virtual_pins.len()];
    for (v, owner) in vpin_owner.iter_mut().enumerate() {
        let root = graph.uf.find(graph.vpin_node(v));
        if let Some(&f) = frag_of_root.get(&root) {
            list[f as usize].virtual_pins.push(v as u32);
            *owner = Some(f);
            continue;
        }
        let Some((drivers, sinks)) = pins_by_root.get(&root) else {
            continue;
        };
        let id = list.len() as u32;
        let kind = if drivers.is_empty() {
            FragmentKind::Sink
        } else {
            FragmentKind::Source
        };
        list.push(Fragment {
            id,
            kind,
            wires: Vec::new(),
            vias: Vec::new(),
            virtual_pins: vec![v as u32],
            driver: drivers.first().copied(),
            sinks: sinks.clone(),
        });
        frag_of_root.insert(root, id);
        *owner = Some(id);
    }

    let mut wire_owner = vec![None; layout.wires.len()];
    for (i, owner) in wire_owner.iter_mut().enumerate() {
        let root = graph.uf.find(i as u32);
        if let Some(&f) = frag_of_root.get(&root) {
            list[f as usize].wires.push(i as u32);
            *owner = Some(f);
        }
    }
    let mut via_owner = vec![None; layout.vias.len()];
    for (i, owner) in via_owner.iter_mut().enumerate() {
        let root = graph.uf.find(graph.via_node(i));
        if let Some(&f) = frag_of_root.get(&root) {
            list[f as usize].vias.push(i as u32);
            *owner = Some(f);
        }
    }
    let mut pin_owner = vec![None; layout.pins.len()];
    for (i, owner) in pin_owner.iter_mut().enumerate() {
        let root = graph.uf.find(graph.pin_node(i));
        *owner = frag_of_root.get(&root).copied();
    }

    Ok(Fragments {
        list,
        wire_owner,
        via_owner,
        vpin_owner,
        pin_owner,
    })
}

pub(crate) fn pin_label(layout: &SplitLayout, pin: u32) -> String {
    let p = &layout.pins[pin as usize];
    match &p.cell {
        Some(c) => format!("{c}/{}", p.name),
        None => format!("PIN/{}", p.name),
    }
}
