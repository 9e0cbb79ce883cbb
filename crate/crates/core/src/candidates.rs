//! Virtual pin pair enumeration and the three selection criteria: direction,
//! non-duplication and distance.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{Direction, Point, Rect};
use crate::layout::spatial::ShapeIndex;
use crate::layout::{FragmentKind, Fragments, GroundTruth, SplitLayout, VirtualPin};

pub const DEFAULT_CANDIDATES: usize = 31;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Unknown,
}

/// A sink virtual pin paired with a source virtual pin. Distances are in
/// database units along the split layer's preferred and non-preferred axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateVpp {
    pub sink_vpin: u32,
    pub source_vpin: u32,
    pub sink_fragment: u32,
    pub source_fragment: u32,
    pub dist_nonpref: i64,
    pub dist_pref: i64,
    pub label: Label,
}

impl CandidateVpp {
    /// Total order used for ranking: non-preferred distance, then preferred
    /// distance, then virtual pin ids.
    pub fn rank_key(&self) -> (i64, i64, u32, u32) {
        (self.dist_nonpref, self.dist_pref, self.source_vpin, self.sink_vpin)
    }

    pub fn manhattan(&self) -> i64 {
        self.dist_nonpref + self.dist_pref
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateGroup {
    pub sink_fragment: u32,
    pub capacity: usize,
    pub candidates: Vec<CandidateVpp>,
    pub contains_positive: bool,
}

impl CandidateGroup {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    /// An empty group means the sink is unpredictable.
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn positive_index(&self) -> Option<usize> {
        self.candidates.iter().position(|c| c.label == Label::Positive)
    }
}

/// Per virtual pin, the split-layer wire arms leaving it: the axis and the
/// sign of the far endpoint relative to the pin.
#[derive(Clone, Debug)]
pub struct PreferenceIndex {
    arms: Vec<Vec<(Direction, i8)>>,
}

fn arms_of(p: Point, wires: impl Iterator<Item = (Point, Point)>) -> Vec<(Direction, i8)> {
    let mut arms = Vec::new();
    for (a, b) in wires {
        if a == b || !Rect::new(a, b).contains(p) {
            continue;
        }
        let axis = if a.y == b.y { Direction::Horizontal } else { Direction::Vertical };
        for far in [a, b] {
            let s = (far.along(axis) - p.along(axis)).signum() as i8;
            if s != 0 {
                arms.push((axis, s));
            }
        }
    }
    arms.sort_by_key(|&(d, s)| (d == Direction::Vertical, s));
    arms.dedup();
    arms
}

impl PreferenceIndex {
    pub fn new(layout: &SplitLayout) -> Self {
        let m = layout.split_layer;
        let index = ShapeIndex::new(
            layout
                .wires
                .iter()
                .enumerate()
                .filter(|(_, w)| w.layer == m)
                .map(|(i, w)| (w.rect(), i as u32)),
        );
        let arms = layout
            .virtual_pins
            .iter()
            .map(|v| {
                let hits = index.query(&Rect::point(v.at)).map(|(_, i)| {
                    let w = &layout.wires[i as usize];
                    (w.a, w.b)
                });
                arms_of(v.at, hits)
            })
            .collect();
        PreferenceIndex { arms }
    }

    /// Whether virtual pin `p` prefers location `q`: some split-layer wire
    /// leaving `p` points away from `q` along its own axis, or `q` is
    /// aligned with `p` on that axis. A pin without wires prefers everything.
    pub fn prefers(&self, p: u32, p_at: Point, q_at: Point) -> bool {
        let arms = &self.arms[p as usize];
        arms.is_empty()
            || arms.iter().any(|&(axis, s)| {
                let dq = (q_at.along(axis) - p_at.along(axis)).signum() as i8;
                dq * s <= 0
            })
    }

    pub fn arms(&self, p: u32) -> &[(Direction, i8)] {
        &self.arms[p as usize]
    }
}

/// Single-pair convenience form of [`PreferenceIndex::prefers`].
pub fn prefers(p: &VirtualPin, q: &VirtualPin, layout: &SplitLayout) -> bool {
    let m = layout.split_layer;
    let arms = arms_of(
        p.at,
        layout.wires.iter().filter(|w| w.layer == m).map(|w| (w.a, w.b)),
    );
    PreferenceIndex { arms: vec![arms] }.prefers(0, p.at, q.at)
}

/// Keep a pair unless neither pin prefers the other.
pub fn direction_filter(sink_prefers_source: bool, source_prefers_sink: bool) -> bool {
    sink_prefers_source || source_prefers_sink
}

/// One pair per (sink fragment, source fragment), the one nearest in the
/// non-preferred direction. Output is in rank order.
pub fn dedupe_pairs(vpps: &[CandidateVpp]) -> Vec<CandidateVpp> {
    let mut best: BTreeMap<(u32, u32), CandidateVpp> = BTreeMap::new();
    for v in vpps {
        best.entry((v.sink_fragment, v.source_fragment))
            .and_modify(|b| {
                if v.rank_key() < b.rank_key() {
                    *b = *v;
                }
            })
            .or_insert(*v);
    }
    let mut out: Vec<CandidateVpp> = best.into_values().collect();
    out.sort_by_key(|v| v.rank_key());
    out
}

/// Candidate selection over one split layout.
pub struct CandidateGenerator<'a> {
    layout: &'a SplitLayout,
    fragments: &'a Fragments,
    prefs: PreferenceIndex,
    pref_dir: Direction,
}

impl<'a> CandidateGenerator<'a> {
    pub fn new(layout: &'a SplitLayout, fragments: &'a Fragments) -> Self {
        CandidateGenerator {
            layout,
            fragments,
            prefs: PreferenceIndex::new(layout),
            pref_dir: layout.split_direction(),
        }
    }

    pub fn preferences(&self) -> &PreferenceIndex {
        &self.prefs
    }

    fn pair(&self, sink_vpin: u32, source_vpin: u32) -> CandidateVpp {
        let p = &self.layout.virtual_pins[sink_vpin as usize];
        let q = &self.layout.virtual_pins[source_vpin as usize];
        CandidateVpp {
            sink_vpin,
            source_vpin,
            sink_fragment: p.fragment.expect("sink pin has a fragment"),
            source_fragment: q.fragment.expect("source pin has a fragment"),
            dist_nonpref: (q.at.along(self.pref_dir.other()) - p.at.along(self.pref_dir.other())).abs(),
            dist_pref: (q.at.along(self.pref_dir) - p.at.along(self.pref_dir)).abs(),
            label: Label::Unknown,
        }
    }

    /// All pairs between `sink` and every source fragment that pass the
    /// direction criterion.
    pub fn direction_filtered(&self, sink: u32) -> Vec<CandidateVpp> {
        let sink_frag = self.fragments.get(sink);
        debug_assert_eq!(sink_frag.kind, FragmentKind::Sink);
        let mut out = Vec::new();
        for src in self.fragments.sources() {
            for &q in &src.virtual_pins {
                let q_at = self.layout.virtual_pins[q as usize].at;
                for &p in &sink_frag.virtual_pins {
                    let p_at = self.layout.virtual_pins[p as usize].at;
                    let keep = direction_filter(
                        self.prefs.prefers(p, p_at, q_at),
                        self.prefs.prefers(q, q_at, p_at),
                    );
                    if keep {
                        out.push(self.pair(p, q));
                    }
                }
            }
        }
        out
    }

    /// The `n` best surviving pairs for one sink fragment, labeled when
    /// `truth` is given.
    pub fn select(&self, sink: u32, n: usize, truth: Option<&GroundTruth>) -> CandidateGroup {
        assert!(n >= 1, "candidate capacity must be positive");
        let mut candidates = dedupe_pairs(&self.direction_filtered(sink));
        candidates.truncate(n);
        let true_source = truth.and_then(|t| t.source_of(sink));
        if truth.is_some() {
            for c in &mut candidates {
                c.label = if Some(c.source_fragment) == true_source {
                    Label::Positive
                } else {
                    Label::Negative
                };
            }
        }
        let contains_positive = candidates.iter().any(|c| c.label == Label::Positive);
        CandidateGroup {
            sink_fragment: sink,
            capacity: n,
            candidates,
            contains_positive,
        }
    }

    /// Groups for every sink fragment in id order.
    pub fn select_all(&self, n: usize, truth: Option<&GroundTruth>) -> Vec<CandidateGroup> {
        let sinks: Vec<u32> = self.fragments.sinks().map(|f| f.id).collect();
        sinks.par_iter().map(|&s| self.select(s, n, truth)).collect()
    }
}

/// Debug dump: one JSON object per group per line.
pub fn groups_to_jsonl(groups: &[CandidateGroup]) -> String {
    let mut s = String::new();
    for g in groups {
        s.push_str(&serde_json::to_string(g).expect("groups serialize"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vpp(source_fragment: u32, source_vpin: u32, nonpref: i64, pref: i64) -> CandidateVpp {
        CandidateVpp {
            sink_vpin: 0,
            source_vpin,
            sink_fragment: 0,
            source_fragment,
            dist_nonpref: nonpref,
            dist_pref: pref,
            label: Label::Unknown,
        }
    }

    #[test]
    fn east_segment_prefers_west() {
        let arms = arms_of(Point::new(0, 0), [(Point::new(0, 0), Point::new(10, 0))].into_iter());
        let idx = PreferenceIndex { arms: vec![arms] };
        assert!(idx.prefers(0, Point::new(0, 0), Point::new(-5, 3)));
        assert!(idx.prefers(0, Point::new(0, 0), Point::new(0, 7)));
        assert!(!idx.prefers(0, Point::new(0, 0), Point::new(4, 0)));
    }

    #[test]
    fn isolated_pin_prefers_everything() {
        let idx = PreferenceIndex { arms: vec![vec![]] };
        assert!(idx.prefers(0, Point::new(0, 0), Point::new(4, 4)));
    }

    #[test]
    fn dedupe_keeps_nearest_nonpref() {
        let out = dedupe_pairs(&[vpp(1, 10, 5000, 0), vpp(1, 11, 3000, 9000)]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source_vpin, 11);
    }

    #[test]
    fn dedupe_breaks_ties_on_pref_distance() {
        let out = dedupe_pairs(&[vpp(1, 10, 3000, 4000), vpp(1, 11, 3000, 2000)]);
        assert_eq!(out[0].source_vpin, 11);
    }

    #[test]
    fn direction_filter_is_a_disjunction() {
        assert!(direction_filter(true, false));
        assert!(direction_filter(true, true));
        assert!(direction_filter(false, true));
        assert!(!direction_filter(false, false));
    }
}
