mod oracles;

use std::collections::BTreeMap;

use smattack_core::attack::baseline_proximity;
use smattack_core::candidates::CandidateGenerator;
use smattack_core::features::{FeatureConfig, FeatureExtractor, Rasterizer};
use smattack_core::layout::{build_fragments, compute_ccr};

const INSTANCES: u64 = 120;

#[test]
fn fragments_match_exhaustive_components() {
    for seed in 0..INSTANCES {
        let inst = oracles::instance(seed);
        let got = build_fragments(&inst.split).unwrap();
        let want = oracles::fragments(&inst.split);
        assert_eq!(got.len(), want.len(), "seed {seed}");
        for (g, w) in got.list.iter().zip(&want) {
            assert_eq!(g.kind, w.kind, "seed {seed} fragment {}", g.id);
            assert_eq!(g.wires, w.wires, "seed {seed} fragment {}", g.id);
            assert_eq!(g.vias, w.vias, "seed {seed} fragment {}", g.id);
            assert_eq!(g.virtual_pins, w.vpins, "seed {seed} fragment {}", g.id);
            assert_eq!(g.driver, w.driver, "seed {seed} fragment {}", g.id);
            assert_eq!(g.sinks, w.sinks, "seed {seed} fragment {}", g.id);
        }
    }
}

#[test]
fn truth_matches_full_geometry_tracing() {
    for seed in 0..INSTANCES {
        let inst = oracles::instance(seed);
        let want = oracles::truth(&inst.full, &inst.split);
        let got: BTreeMap<u32, (u32, u32)> = inst
            .truth
            .entries
            .iter()
            .map(|e| (e.sink, (e.source, e.sink_count)))
            .collect();
        assert_eq!(got, want, "seed {seed}");
    }
}

#[test]
fn candidate_groups_match_exhaustive_selection() {
    let mut nonempty = 0;
    for seed in 0..INSTANCES {
        let inst = oracles::instance(seed);
        let frags = build_fragments(&inst.split).unwrap();
        let gen = CandidateGenerator::new(&inst.split, &frags);
        for n in [1, 3, 31] {
            let got = gen.select_all(n, Some(&inst.truth));
            let want = oracles::candidates(&inst.split, &inst.truth, n);
            assert_eq!(got.len(), want.len(), "seed {seed}");
            for (g, (sink, w)) in got.iter().zip(&want) {
                assert_eq!(g.sink_fragment, *sink, "seed {seed}");
                assert_eq!(&g.candidates, w, "seed {seed} sink {sink} n {n}");
                nonempty += usize::from(!w.is_empty());
            }
        }
    }
    assert!(nonempty > 0);
}

#[test]
fn single_pair_preference_matches_half_line_test() {
    for seed in 0..INSTANCES {
        let inst = oracles::instance(seed);
        let vp = &inst.split.virtual_pins;
        for i in 0..vp.len().min(12) {
            for j in 0..vp.len().min(12) {
                let got = smattack_core::candidates::prefers(&vp[i], &vp[j], &inst.split);
                let want = oracles::prefers(&inst.split, vp[i].at, vp[j].at);
                assert_eq!(got, want, "seed {seed} pins {i} {j}");
            }
        }
    }
}

#[test]
fn ccr_matches_per_pin_count() {
    for seed in 0..INSTANCES {
        let inst = oracles::instance(seed);
        let frags = build_fragments(&inst.split).unwrap();
        let groups = CandidateGenerator::new(&inst.split, &frags).select_all(31, Some(&inst.truth));
        let selected: BTreeMap<u32, u32> = groups
            .iter()
            .filter_map(|g| baseline_proximity(g).map(|j| (g.sink_fragment, g.candidates[j].source_fragment)))
            .collect();
        let got = compute_ccr(&selected, &inst.truth).unwrap();
        let triples: Vec<(u32, u32, u32)> = inst.truth.entries.iter().map(|e| (e.sink, e.source, e.sink_count)).collect();
        let (correct, total) = oracles::ccr(&selected, &triples);
        assert_eq!((got.correct_pins, got.total_pins), (correct, total), "seed {seed}");
    }
}

#[test]
fn proximity_matches_exhaustive_minimum() {
    for seed in 0..INSTANCES {
        let inst = oracles::instance(seed);
        let frags = build_fragments(&inst.split).unwrap();
        for g in CandidateGenerator::new(&inst.split, &frags).select_all(31, None) {
            let got = baseline_proximity(&g);
            let mut want: Option<usize> = None;
            for (j, c) in g.candidates.iter().enumerate() {
                let better = match want {
                    None => true,
                    Some(b) => {
                        let best = &g.candidates[b];
                        let (d, bd) = (c.dist_pref + c.dist_nonpref, best.dist_pref + best.dist_nonpref);
                        d < bd || (d == bd && c.source_fragment < best.source_fragment)
                    }
                };
                if better {
                    want = Some(j);
                }
            }
            assert_eq!(got, want, "seed {seed} sink {}", g.sink_fragment);
        }
    }
}

#[test]
fn raster_matches_per_pixel_intersection() {
    for seed in 0..INSTANCES {
        let inst = oracles::instance(seed);
        let frags = build_fragments(&inst.split).unwrap();
        let want_frags = oracles::fragments(&inst.split);
        let size = [5, 9, 15][seed as usize % 3];
        let r = Rasterizer::new(&inst.split, &frags, size).unwrap();
        for v in (0..inst.split.virtual_pins.len() as u32).step_by(3) {
            for scale in [0.05, 0.1, 0.25, 1.0] {
                let got = r.rasterize(v, scale).unwrap();
                let want = oracles::raster(&inst.split, &want_frags, v, scale, size);
                for row in 0..size {
                    for col in 0..size {
                        assert_eq!(
                            got.get(row, col),
                            want[row * size + col],
                            "seed {seed} vpin {v} scale {scale} pixel ({row}, {col})"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn vector_features_match_fragment_sums() {
    for seed in 0..INSTANCES {
        let inst = oracles::instance(seed);
        let m = inst.split.split_layer as usize;
        let frags = build_fragments(&inst.split).unwrap();
        let want_frags = oracles::fragments(&inst.split);
        let config = FeatureConfig {
            scales: vec![0.1],
            image_size: 5,
            ..FeatureConfig::default()
        };
        let fx = FeatureExtractor::new(&inst.split, &frags, &inst.lib, config).unwrap();
        for g in CandidateGenerator::new(&inst.split, &frags).select_all(4, None) {
            for c in &g.candidates {
                let v = fx.vector(c).unwrap();
                let sink = &want_frags[c.sink_fragment as usize];
                let source = &want_frags[c.source_fragment as usize];
                let lower = oracles::lower_bound(&inst.split, &inst.lib, sink, source) * 1e15;
                assert!((v[13] - lower).abs() <= 1e-9 * lower.abs().max(1.0), "seed {seed}: {} vs {lower}", v[13]);
                assert_eq!(v[14], sink.sinks.len() as f64);
                let (swl, svias) = oracles::fragment_lengths(&inst.split, sink);
                let (qwl, qvias) = oracles::fragment_lengths(&inst.split, source);
                let wl: Vec<f64> = swl.iter().chain(&qwl).copied().collect();
                for (a, b) in v[15..15 + 2 * m].iter().zip(&wl) {
                    assert!((a - b).abs() <= 1e-9, "seed {seed}: {a} vs {b}");
                }
                let vias: Vec<f64> = svias.iter().chain(&qvias).map(|&n| n as f64).collect();
                assert_eq!(&v[15 + 2 * m..15 + 2 * m + 2 * (m - 1)], &vias[..], "seed {seed}");
                let total: f64 = wl.iter().sum();
                assert!((v[4 * m + 14] - total).abs() <= 1e-9, "seed {seed}");
            }
        }
    }
}
