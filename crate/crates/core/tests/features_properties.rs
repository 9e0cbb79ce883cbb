mod oracles;

use oracles::toy::Toy;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smattack_core::candidates::{dedupe_pairs, CandidateGenerator, Label};
use smattack_core::features::{
    extract_design, load_feature_set, save_feature_set, vpp_distances, FeatureConfig, FeatureExtractor, Rasterizer,
};
use smattack_core::geom::{Point, Rect};
use smattack_core::layout::{build_fragments, split_layout, FullLayout, PinDirection, SplitLayout};
use smattack_core::nn::group_input;
use smattack_core::synth::{generate_synthetic, synthetic_library, SynthSpec};
use smattack_core::Error;

fn translated(full: &FullLayout, dx: i64, dy: i64) -> FullLayout {
    let mut t = full.clone();
    t.die_area = t.die_area.translate(dx, dy);
    for c in &mut t.cells {
        c.origin = c.origin.translate(dx, dy);
    }
    for p in &mut t.pins {
        p.rect = p.rect.translate(dx, dy);
    }
    for w in &mut t.wires {
        w.a = w.a.translate(dx, dy);
        w.b = w.b.translate(dx, dy);
    }
    for v in &mut t.vias {
        v.at = v.at.translate(dx, dy);
    }
    t
}

fn small_config() -> FeatureConfig {
    FeatureConfig {
        scales: vec![0.05, 0.1, 0.2],
        image_size: 15,
        ..FeatureConfig::default()
    }
}

#[test]
fn translation_leaves_features_unchanged() {
    for seed in 0..8 {
        let spec = SynthSpec { nets: 40, seed, ..SynthSpec::default() };
        let (full, lib) = generate_synthetic(&spec).unwrap();
        let moved = translated(&full, 12_345, -777 + 1000 * seed as i64);
        let (a, ta) = split_layout(&full, 3).unwrap();
        let (b, tb) = split_layout(&moved, 3).unwrap();
        assert_eq!(ta, tb);
        let fa = extract_design(&a, &lib, small_config(), 31, Some(&ta)).unwrap();
        let fb = extract_design(&b, &lib, small_config(), 31, Some(&tb)).unwrap();
        assert_eq!(fa.groups, fb.groups, "seed {seed}");
        for ((va, sa), (vb, sb)) in fa.images.iter().zip(&fb.images) {
            assert_eq!(va, vb);
            assert_eq!(sa.images, sb.images, "seed {seed} vpin {va}");
        }
    }
}

/// Every coarse pixel inside the fine window holds at least the bits of
/// the fine pixels it contains and at most those of the fine pixels it
/// overlaps.
fn check_coarsening(split: &SplitLayout, r: &Rasterizer, vpin: u32, fine: f64, size: usize) {
    let step = (fine * split.tech.dbu_per_micron as f64).round() as i64;
    let f = &r.rasterize(vpin, fine).unwrap();
    let c = r.rasterize(vpin, 2.0 * fine).unwrap();
    let at = split.virtual_pins[vpin as usize].at;
    // twice the offsets, in dbu, keep the half-pixel origins integral
    let fine_left = |o: i64| 2 * o - size as i64 * step;
    let coarse_left = |o: i64| 2 * o - 2 * size as i64 * step;
    let span = |o: i64| {
        let (lf, lc) = (fine_left(o), coarse_left(o));
        move |k: usize| {
            let a = lc + 4 * k as i64 * step;
            let b = a + 4 * step;
            let mut over = Vec::new();
            let mut inside = Vec::new();
            for j in 0..size {
                let (x0, x1) = (lf + 2 * j as i64 * step, lf + 2 * (j as i64 + 1) * step);
                if x0 < b && x1 > a {
                    over.push(j);
                }
                if x0 >= a && x1 <= b {
                    inside.push(j);
                }
            }
            let covered = a >= lf && b <= lf + 2 * size as i64 * step;
            (covered, over, inside)
        }
    };
    let (sx, sy) = (span(at.x), span(at.y));
    for row in 0..size {
        let (cy, oy, iy) = sy(row);
        for col in 0..size {
            let (cx, ox, ix) = sx(col);
            if !(cx && cy) {
                continue;
            }
            let or = |rows: &[usize], cols: &[usize]| {
                rows.iter().flat_map(|&i| cols.iter().map(move |&j| f.get(i, j))).fold(0u16, |a, b| a | b)
            };
            let bits = c.get(row, col);
            let lower = or(&iy, &ix);
            let upper = or(&oy, &ox);
            assert_eq!(bits & lower, lower, "vpin {vpin} pixel ({row}, {col})");
            assert_eq!(bits & !upper, 0, "vpin {vpin} pixel ({row}, {col})");
        }
    }
}

#[test]
fn coarser_scales_are_sandwiched_by_finer_ones() {
    for seed in 0..40 {
        let inst = oracles::instance(seed);
        let frags = build_fragments(&inst.split).unwrap();
        let size = 15;
        let r = Rasterizer::new(&inst.split, &frags, size).unwrap();
        for v in 0..inst.split.virtual_pins.len() as u32 {
            check_coarsening(&inst.split, &r, v, 0.05, size);
            check_coarsening(&inst.split, &r, v, 0.1, size);
        }
    }
}

#[test]
fn full_group_has_reference_shapes() {
    let spec = SynthSpec { nets: 200, seed: 4, ..SynthSpec::default() };
    let (full, lib) = generate_synthetic(&spec).unwrap();
    let (split, truth) = split_layout(&full, 3).unwrap();
    let set = extract_design(&split, &lib, small_config(), 31, Some(&truth)).unwrap();
    let full_group = set.groups.iter().find(|g| g.len() == 31).expect("some sink has 31 candidates");
    assert_eq!(full_group.vectors.len(), 31);
    assert!(full_group.vectors.iter().all(|v| v.len() == 27));
    let stats = smattack_core::features::NormalizationStats::identity(27);
    let input = group_input::<f32>(&set, full_group, &stats, true).unwrap();
    let per_image = 15 * 15 * 18;
    assert_eq!(input.vectors.len(), 31 * 27);
    assert_eq!(input.images.len(), 32 * per_image);

    let single = extract_design(&split, &lib, small_config(), 1, Some(&truth)).unwrap();
    for g in single.groups.iter().filter(|g| !g.is_empty()) {
        let input = group_input::<f32>(&single, g, &stats, true).unwrap();
        assert_eq!((input.n, input.vectors.len(), input.images.len()), (1, 27, 2 * per_image));
    }
}

#[test]
fn feature_cache_round_trips_bit_for_bit() {
    let spec = SynthSpec { nets: 60, seed: 2, ..SynthSpec::default() };
    let (full, lib) = generate_synthetic(&spec).unwrap();
    let (split, truth) = split_layout(&full, 3).unwrap();
    let set = extract_design(&split, &lib, small_config(), 31, Some(&truth)).unwrap();
    let bytes = save_feature_set(&set);
    let back = load_feature_set(&bytes).unwrap();
    assert_eq!(back, set);
    assert_eq!(save_feature_set(&back), bytes);

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(matches!(load_feature_set(&bad), Err(Error::Cache(_))));
    assert!(matches!(load_feature_set(&bytes[..bytes.len() - 3]), Err(Error::Cache(_))));
}

#[test]
fn group_labels_hold_at_most_one_positive() {
    for seed in 0..60 {
        let inst = oracles::instance(seed);
        let frags = build_fragments(&inst.split).unwrap();
        for g in CandidateGenerator::new(&inst.split, &frags).select_all(31, Some(&inst.truth)) {
            let positives = g.candidates.iter().filter(|c| c.label == Label::Positive).count();
            assert_eq!(positives, usize::from(g.contains_positive), "seed {seed}");
            let truly = inst.truth.source_of(g.sink_fragment);
            assert_eq!(g.contains_positive, g.candidates.iter().any(|c| Some(c.source_fragment) == truly));
        }
    }
}

#[test]
fn dedupe_ignores_input_order_and_keeps_one_pair_per_source() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..60 {
        let inst = oracles::instance(seed);
        let frags = build_fragments(&inst.split).unwrap();
        let gen = CandidateGenerator::new(&inst.split, &frags);
        for sink in frags.sinks() {
            let mut pairs = gen.direction_filtered(sink.id);
            let once = dedupe_pairs(&pairs);
            pairs.shuffle(&mut rng);
            assert_eq!(dedupe_pairs(&pairs), once);
            let sources: std::collections::BTreeSet<u32> = pairs.iter().map(|p| p.source_fragment).collect();
            assert_eq!(once.len(), sources.len());
        }
    }
}

#[test]
fn capacity_keeps_the_nearest_in_the_non_preferred_axis() {
    let mut t = Toy::new(100_000);
    // sink vpin at (50000, 50000); sources scattered along y at distinct offsets
    let sink_at = (50_000, 50_000);
    let mut first = None;
    for k in 0..40i64 {
        let d = t.port("d", PinDirection::Output, (1000 + 2000 * k, 50_000 + 700 * (k - 20)));
        let s_at = if k == 0 { sink_at } else { (1000 + 2000 * k, 90_000) };
        let s = t.port("s", PinDirection::Input, s_at);
        let n = t.net(d, &[s]);
        let from = (1000 + 2000 * k, 50_000 + 700 * (k - 20));
        t.bridge(n, from, s_at, 1, 4);
        first.get_or_insert(n);
    }
    let (split, truth) = split_layout(&t.full, 3).unwrap();
    let frags = build_fragments(&split).unwrap();
    let sink = frags
        .sinks()
        .find(|f| split.pins[f.sinks[0] as usize].rect.contains(Point::new(sink_at.0, sink_at.1)))
        .unwrap()
        .id;
    let gen = CandidateGenerator::new(&split, &frags);
    let all = gen.select(sink, 100, Some(&truth));
    assert_eq!(all.len(), 40);
    let top = gen.select(sink, 31, Some(&truth));
    assert_eq!(top.candidates[..], all.candidates[..31]);
    let worst_kept = top.candidates.last().unwrap().dist_nonpref;
    assert!(all.candidates[31..].iter().all(|c| c.dist_nonpref >= worst_kept));
    assert_eq!(gen.select(sink, 5, None).len(), 5);
}

#[test]
fn fragment_ledger_on_a_hand_built_pair() {
    let mut t = Toy::new(50_000);
    // sink pin on M3 with a 7 um M3 tail ending in the virtual pin
    let s = t.port_on(3, "s", PinDirection::Input, (10_000, 10_000));
    // driver on M1 climbing to M3 through one via per cut
    let d = t.port("d", PinDirection::Output, (30_000, 10_000));
    let n = t.net(d, &[s]);
    t.wire(n, 3, (10_000, 10_000), (17_000, 10_000));
    t.bridge(n, (30_000, 10_000), (17_000, 10_000), 1, 4);
    t.full.vias.retain(|v| !(v.at == Point::new(17_000, 10_000) && v.cut < 3));

    // a second pair whose pins sit on M3 directly under their virtual pins
    let s2 = t.port_on(3, "s2", PinDirection::Input, (10_000, 40_000));
    let d2 = t.port_on(3, "d2", PinDirection::Output, (20_000, 40_000));
    let n2 = t.net(d2, &[s2]);
    t.stack(n2, (10_000, 40_000), 3, 4);
    t.stack(n2, (20_000, 40_000), 3, 4);
    t.wire(n2, 4, (10_000, 40_000), (20_000, 40_000));

    let mut lib = synthetic_library();
    lib.port.pin_cap_f = 1e-15;
    lib.port.max_cap_f = 5e-15;
    lib.port.drive_res_ohm = 1000.0;
    lib.port.intrinsic_delay_s = 10e-12;
    let (split, truth) = split_layout(&t.full, 3).unwrap();
    let frags = build_fragments(&split).unwrap();
    let fx = FeatureExtractor::new(&split, &frags, &lib, small_config()).unwrap();
    let groups = CandidateGenerator::new(&split, &frags).select_all(31, Some(&truth));
    let pick = |sink_pin: u32| {
        let g = groups
            .iter()
            .find(|g| frags.get(g.sink_fragment).sinks == vec![sink_pin])
            .unwrap();
        let c = g.candidates.iter().find(|c| c.label == Label::Positive).unwrap();
        fx.vector(c).unwrap()
    };

    let v = pick(s);
    assert_eq!(&v[15..18], &[0.0, 0.0, 7.0]);
    assert_eq!(&v[21..23], &[0.0, 0.0]);
    assert_eq!(&v[23..25], &[1.0, 1.0]);
    assert_eq!(v[26], 7.0);

    let v = pick(s2);
    assert_eq!(&v[15..21], &[0.0; 6]);
    assert_eq!(&v[21..25], &[0.0; 4]);
    assert!((v[13] - 1.0).abs() < 1e-12, "lower bound {}", v[13]);
    assert!((v[12] - 5.0).abs() < 1e-12, "upper bound {}", v[12]);
    assert!((v[25] - 11.0).abs() < 1e-9, "delay {}", v[25]);
}

fn die(w: i64, h: i64) -> SplitLayout {
    let t = Toy::new(10);
    SplitLayout {
        design: "d".into(),
        tech: t.full.tech,
        die_area: Rect::new(Point::new(0, 0), Point::new(w, h)),
        split_layer: 3,
        cells: vec![],
        pins: vec![],
        wires: vec![],
        vias: vec![],
        virtual_pins: vec![],
    }
}

proptest! {
    #[test]
    fn distance_features_are_consistent(
        px in 0i64..100_000, py in 0i64..50_000, qx in 0i64..100_000, qy in 0i64..50_000, k in 1i64..5
    ) {
        let l = die(100_000, 50_000);
        let (p, q) = (Point::new(px, py), Point::new(qx, qy));
        let v = vpp_distances(p, q, &l).unwrap();
        let w = vpp_distances(q, p, &l).unwrap();
        for i in 0..3 {
            prop_assert_eq!(w[i], -v[i]);
            prop_assert_eq!(w[i + 6], -v[i + 6]);
            prop_assert_eq!(w[i + 3], v[i + 3]);
        }
        prop_assert_eq!(v[3], v[0].abs());
        prop_assert_eq!(v[4], v[1].abs());
        prop_assert!((v[5] - p.manhattan(q) as f64 / 1000.0).abs() < 1e-9);

        let scaled = die(100_000 * k, 50_000 * k);
        let s = vpp_distances(Point::new(px * k, py * k), Point::new(qx * k, qy * k), &scaled).unwrap();
        for i in 6..12 {
            prop_assert!((s[i] - v[i]).abs() < 1e-12);
        }
    }
}
