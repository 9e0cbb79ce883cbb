use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smattack_core::nn::gradcheck::check_network;
use smattack_core::nn::{softmax, GroupInput, LossKind, Network, NetworkConfig};

fn tiny(outputs: usize) -> NetworkConfig {
    NetworkConfig {
        feature_count: 6,
        image_size: 9,
        image_channels: 2,
        conv_channels: vec![8, 8, 8, 8],
        convs_per_group: 3,
        pool: 3,
        width: 8,
        image_hidden: 8,
        head_hidden: 8,
        vector_blocks: 4,
        merged_blocks: 3,
        outputs,
    }
}

/// A generic, unsaturated point: shrunken initial weights and small nonzero
/// biases keep scores of order one and pre-activations away from zero.
fn check_point(c: &NetworkConfig, rng: &mut ChaCha8Rng) -> Network<f64> {
    let mut net = Network::<f64>::new(c.clone(), 5).unwrap();
    for e in net.entries().to_vec() {
        for p in &mut net.params[e.offset..e.offset + e.len()] {
            *p = if e.name.ends_with(".bias") {
                rng.random_range(-0.1..0.1)
            } else {
                *p * 0.7
            };
        }
    }
    net
}

fn random_input(c: &NetworkConfig, n: usize, rng: &mut ChaCha8Rng) -> GroupInput<f64> {
    GroupInput {
        n,
        vectors: (0..n * c.feature_count).map(|_| rng.random_range(-2.0..2.0)).collect(),
        images: (0..(n + 1) * c.image_len()).map(|_| rng.random_range(0.0..1.0)).collect(),
    }
}

#[test]
fn whole_network_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (loss, outputs) in [(LossKind::SoftmaxRegression, 1), (LossKind::TwoClass, 2)] {
        let c = tiny(outputs);
        let net = check_point(&c, &mut rng);
        let input = random_input(&c, 4, &mut rng);
        let r = check_network(&net, &input, loss, 2, 1e-4, 1e-4, 1e-7).unwrap();
        assert!(r.fraction_within() >= 0.99, "{loss:?}: {} / {}", r.within, r.checked);
        assert!(r.outliers_all_at_kinks(), "{:?}", r.outliers.iter().filter(|o| !o.crosses_kink).collect::<Vec<_>>());
    }
}

#[test]
fn last_layer_gradient_has_the_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = tiny(1);
    let net = Network::<f64>::new(c.clone(), 9).unwrap();
    let n = 5;
    let input = random_input(&c, n, &mut rng);
    let t = 3;
    let fwd = net.forward(&input).unwrap();
    let (_, d) = LossKind::SoftmaxRegression.evaluate(&fwd.output, t);
    let g = net.backward(&fwd, &d).unwrap();
    let e = net.entry("fc7.weight").unwrap();
    let x = fwd.last_layer_inputs();
    let p = softmax(&fwd.output);
    let k = c.head_hidden;
    for i in 0..k {
        let want: f64 = (0..n).map(|j| p[j] * x[j * k + i]).sum::<f64>() - x[t * k + i];
        assert!((g[e.offset + i] - want).abs() < 1e-12, "{i}: {} vs {want}", g[e.offset + i]);
    }
}

#[test]
fn duplicated_candidates_score_identically() {
    let c = tiny(1);
    let net = Network::<f32>::new(c.clone(), 1).unwrap();
    let f = c.feature_count;
    let il = c.image_len();
    let vec1: Vec<f32> = (0..f).map(|i| i as f32 * 0.3 - 1.0).collect();
    let img: Vec<f32> = (0..il).map(|i| (i % 3 == 0) as u8 as f32).collect();
    let mut images = img.clone();
    images.extend(&img);
    images.extend(&img);
    let input = GroupInput {
        n: 2,
        vectors: [vec1.clone(), vec1].concat(),
        images,
    };
    let s = net.forward(&input).unwrap().scores();
    assert_eq!(s[0], s[1]);
}
