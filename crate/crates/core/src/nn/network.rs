//! The candidate scoring network and its backward pass.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ops::{self, LRELU_SLOPE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Layer sizes of the network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub feature_count: usize,
    pub image_size: usize,
    /// Zero drops the image path and scores candidates from their feature
    /// vectors alone.
    pub image_channels: usize,
    /// Filters of each convolution group.
    pub conv_channels: Vec<usize>,
    pub convs_per_group: usize,
    /// Max-pool window and stride between convolution groups.
    pub pool: usize,
    /// Width of the vector, image-embedding and merged paths.
    pub width: usize,
    /// Output width of the first fully connected layer after pooling.
    pub image_hidden: usize,
    /// Output width of the penultimate layer.
    pub head_hidden: usize,
    pub vector_blocks: usize,
    pub merged_blocks: usize,
    /// 1 for a single score per candidate, 2 for connection and
    /// non-connection scores.
    pub outputs: usize,
}

impl NetworkConfig {
    /// Full-size network: 99x99 rasters, 16/32/64/128 filters and
    /// 128-wide fully connected paths.
    pub fn standard(feature_count: usize, image_channels: usize) -> Self {
        NetworkConfig {
            feature_count,
            image_size: 99,
            image_channels,
            conv_channels: vec![16, 32, 64, 128],
            convs_per_group: 3,
            pool: 3,
            width: 128,
            image_hidden: 256,
            head_hidden: 32,
            vector_blocks: 4,
            merged_blocks: 3,
            outputs: 1,
        }
    }

    /// A narrow variant with the same topology, sized for a single CPU core.
    pub fn desk(feature_count: usize, image_channels: usize, image_size: usize) -> Self {
        NetworkConfig {
            feature_count,
            image_size,
            image_channels,
            conv_channels: vec![8, 8, 16, 16],
            convs_per_group: 3,
            pool: 3,
            width: 32,
            image_hidden: 32,
            head_hidden: 16,
            vector_blocks: 4,
            merged_blocks: 3,
            outputs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut positive = vec![
            ("feature_count", self.feature_count),
            ("width", self.width),
            ("head_hidden", self.head_hidden),
        ];
        if self.uses_images() {
            positive.extend([
                ("image_size", self.image_size),
                ("convs_per_group", self.convs_per_group),
                ("pool", self.pool),
                ("image_hidden", self.image_hidden),
            ]);
            if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
                return Err(Error::Invalid("network needs nonzero convolution groups".into()));
            }
        }
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Invalid(format!("network {name} must be positive")));
            }
        }
        if !(1..=2).contains(&self.outputs) {
            return Err(Error::Invalid(format!("network outputs must be 1 or 2, got {}", self.outputs)));
        }
        Ok(())
    }

    pub fn uses_images(&self) -> bool {
        self.image_channels > 0
    }

    /// The same network without its image path.
    pub fn vector_only(mut self) -> Self {
        self.image_channels = 0;
        self
    }

    /// Spatial side of each convolution group.
    pub fn group_sides(&self) -> Vec<usize> {
        let mut side = self.image_size;
        let mut out = Vec::new();
        for g in 0..self.conv_channels.len() {
            if g > 0 {
                side = ops::pool_out(side, self.pool);
            }
            out.push(side);
        }
        out
    }

    pub fn image_len(&self) -> usize {
        self.image_channels * self.image_size * self.image_size
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    inp: usize,
    out: usize,
    w: usize,
}

impl Dense {
    fn b(&self) -> usize {
        self.w + self.inp * self.out
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    cin: usize,
    cout: usize,
    w: usize,
}

impl Conv {
    fn b(&self) -> usize {
        self.w + self.cin * 9 * self.cout
    }
}

#[derive(Clone, Debug)]
struct ImagePlan {
    convs: Vec<Vec<Conv>>,
    fc3: Dense,
    fc4: Dense,
    fc5_image: Dense,
}

#[derive(Clone, Debug)]
struct Plan {
    fc1: Dense,
    vector_res: Vec<[Dense; 3]>,
    image: Option<ImagePlan>,
    fc5_merged: Dense,
    merged_res: Vec<[Dense; 3]>,
    fc6: Dense,
    fc7: Dense,
    entries: Vec<ParamEntry>,
    /// Fan-in of each weight entry, `None` for biases.
    fan_in: Vec<Option<usize>>,
    total: usize,
}

struct PlanBuilder {
    entries: Vec<ParamEntry>,
    fan_in: Vec<Option<usize>>,
    total: usize,
}

impl PlanBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, fan_in: Option<usize>) -> usize {
        let offset = self.total;
        self.total += shape.iter().product::<usize>();
        self.entries.push(ParamEntry { name, shape, offset });
        self.fan_in.push(fan_in);
        offset
    }

    fn dense(&mut self, name: &str, inp: usize, out: usize) -> Dense {
        let w = self.push(format!("{name}.weight"), vec![out, inp], Some(inp));
        self.push(format!("{name}.bias"), vec![out], None);
        Dense { inp, out, w }
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize) -> Conv {
        let w = self.push(format!("{name}.weight"), vec![cout, cin, 3, 3], Some(cin * 9));
        self.push(format!("{name}.bias"), vec![cout], None);
        Conv { cin, cout, w }
    }

    fn res(&mut self, name: &str, width: usize) -> [Dense; 3] {
        [1, 2, 3].map(|k| self.dense(&format!("{name}.fc{k}"), width, width))
    }
}

impl Plan {
    fn new(c: &NetworkConfig) -> Self {
        let mut b = PlanBuilder {
            entries: Vec::new(),
            fan_in: Vec::new(),
            total: 0,
        };
        let w = c.width;
        let fc1 = b.dense("fc1", c.feature_count, w);
        let vector_res = (0..c.vector_blocks).map(|i| b.res(&format!("vector_res{}", i + 1), w)).collect();
        let image = c.uses_images().then(|| {
            let mut cin = c.image_channels;
            let convs = c
                .conv_channels
                .iter()
                .enumerate()
                .map(|(g, &cout)| {
                    (0..c.convs_per_group)
                        .map(|k| {
                            let conv = b.conv(&format!("conv{}_{}", g + 1, k + 1), cin, cout);
                            cin = cout;
                            conv
                        })
                        .collect()
                })
                .collect();
            let fc3 = b.dense("fc3", cin, c.image_hidden);
            let fc4 = b.dense("fc4", c.image_hidden, w);
            let fc5_image = b.dense("fc5_image", 2 * w, w);
            ImagePlan {
                convs,
                fc3,
                fc4,
                fc5_image,
            }
        });
        let merged_in = if image.is_some() { 2 * w } else { w };
        let fc5_merged = b.dense("fc5_merged", merged_in, w);
        let merged_res = (0..c.merged_blocks).map(|i| b.res(&format!("merged_res{}", i + 1), w)).collect();
        let fc6 = b.dense("fc6", w, c.head_hidden);
        let fc7 = b.dense("fc7", c.head_hidden, c.outputs);
        Plan {
            fc1,
            vector_res,
            image,
            fc5_merged,
            merged_res,
            fc6,
            fc7,
            entries: b.entries,
            fan_in: b.fan_in,
            total: b.total,
        }
    }
}

/// Number of parameters of a configuration.
pub fn param_count(config: &NetworkConfig) -> usize {
    Plan::new(config).total
}

/// One candidate group: `n` feature vectors and `n + 1` images, the sink
/// fragment's image first.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupInput<T> {
    pub n: usize,
    pub vectors: Vec<T>,
    pub images: Vec<T>,
}

struct ResCache<T> {
    x: Vec<T>,
    a: [Vec<T>; 3],
}

struct ImageCache<T> {
    /// Input image followed by the output of every convolution and pool.
    acts: Vec<Vec<T>>,
    pool_args: Vec<Vec<u32>>,
}

struct Cache<T> {
    vectors: Vec<T>,
    fc1: Vec<T>,
    vector_res: Vec<ResCache<T>>,
    images: Vec<ImageCache<T>>,
    gap: Vec<T>,
    fc3: Vec<T>,
    fc4: Vec<T>,
    pair: Vec<T>,
    fc5_image: Vec<T>,
    merged: Vec<T>,
    fc5_merged: Vec<T>,
    merged_res: Vec<ResCache<T>>,
    merged_out: Vec<T>,
    fc6: Vec<T>,
}

/// Result of a forward pass, holding what the backward pass needs.
pub struct Forward<T> {
    pub n: usize,
    /// `n x outputs`, row-major.
    pub output: Vec<T>,
    /// Intermediate output shapes, images as `[batch, height, width, channels]`.
    pub shapes: Vec<(String, Vec<usize>)>,
    cache: Cache<T>,
}

impl<T: Scalar> Forward<T> {
    /// One ranking score per candidate: the raw output, or connection minus
    /// non-connection score for two-output networks.
    pub fn scores(&self) -> Vec<T> {
        scores_from_output(&self.output, self.output.len() / self.n.max(1))
    }

    /// Which side of every activation kink and which pooling input each
    /// value of the pass landed on. Two passes with equal patterns run
    /// through the same linear pieces of the network.
    pub fn pattern(&self) -> Vec<u32> {
        let k = &self.cache;
        let pos = |v: &[T]| v.iter().map(|&x| (x > T::zero()) as u32).collect::<Vec<_>>();
        let mut out = pos(&k.fc1);
        for r in k.vector_res.iter().chain(&k.merged_res) {
            for a in &r.a {
                out.extend(pos(a));
            }
        }
        for img in &k.images {
            for a in &img.acts[1..] {
                out.extend(pos(a));
            }
            for a in &img.pool_args {
                out.extend_from_slice(a);
            }
        }
        for v in [&k.fc3, &k.fc4, &k.fc5_image, &k.fc5_merged, &k.fc6] {
            out.extend(pos(v));
        }
        out
    }

    /// Inputs of the last layer, `n x head_hidden`.
    pub fn last_layer_inputs(&self) -> &[T] {
        &self.cache.fc6
    }
}

pub(crate) fn scores_from_output<T: Scalar>(output: &[T], outputs: usize) -> Vec<T> {
    match outputs {
        1 => output.to_vec(),
        _ => output.chunks_exact(outputs).map(|r| r[0] - r[1]).collect(),
    }
}

#[derive(Clone, Debug)]
pub struct Network<T: Scalar> {
    config: NetworkConfig,
    plan: Plan,
    pub params: Vec<T>,
}

fn lrelu_gain() -> f64 {
    1.0 + LRELU_SLOPE * LRELU_SLOPE
}

impl<T: Scalar> Network<T> {
    /// Kaiming-uniform weights drawn from a seeded stream, zero biases.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let plan = Plan::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); plan.total];
        for (e, fan_in) in plan.entries.iter().zip(&plan.fan_in) {
            if let Some(fan_in) = fan_in {
                let bound = (6.0 / (lrelu_gain() * *fan_in as f64)).sqrt();
                for p in &mut params[e.offset..e.offset + e.len()] {
                    *p = T::of(rng.random_range(-bound..bound));
                }
            }
        }
        Ok(Network { config, plan, params })
    }

    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let plan = Plan::new(&config);
        let params = vec![T::zero(); plan.total];
        Ok(Network { config, plan, params })
    }

    pub fn from_params(config: NetworkConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let plan = Plan::new(&config);
        if params.len() != plan.total {
            return Err(Error::Model(format!(
                "configuration needs {} parameters, got {}",
                plan.total,
                params.len()
            )));
        }
        Ok(Network { config, plan, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.plan.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.plan.entries.iter().find(|e| e.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.plan.total
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            plan: self.plan.clone(),
            params: self.params.iter().map(|&p| U::of(p.f64())).collect(),
        }
    }

    fn weights(&self, d: &Dense) -> (&[T], &[T]) {
        (
            &self.params[d.w..d.b()],
            &self.params[d.b()..d.b() + d.out],
        )
    }

    fn dense(&self, d: &Dense, x: &[T], n: usize, act: bool) -> Vec<T> {
        let (w, b) = self.weights(d);
        let mut y = vec![T::zero(); n * d.out];
        ops::linear_forward(x, n, d.inp, d.out, w, b, &mut y);
        if act {
            ops::lrelu_inplace(&mut y);
        }
        y
    }

    #[allow(clippy::too_many_arguments)]
    fn dense_back(
        &self,
        d: &Dense,
        x: &[T],
        y: &[T],
        n: usize,
        act: bool,
        mut dy: Vec<T>,
        grads: &mut [T],
        need_dx: bool,
    ) -> Vec<T> {
        if act {
            ops::lrelu_backward(y, &mut dy);
        }
        let (dw, rest) = grads[d.w..].split_at_mut(d.inp * d.out);
        let mut dx = if need_dx { vec![T::zero(); n * d.inp] } else { Vec::new() };
        ops::linear_backward(
            x,
            n,
            d.inp,
            d.out,
            &self.params[d.w..d.b()],
            &dy,
            need_dx.then_some(dx.as_mut_slice()),
            dw,
            &mut rest[..d.out],
        );
        dx
    }

    fn res(&self, blk: &[Dense; 3], x: Vec<T>, n: usize) -> (Vec<T>, ResCache<T>) {
        let a1 = self.dense(&blk[0], &x, n, true);
        let a2 = self.dense(&blk[1], &a1, n, true);
        let a3 = self.dense(&blk[2], &a2, n, true);
        let y = x.iter().zip(&a3).map(|(&a, &b)| a + b).collect();
        (y, ResCache { x, a: [a1, a2, a3] })
    }

    fn res_back(&self, blk: &[Dense; 3], c: &ResCache<T>, n: usize, dy: Vec<T>, grads: &mut [T]) -> Vec<T> {
        let g = self.dense_back(&blk[2], &c.a[1], &c.a[2], n, true, dy.clone(), grads, true);
        let g = self.dense_back(&blk[1], &c.a[0], &c.a[1], n, true, g, grads, true);
        let g = self.dense_back(&blk[0], &c.x, &c.a[0], n, true, g, grads, true);
        dy.iter().zip(&g).map(|(&a, &b)| a + b).collect()
    }

    fn image_forward(&self, convs: &[Vec<Conv>], image: &[T]) -> ImageCache<T> {
        let sides = self.config.group_sides();
        let mut acts = vec![image.to_vec()];
        let mut pool_args = Vec::new();
        let mut cols = Vec::new();
        for (g, group) in convs.iter().enumerate() {
            let side = sides[g];
            if g > 0 {
                let prev = sides[g - 1];
                let c = group[0].cin;
                let mut y = vec![T::zero(); c * side * side];
                let mut arg = vec![0u32; y.len()];
                ops::maxpool_forward(acts.last().unwrap(), c, prev, prev, self.config.pool, &mut y, &mut arg);
                acts.push(y);
                pool_args.push(arg);
            }
            for conv in group {
                let mut y = vec![T::zero(); conv.cout * side * side];
                ops::conv3_forward(
                    acts.last().unwrap(),
                    conv.cin,
                    side,
                    side,
                    conv.cout,
                    &self.params[conv.w..conv.b()],
                    &self.params[conv.b()..conv.b() + conv.cout],
                    &mut y,
                    &mut cols,
                );
                ops::lrelu_inplace(&mut y);
                acts.push(y);
            }
        }
        ImageCache { acts, pool_args }
    }

    /// Gradients of the convolution stack for one image given the gradient
    /// of its last activation. `grads` holds the convolution parameters
    /// only, starting at offset `base` of the full parameter vector.
    fn image_backward(&self, convs: &[Vec<Conv>], c: &ImageCache<T>, dlast: Vec<T>, grads: &mut [T], base: usize) {
        let sides = self.config.group_sides();
        let mut cols = Vec::new();
        let mut act = c.acts.len() - 1;
        let mut g_out = dlast;
        for (g, group) in convs.iter().enumerate().rev() {
            let side = sides[g];
            for (k, conv) in group.iter().enumerate().rev() {
                ops::lrelu_backward(&c.acts[act], &mut g_out);
                let first_layer = g == 0 && k == 0;
                let mut dx = if first_layer {
                    Vec::new()
                } else {
                    vec![T::zero(); conv.cin * side * side]
                };
                let (dw, rest) = grads[conv.w - base..].split_at_mut(conv.cin * 9 * conv.cout);
                ops::conv3_backward(
                    &c.acts[act - 1],
                    conv.cin,
                    side,
                    side,
                    conv.cout,
                    &self.params[conv.w..conv.b()],
                    &g_out,
                    (!first_layer).then_some(dx.as_mut_slice()),
                    dw,
                    &mut rest[..conv.cout],
                    &mut cols,
                );
                g_out = dx;
                act -= 1;
            }
            if g > 0 {
                let prev = sides[g - 1];
                let mut dx = vec![T::zero(); group[0].cin * prev * prev];
                ops::maxpool_backward(&g_out, &c.pool_args[g - 1], &mut dx);
                g_out = dx;
                act -= 1;
            }
        }
    }

    fn check_input(&self, input: &GroupInput<T>) -> Result<()> {
        let c = &self.config;
        let shape = |layer: &str, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::Shape {
                    layer: layer.into(),
                    expected: expected.to_string(),
                    actual: actual.to_string(),
                })
            }
        };
        if input.n == 0 {
            return Err(Error::Invalid("empty candidate group".into()));
        }
        shape("input.vectors", input.n * c.feature_count, input.vectors.len())?;
        shape("input.images", (input.n + 1) * c.image_len(), input.images.len())
    }

    pub fn forward(&self, input: &GroupInput<T>) -> Result<Forward<T>> {
        self.check_input(input)?;
        let c = &self.config;
        let p = &self.plan;
        let n = input.n;
        let b = n + 1;
        let w = c.width;
        let mut shapes = Vec::new();
        let mut measured = Vec::new();
        let mut record = |name: &str, s: Vec<usize>, len: usize| {
            measured.push(len);
            shapes.push((name.to_string(), s));
        };

        let fc1 = self.dense(&p.fc1, &input.vectors, n, true);
        record("fc1", vec![n, w], fc1.len());
        let mut x = fc1.clone();
        let mut vector_res = Vec::new();
        for blk in &p.vector_res {
            let (y, cache) = self.res(blk, x, n);
            vector_res.push(cache);
            x = y;
        }
        record("fc2", vec![n, w], x.len());
        let vec_out = x;

        let mut images = Vec::new();
        let (mut gap, mut fc3, mut fc4, mut pair, mut fc5_image) = Default::default();
        let merged = match &p.image {
            None => vec_out,
            Some(ip) => {
                images = input
                    .images
                    .par_chunks_exact(c.image_len())
                    .map(|img| self.image_forward(&ip.convs, img))
                    .collect();
                let sides = c.group_sides();
                for (g, &cout) in c.conv_channels.iter().enumerate() {
                    let last = c.convs_per_group * (g + 1) + g;
                    let len = images.iter().map(|img| img.acts[last].len()).sum();
                    record(&format!("conv{}", g + 1), vec![b, sides[g], sides[g], cout], len);
                }
                let last_c = *c.conv_channels.last().unwrap();
                let last_side = *sides.last().unwrap();
                gap = vec![T::zero(); b * last_c];
                for (img, out) in images.iter().zip(gap.chunks_exact_mut(last_c)) {
                    ops::gap_forward(img.acts.last().unwrap(), last_c, last_side * last_side, out);
                }
                fc3 = self.dense(&ip.fc3, &gap, b, true);
                record("fc3", vec![b, c.image_hidden], fc3.len());
                fc4 = self.dense(&ip.fc4, &fc3, b, true);
                record("fc4", vec![b, w], fc4.len());
                pair = Vec::with_capacity(n * 2 * w);
                for j in 0..n {
                    pair.extend_from_slice(&fc4[..w]);
                    pair.extend_from_slice(&fc4[(j + 1) * w..(j + 2) * w]);
                }
                fc5_image = self.dense(&ip.fc5_image, &pair, n, true);
                record("fc5_image", vec![n, w], fc5_image.len());
                let mut merged = Vec::with_capacity(n * 2 * w);
                for j in 0..n {
                    merged.extend_from_slice(&vec_out[j * w..(j + 1) * w]);
                    merged.extend_from_slice(&fc5_image[j * w..(j + 1) * w]);
                }
                merged
            }
        };
        let fc5_merged = self.dense(&p.fc5_merged, &merged, n, true);
        record("fc5_merged", vec![n, w], fc5_merged.len());
        let mut x = fc5_merged.clone();
        let mut merged_res = Vec::new();
        for blk in &p.merged_res {
            let (y, cache) = self.res(blk, x, n);
            merged_res.push(cache);
            x = y;
        }
        record("fc2_merged", vec![n, w], x.len());
        let fc6 = self.dense(&p.fc6, &x, n, true);
        record("fc6", vec![n, c.head_hidden], fc6.len());
        let output = self.dense(&p.fc7, &fc6, n, false);
        record("fc7", vec![n, c.outputs], output.len());
        for ((name, s), &len) in shapes.iter().zip(&measured) {
            if s.iter().product::<usize>() != len {
                return Err(Error::Shape {
                    layer: name.clone(),
                    expected: format!("{s:?}"),
                    actual: format!("{len} values"),
                });
            }
        }
        let merged_out = x;

        Ok(Forward {
            n,
            output,
            shapes,
            cache: Cache {
                vectors: input.vectors.clone(),
                fc1,
                vector_res,
                images,
                gap,
                fc3,
                fc4,
                pair,
                fc5_image,
                merged,
                fc5_merged,
                merged_res,
                merged_out,
                fc6,
            },
        })
    }

    fn vector_backward(&self, k: &Cache<T>, n: usize, mut g: Vec<T>, grads: &mut [T]) {
        let p = &self.plan;
        for (blk, cache) in p.vector_res.iter().zip(&k.vector_res).rev() {
            g = self.res_back(blk, cache, n, g, grads);
        }
        self.dense_back(&p.fc1, &k.vectors, &k.fc1, n, true, g, grads, false);
    }

    /// Parameter gradients given the gradient of the output (`n x outputs`).
    pub fn backward(&self, fwd: &Forward<T>, doutput: &[T]) -> Result<Vec<T>> {
        let c = &self.config;
        let p = &self.plan;
        let n = fwd.n;
        let b = n + 1;
        let w = c.width;
        if doutput.len() != n * c.outputs {
            return Err(Error::Shape {
                layer: "fc7".into(),
                expected: (n * c.outputs).to_string(),
                actual: doutput.len().to_string(),
            });
        }
        let k = &fwd.cache;
        let mut grads = vec![T::zero(); p.total];

        let g = self.dense_back(&p.fc7, &k.fc6, &fwd.output, n, false, doutput.to_vec(), &mut grads, true);
        let mut g = self.dense_back(&p.fc6, &k.merged_out, &k.fc6, n, true, g, &mut grads, true);
        for (blk, cache) in p.merged_res.iter().zip(&k.merged_res).rev() {
            g = self.res_back(blk, cache, n, g, &mut grads);
        }
        let g = self.dense_back(&p.fc5_merged, &k.merged, &k.fc5_merged, n, true, g, &mut grads, true);

        let Some(ip) = &p.image else {
            self.vector_backward(k, n, g, &mut grads);
            return Ok(grads);
        };
        let mut d_vec = vec![T::zero(); n * w];
        let mut d_img = vec![T::zero(); n * w];
        for j in 0..n {
            d_vec[j * w..(j + 1) * w].copy_from_slice(&g[j * 2 * w..j * 2 * w + w]);
            d_img[j * w..(j + 1) * w].copy_from_slice(&g[j * 2 * w + w..(j + 1) * 2 * w]);
        }
        self.vector_backward(k, n, d_vec, &mut grads);

        let g = self.dense_back(&ip.fc5_image, &k.pair, &k.fc5_image, n, true, d_img, &mut grads, true);
        let mut d_fc4 = vec![T::zero(); b * w];
        for j in 0..n {
            let row = &g[j * 2 * w..(j + 1) * 2 * w];
            for i in 0..w {
                d_fc4[i] = d_fc4[i] + row[i];
            }
            d_fc4[(j + 1) * w..(j + 2) * w].copy_from_slice(&row[w..]);
        }
        let g = self.dense_back(&ip.fc4, &k.fc3, &k.fc4, b, true, d_fc4, &mut grads, true);
        let d_gap = self.dense_back(&ip.fc3, &k.gap, &k.fc3, b, true, g, &mut grads, true);

        let last_c = *c.conv_channels.last().unwrap();
        let last_side = *c.group_sides().last().unwrap();
        let hw = last_side * last_side;
        let conv_start = ip.convs[0][0].w;
        let conv_end = {
            let last = ip.convs.last().unwrap().last().unwrap();
            last.b() + last.cout
        };
        let partials: Vec<Vec<T>> = k
            .images
            .par_iter()
            .zip(d_gap.par_chunks_exact(last_c))
            .map(|(img, dg)| {
                let mut local = vec![T::zero(); conv_end - conv_start];
                let mut dlast = vec![T::zero(); last_c * hw];
                ops::gap_backward(dg, last_c, hw, &mut dlast);
                self.image_backward(&ip.convs, img, dlast, &mut local, conv_start);
                local
            })
            .collect();
        for part in partials {
            for (g, d) in grads[conv_start..conv_end].iter_mut().zip(part) {
                *g = *g + d;
            }
        }
        Ok(grads)
    }
}
