use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, maxpool_backward, maxpool_forward,
    relu_backward_inplace, relu_inplace, softmax2, Tensor3,
};
use super::train::TrainReport;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::silhouette::{split_parts, MaskedImage, NormalizedSilhouette, PartTriple, CHANNELS};

pub const PART_NAMES: [&str; 3] = ["head", "torso", "leg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
    pub pool: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Layer specification of one Siamese convolution box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScbConfig {
    /// Tied layers applied to both inputs, then the two untied layers after the difference.
    pub convs: [ConvSpec; 4],
    pub fc_width: usize,
    pub activation: Activation,
    /// Use `|a - b|` instead of `a - b` at the difference layer.
    pub absolute_difference: bool,
}

impl Default for ScbConfig {
    fn default() -> Self {
        Self {
            convs: [
                ConvSpec {
                    kernel: 5,
                    filters: 20,
                    pool: true,
                },
                ConvSpec {
                    kernel: 5,
                    filters: 25,
                    pool: true,
                },
                ConvSpec {
                    kernel: 5,
                    filters: 25,
                    pool: false,
                },
                ConvSpec {
                    kernel: 3,
                    filters: 25,
                    pool: false,
                },
            ],
            fc_width: 500,
            activation: Activation::Relu,
            absolute_difference: false,
        }
    }
}

pub const TIED_LAYERS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeStage {
    pub layer: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ShapeStage {
    fn new(layer: &str, height: usize, width: usize, channels: usize) -> Self {
        Self {
            layer: layer.into(),
            height,
            width,
            channels,
        }
    }

    pub fn features(&self) -> usize {
        self.height * self.width * self.channels
    }
}

impl fmt::Display for ShapeStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {}x{}x{}",
            self.layer, self.height, self.width, self.channels
        )
    }
}

/// Per-layer output shapes of one box, plus the fused classifier width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeAudit {
    pub stages: Vec<ShapeStage>,
    pub pre_fc_features: usize,
    pub fc_width: usize,
    pub fusion_width: usize,
}

impl ShapeAudit {
    pub fn derive(part: [usize; 3], cfg: &ScbConfig) -> Result<Self> {
        let [c, mut h, mut w] = part;
        let mut stages = vec![ShapeStage::new("input", h, w, c)];
        for (i, spec) in cfg.convs.iter().enumerate() {
            if i == TIED_LAYERS {
                stages.push(ShapeStage::new(
                    "diff",
                    h,
                    w,
                    stages.last().expect("input").channels,
                ));
            }
            let name = ["conv1", "conv2", "conv3", "conv4"][i];
            if h < spec.kernel || w < spec.kernel {
                return Err(Error::ShapeUnderflow {
                    layer: name,
                    detail: format!(
                        "{h}x{w} input is smaller than the {k}x{k} kernel",
                        k = spec.kernel
                    ),
                });
            }
            h = h + 1 - spec.kernel;
            w = w + 1 - spec.kernel;
            stages.push(ShapeStage::new(name, h, w, spec.filters));
            if spec.pool {
                let pool = ["pool1", "pool2", "pool3", "pool4"][i];
                h /= 2;
                w /= 2;
                if h < 1 || w < 1 {
                    return Err(Error::ShapeUnderflow {
                        layer: pool,
                        detail: "pooling leaves an empty map".into(),
                    });
                }
                stages.push(ShapeStage::new(pool, h, w, spec.filters));
            }
        }
        let pre_fc_features = stages.last().expect("stages").features();
        Ok(Self {
            stages,
            pre_fc_features,
            fc_width: cfg.fc_width,
            fusion_width: PART_NAMES.len() * cfg.fc_width,
        })
    }

    pub fn stage(&self, layer: &str) -> Option<&ShapeStage> {
        self.stages.iter().find(|s| s.layer == layer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Affine<T> {
    fn zeros(n_weight: usize, n_bias: usize) -> Self {
        Self {
            weight: vec![T::zero(); n_weight],
            bias: vec![T::zero(); n_bias],
        }
    }
}

/// Weights of one Siamese convolution box.
#[derive(Debug, Clone, PartialEq)]
pub struct ScbWeights<T> {
    pub convs: [Affine<T>; 4],
    pub fc: Affine<T>,
}

/// All trainable tensors; also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub parts: [ScbWeights<T>; 3],
    pub classifier: Affine<T>,
}

/// Name, shape and decay flag of one stored tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
}

pub(crate) fn tensor_layout(
    part: [usize; 3],
    cfg: &ScbConfig,
    audit: &ShapeAudit,
) -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    for p in PART_NAMES {
        let mut in_c = part[0];
        for (i, conv) in cfg.convs.iter().enumerate() {
            specs.push(TensorSpec {
                name: format!("{p}.conv{}.weight", i + 1),
                shape: vec![conv.filters, in_c, conv.kernel, conv.kernel],
                decay: true,
            });
            specs.push(TensorSpec {
                name: format!("{p}.conv{}.bias", i + 1),
                shape: vec![conv.filters],
                decay: false,
            });
            in_c = conv.filters;
        }
        specs.push(TensorSpec {
            name: format!("{p}.fc.weight"),
            shape: vec![cfg.fc_width, audit.pre_fc_features],
            decay: true,
        });
        specs.push(TensorSpec {
            name: format!("{p}.fc.bias"),
            shape: vec![cfg.fc_width],
            decay: false,
        });
    }
    specs.push(TensorSpec {
        name: "classifier.weight".into(),
        shape: vec![2, audit.fusion_width],
        decay: true,
    });
    specs.push(TensorSpec {
        name: "classifier.bias".into(),
        shape: vec![2],
        decay: false,
    });
    specs
}

impl<T: Scalar> Weights<T> {
    fn from_layout(specs: &[TensorSpec]) -> Self {
        let mut it = specs.chunks(2).map(|pair| {
            let n = |s: &TensorSpec| s.shape.iter().product::<usize>();
            Affine::zeros(n(&pair[0]), n(&pair[1]))
        });
        let mut scb = || ScbWeights {
            convs: std::array::from_fn(|_| it.next().expect("conv layout")),
            fc: it.next().expect("fc layout"),
        };
        let parts = [scb(), scb(), scb()];
        let classifier = it.next().expect("classifier layout");
        Self { parts, classifier }
    }

    /// Tensors in layout order: weight, bias per layer, parts then classifier.
    pub fn tensors(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        for p in &self.parts {
            for a in p.convs.iter().chain(std::iter::once(&p.fc)) {
                out.push(&a.weight);
                out.push(&a.bias);
            }
        }
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for p in self.parts.iter_mut() {
            for a in p.convs.iter_mut().chain(std::iter::once(&mut p.fc)) {
                out.push(&mut a.weight);
                out.push(&mut a.bias);
            }
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut()
            .into_iter()
            .for_each(|t| t.iter_mut().for_each(|v| *v = T::zero()));
        z
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.tensors_mut()
            .into_iter()
            .for_each(|t| t.iter_mut().for_each(|v| *v *= s));
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Result of one forward pass: raw logits and `P(same identity)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub logits: [T; 2],
    pub sim: T,
}

/// Three independent boxes (head, torso, leg) fused by a two-class affine head.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel<T> {
    pub(crate) config: ScbConfig,
    pub(crate) part_shape: [usize; 3],
    pub(crate) audit: ShapeAudit,
    pub(crate) layout: Vec<TensorSpec>,
    pub weights: Weights<T>,
    pub seed: u64,
    pub training: Option<TrainReport>,
}

/// Seeded He-normal initialization with zero biases.
///
/// `part_shape` is `[channels, height, width]` of one body part.
pub fn init_model<T: Scalar>(
    part_shape: [usize; 3],
    config: ScbConfig,
    seed: u64,
) -> Result<SiameseModel<T>> {
    let audit = ShapeAudit::derive(part_shape, &config)?;
    let layout = tensor_layout(part_shape, &config, &audit);
    let mut weights = Weights::from_layout(&layout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (spec, t) in layout.iter().zip(weights.tensors_mut()) {
        if !spec.decay {
            continue;
        }
        let fan_in: usize = spec.shape[1..].iter().product();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        t.iter_mut()
            .for_each(|v| *v = T::of(normal.sample(&mut rng)));
    }
    Ok(SiameseModel {
        config,
        part_shape,
        audit,
        layout,
        weights,
        seed,
        training: None,
    })
}

struct BranchCache<T> {
    input: Tensor3<T>,
    act1: Tensor3<T>,
    arg1: Vec<usize>,
    pool1: Tensor3<T>,
    act2: Tensor3<T>,
    arg2: Vec<usize>,
    pool2: Tensor3<T>,
}

pub(crate) struct ScbCache<T> {
    a: BranchCache<T>,
    b: BranchCache<T>,
    diff: Tensor3<T>,
    act3: Tensor3<T>,
    act4: Tensor3<T>,
    latent: Vec<T>,
}

/// Borrowed view of one box with its configuration.
#[derive(Clone, Copy)]
pub struct Scb<'a, T> {
    cfg: &'a ScbConfig,
    w: &'a ScbWeights<T>,
}

fn part_tensor<T: Scalar>(part: &MaskedImage<T>) -> Tensor3<T> {
    Tensor3::from_vec(CHANNELS, part.height, part.width, part.pixels.clone())
}

impl<'a, T: Scalar> Scb<'a, T> {
    fn conv(&self, i: usize, x: &Tensor3<T>) -> Tensor3<T> {
        let spec = self.cfg.convs[i];
        let mut y = conv_forward(
            x,
            &self.w.convs[i].weight,
            &self.w.convs[i].bias,
            spec.filters,
            spec.kernel,
        );
        relu_inplace(&mut y.data);
        y
    }

    fn branch_cached(&self, input: Tensor3<T>) -> BranchCache<T> {
        let act1 = self.conv(0, &input);
        let (pool1, arg1) = maxpool_forward(&act1);
        let act2 = self.conv(1, &pool1);
        let (pool2, arg2) = maxpool_forward(&act2);
        BranchCache {
            input,
            act1,
            arg1,
            pool1,
            act2,
            arg2,
            pool2,
        }
    }

    /// Output of the tied layers for one input.
    pub fn branch(&self, part: &MaskedImage<T>) -> Tensor3<T> {
        self.branch_cached(part_tensor(part)).pool2
    }

    fn difference_of(&self, a: &Tensor3<T>, b: &Tensor3<T>) -> Tensor3<T> {
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| {
                if self.cfg.absolute_difference {
                    (x - y).abs()
                } else {
                    x - y
                }
            })
            .collect();
        Tensor3::from_vec(a.c, a.h, a.w, data)
    }

    /// The feature-difference tensor `branch(a) - branch(b)`.
    pub fn difference(&self, a: &MaskedImage<T>, b: &MaskedImage<T>) -> Tensor3<T> {
        self.difference_of(&self.branch(a), &self.branch(b))
    }

    fn cached(&self, a: &MaskedImage<T>, b: &MaskedImage<T>) -> ScbCache<T> {
        let ca = self.branch_cached(part_tensor(a));
        let cb = self.branch_cached(part_tensor(b));
        let diff = self.difference_of(&ca.pool2, &cb.pool2);
        let act3 = self.conv(2, &diff);
        let act4 = self.conv(3, &act3);
        let mut latent = dense_forward(&act4.data, &self.w.fc.weight, &self.w.fc.bias);
        relu_inplace(&mut latent);
        ScbCache {
            a: ca,
            b: cb,
            diff,
            act3,
            act4,
            latent,
        }
    }

    /// Latent vector (`fc_width` entries) for a pair of part images.
    pub fn forward(&self, a: &MaskedImage<T>, b: &MaskedImage<T>) -> Vec<T> {
        self.cached(a, b).latent
    }

    fn branch_backward(
        &self,
        cache: &BranchCache<T>,
        grad_pool2: &Tensor3<T>,
        grads: &mut ScbWeights<T>,
    ) {
        let k = |i: usize| self.cfg.convs[i].kernel;
        let mut g = maxpool_backward(grad_pool2, &cache.arg2, cache.act2.shape());
        relu_backward_inplace(&mut g.data, &cache.act2.data);
        let [g1, g2] = &mut grads.convs[..2] else {
            unreachable!()
        };
        let mut g = conv_backward(
            &cache.pool1,
            &g,
            &self.w.convs[1].weight,
            k(1),
            &mut g2.weight,
            &mut g2.bias,
            true,
        )
        .expect("input gradient requested");
        g = maxpool_backward(&g, &cache.arg1, cache.act1.shape());
        relu_backward_inplace(&mut g.data, &cache.act1.data);
        conv_backward(
            &cache.input,
            &g,
            &self.w.convs[0].weight,
            k(0),
            &mut g1.weight,
            &mut g1.bias,
            false,
        );
    }

    fn backward(&self, cache: &ScbCache<T>, grad_latent: &[T], grads: &mut ScbWeights<T>) {
        let k = |i: usize| self.cfg.convs[i].kernel;
        let mut gl = grad_latent.to_vec();
        relu_backward_inplace(&mut gl, &cache.latent);
        let g4flat = dense_backward(
            &cache.act4.data,
            &gl,
            &self.w.fc.weight,
            &mut grads.fc.weight,
            &mut grads.fc.bias,
        );
        let mut g4 = Tensor3::from_vec(cache.act4.c, cache.act4.h, cache.act4.w, g4flat);
        relu_backward_inplace(&mut g4.data, &cache.act4.data);
        let [.., c3, c4] = &mut grads.convs;
        let mut g3 = conv_backward(
            &cache.act3,
            &g4,
            &self.w.convs[3].weight,
            k(3),
            &mut c4.weight,
            &mut c4.bias,
            true,
        )
        .expect("input gradient requested");
        relu_backward_inplace(&mut g3.data, &cache.act3.data);
        let gd = conv_backward(
            &cache.diff,
            &g3,
            &self.w.convs[2].weight,
            k(2),
            &mut c3.weight,
            &mut c3.bias,
            true,
        )
        .expect("input gradient requested");

        let (ga, gb) = if self.cfg.absolute_difference {
            let sign: Vec<T> = cache
                .a
                .pool2
                .data
                .iter()
                .zip(&cache.b.pool2.data)
                .map(|(&x, &y)| match (x - y).partial_cmp(&T::zero()) {
                    Some(std::cmp::Ordering::Greater) => T::one(),
                    Some(std::cmp::Ordering::Less) => -T::one(),
                    _ => T::zero(),
                })
                .collect();
            let ga: Vec<T> = gd.data.iter().zip(&sign).map(|(&g, &s)| g * s).collect();
            let gb: Vec<T> = ga.iter().map(|&g| -g).collect();
            (ga, gb)
        } else {
            (gd.data.clone(), gd.data.iter().map(|&g| -g).collect())
        };
        let shape = |d: Vec<T>| Tensor3::from_vec(gd.c, gd.h, gd.w, d);
        self.branch_backward(&cache.a, &shape(ga), grads);
        self.branch_backward(&cache.b, &shape(gb), grads);
    }
}

/// Softmax cross-entropy of two logits against a 0/1 label.
pub fn loss<T: Scalar>(logits: [T; 2], label: u8) -> T {
    let y = usize::from(label != 0);
    let d = logits[1 - y] - logits[y];
    if d > T::zero() {
        d + (-d).exp().ln_1p()
    } else {
        d.exp().ln_1p()
    }
}

impl<T: Scalar> SiameseModel<T> {
    pub fn config(&self) -> &ScbConfig {
        &self.config
    }

    pub fn part_shape(&self) -> [usize; 3] {
        self.part_shape
    }

    /// Full silhouette `(height, width)` this model accepts.
    pub fn input_dims(&self) -> (usize, usize) {
        (self.part_shape[1] * PART_NAMES.len(), self.part_shape[2])
    }

    pub fn shape_audit(&self) -> &ShapeAudit {
        &self.audit
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn scb(&self, part: usize) -> Scb<'_, T> {
        Scb {
            cfg: &self.config,
            w: &self.weights.parts[part],
        }
    }

    pub(crate) fn check_input(&self, sil: &NormalizedSilhouette<T>) -> Result<()> {
        let expected = self.input_dims();
        if sil.dims() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", expected.0, expected.1),
                got: format!("{}x{}", sil.height(), sil.width()),
            });
        }
        Ok(())
    }

    fn split(&self, sil: &NormalizedSilhouette<T>) -> Result<PartTriple<T>> {
        self.check_input(sil)?;
        split_parts(sil)
    }

    fn forward_parts(
        &self,
        a: &PartTriple<T>,
        b: &PartTriple<T>,
    ) -> (Vec<ScbCache<T>>, Vec<T>, [T; 2]) {
        let caches: Vec<ScbCache<T>> = a
            .parts()
            .into_iter()
            .zip(b.parts())
            .enumerate()
            .map(|(i, (pa, pb))| self.scb(i).cached(pa, pb))
            .collect();
        let fused: Vec<T> = caches
            .iter()
            .flat_map(|c| c.latent.iter().copied())
            .collect();
        let out = dense_forward(
            &fused,
            &self.weights.classifier.weight,
            &self.weights.classifier.bias,
        );
        (caches, fused, [out[0], out[1]])
    }

    /// Logits and similarity for a silhouette pair.
    pub fn forward(
        &self,
        a: &NormalizedSilhouette<T>,
        b: &NormalizedSilhouette<T>,
    ) -> Result<Prediction<T>> {
        let (pa, pb) = (self.split(a)?, self.split(b)?);
        let (_, _, logits) = self.forward_parts(&pa, &pb);
        Ok(Prediction {
            logits,
            sim: softmax2(logits)[1],
        })
    }

    /// Every ReLU sign, max-pool choice and difference sign for a pair. The
    /// loss is differentiable in the weights wherever this pattern is constant.
    pub fn switch_pattern(
        &self,
        a: &NormalizedSilhouette<T>,
        b: &NormalizedSilhouette<T>,
    ) -> Result<Vec<usize>> {
        let (pa, pb) = (self.split(a)?, self.split(b)?);
        let (caches, fused, _) = self.forward_parts(&pa, &pb);
        let on = |xs: &[T]| {
            xs.iter()
                .map(|&v| usize::from(v > T::zero()))
                .collect::<Vec<_>>()
        };
        let mut pattern = Vec::new();
        for c in &caches {
            // A window whose units are all inactive has no pooling switch of its own.
            let choice = |pool: &Tensor3<T>, arg: &[usize]| -> Vec<usize> {
                pool.data
                    .iter()
                    .zip(arg)
                    .map(|(&v, &a)| if v > T::zero() { a } else { usize::MAX })
                    .collect()
            };
            for br in [&c.a, &c.b] {
                pattern.extend(on(&br.act1.data));
                pattern.extend(choice(&br.pool1, &br.arg1));
                pattern.extend(on(&br.act2.data));
                pattern.extend(choice(&br.pool2, &br.arg2));
            }
            let signed: Vec<T> =
                c.a.pool2
                    .data
                    .iter()
                    .zip(&c.b.pool2.data)
                    .map(|(&x, &y)| x - y)
                    .collect();
            pattern.extend(on(&signed));
            pattern.extend(on(&c.act3.data));
            pattern.extend(on(&c.act4.data));
        }
        pattern.extend(on(&fused));
        Ok(pattern)
    }

    /// Similarity of two average silhouettes, in `[0,1]`.
    pub fn similarity(
        &self,
        a: &NormalizedSilhouette<T>,
        b: &NormalizedSilhouette<T>,
    ) -> Result<T> {
        Ok(self.forward(a, b)?.sim)
    }

    /// Cross-entropy loss and its gradient for one pair (no weight decay).
    pub(crate) fn pair_gradient(
        &self,
        a: &PartTriple<T>,
        b: &PartTriple<T>,
        label: u8,
        grads: &mut Weights<T>,
    ) -> ([T; 2], T) {
        let (caches, fused, logits) = self.forward_parts(a, b);
        let p = softmax2(logits);
        let y = usize::from(label != 0);
        let g_logits: Vec<T> = (0..2)
            .map(|i| p[i] - if i == y { T::one() } else { T::zero() })
            .collect();
        let g_fused = dense_backward(
            &fused,
            &g_logits,
            &self.weights.classifier.weight,
            &mut grads.classifier.weight,
            &mut grads.classifier.bias,
        );
        let width = self.config.fc_width;
        for (i, cache) in caches.iter().enumerate() {
            self.scb(i).backward(
                cache,
                &g_fused[i * width..(i + 1) * width],
                &mut grads.parts[i],
            );
        }
        (logits, loss(logits, label))
    }

    /// `gamma / 2 * sum ||W||^2` over weight (not bias) tensors.
    pub fn decay_penalty(&self, gamma: f64) -> f64 {
        let sq: f64 = self
            .layout
            .iter()
            .zip(self.weights.tensors())
            .filter(|(s, _)| s.decay)
            .map(|(_, t)| t.iter().map(|v| v.f64() * v.f64()).sum::<f64>())
            .sum();
        0.5 * gamma * sq
    }

    /// Mean cross-entropy over the pairs plus the weight-decay penalty.
    pub fn objective(&self, pairs: &[LabeledPair<'_, T>], gamma: f64) -> Result<f64> {
        let mut total = 0.0;
        for p in pairs {
            let pred = self.forward(p.a, p.b)?;
            total += loss(pred.logits, p.label).f64();
        }
        Ok(total / pairs.len() as f64 + self.decay_penalty(gamma))
    }

    /// Gradient of [`objective`](Self::objective) with respect to every weight.
    pub fn objective_gradient(
        &self,
        pairs: &[LabeledPair<'_, T>],
        gamma: f64,
    ) -> Result<Weights<T>> {
        let mut grads = self.weights.zeros_like();
        for p in pairs {
            let (a, b) = (self.split(p.a)?, self.split(p.b)?);
            self.pair_gradient(&a, &b, p.label, &mut grads);
        }
        grads.scale(T::of(1.0 / pairs.len() as f64));
        let g = T::of(gamma);
        for ((spec, gt), wt) in self
            .layout
            .iter()
            .zip(grads.tensors_mut())
            .zip(self.weights.tensors())
        {
            if spec.decay {
                for (gv, &wv) in gt.iter_mut().zip(wt) {
                    *gv += g * wv;
                }
            }
        }
        Ok(grads)
    }

    pub(crate) fn split_checked(&self, sil: &NormalizedSilhouette<T>) -> Result<PartTriple<T>> {
        self.split(sil)
    }
}

/// A training pair: label 1 for the same identity, 0 otherwise.
#[derive(Debug, Clone, Copy)]
pub struct LabeledPair<'a, T> {
    pub a: &'a NormalizedSilhouette<T>,
    pub b: &'a NormalizedSilhouette<T>,
    pub label: u8,
}
