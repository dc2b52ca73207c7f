use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::silhouette::{MaskedImage, NormalizedSilhouette};

fn small_config() -> ScbConfig {
    ScbConfig {
        convs: [
            ConvSpec {
                kernel: 5,
                filters: 4,
                pool: true,
            },
            ConvSpec {
                kernel: 5,
                filters: 5,
                pool: true,
            },
            ConvSpec {
                kernel: 5,
                filters: 5,
                pool: false,
            },
            ConvSpec {
                kernel: 3,
                filters: 5,
                pool: false,
            },
        ],
        fc_width: 16,
        ..ScbConfig::default()
    }
}

fn random_sil(h: usize, w: usize, rng: &mut ChaCha8Rng) -> NormalizedSilhouette<f64> {
    let mut img = MaskedImage::zeros(h, w);
    for m in img.mask.iter_mut() {
        *m = rng.random::<f64>() < 0.8;
    }
    for v in img.pixels.iter_mut() {
        *v = rng.random();
    }
    NormalizedSilhouette::new(img, "r", 0).unwrap()
}

fn random_part(h: usize, w: usize, rng: &mut ChaCha8Rng) -> MaskedImage<f64> {
    random_sil(h, w, rng).image
}

#[test]
fn default_shape_pipeline() {
    let audit = ShapeAudit::derive([3, 54, 64], &ScbConfig::default()).unwrap();
    let got: Vec<String> = audit.stages.iter().map(|s| s.to_string()).collect();
    assert_eq!(
        got,
        [
            "input: 54x64x3",
            "conv1: 50x60x20",
            "pool1: 25x30x20",
            "conv2: 21x26x25",
            "pool2: 10x13x25",
            "diff: 10x13x25",
            "conv3: 6x9x25",
            "conv4: 4x7x25",
        ]
    );
    assert_eq!(audit.pre_fc_features, 700);
    assert_eq!(audit.fusion_width, 1500);
}

#[test]
fn tiny_input_underflows() {
    let err = init_model::<f64>([3, 9, 9], ScbConfig::default(), 0).unwrap_err();
    assert!(
        matches!(err, Error::ShapeUnderflow { layer: "conv2", .. }),
        "{err}"
    );
}

#[test]
fn init_is_deterministic_and_seed_sensitive() {
    let a = init_model::<f32>([3, 40, 42], small_config(), 11).unwrap();
    let b = init_model::<f32>([3, 40, 42], small_config(), 11).unwrap();
    let c = init_model::<f32>([3, 40, 42], small_config(), 12).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_ne!(a.weights, c.weights);
    let full = init_model::<f32>([3, 54, 64], ScbConfig::default(), 0).unwrap();
    let fc = full
        .layout()
        .iter()
        .find(|s| s.name == "head.fc.weight")
        .unwrap();
    assert_eq!(fc.shape, vec![500, 700]);
    let cls = full
        .layout()
        .iter()
        .find(|s| s.name == "classifier.weight")
        .unwrap();
    assert_eq!(cls.shape, vec![2, 1500]);
}

#[test]
fn equal_inputs_give_zero_difference_and_constant_latent() {
    let model = init_model::<f64>([3, 40, 42], small_config(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scb = model.scb(1);
    let x = random_part(40, 42, &mut rng);
    let y = random_part(40, 42, &mut rng);
    assert!(scb.difference(&x, &x).data.iter().all(|&v| v == 0.0));
    assert_eq!(scb.forward(&x, &x), scb.forward(&y, &y));

    let sx = random_sil(120, 42, &mut rng);
    let sy = random_sil(120, 42, &mut rng);
    let c = model.similarity(&sx, &sx).unwrap();
    assert_eq!(c, model.similarity(&sy, &sy).unwrap());
}

#[test]
fn difference_is_antisymmetric() {
    let model = init_model::<f64>([3, 40, 42], small_config(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, b) = (random_part(40, 42, &mut rng), random_part(40, 42, &mut rng));
    let ab = model.scb(0).difference(&a, &b);
    let ba = model.scb(0).difference(&b, &a);
    for (x, y) in ab.data.iter().zip(&ba.data) {
        assert_eq!(*x, -*y);
    }
    assert!(ab.data.iter().any(|&v| v != 0.0));
}

/// Straight-line forward pass written without the layer kernels.
fn reference_latent(
    cfg: &ScbConfig,
    w: &ScbWeights<f64>,
    a: &MaskedImage<f64>,
    b: &MaskedImage<f64>,
) -> Vec<f64> {
    type Map = Vec<Vec<Vec<f64>>>;
    fn from_image(img: &MaskedImage<f64>) -> Map {
        (0..3)
            .map(|c| {
                (0..img.height)
                    .map(|y| (0..img.width).map(|x| img.at(c, y, x)).collect())
                    .collect()
            })
            .collect()
    }
    fn conv_relu(x: &Map, wt: &[f64], bias: &[f64], filters: usize, k: usize) -> Map {
        let (cin, h, w) = (x.len(), x[0].len(), x[0][0].len());
        let mut out = vec![vec![vec![0.0; w - k + 1]; h - k + 1]; filters];
        for (o, plane) in out.iter_mut().enumerate() {
            for (yy, row) in plane.iter_mut().enumerate() {
                for (xx, cell) in row.iter_mut().enumerate() {
                    let mut s = bias[o];
                    for (c, xc) in x.iter().enumerate() {
                        for ky in 0..k {
                            for kx in 0..k {
                                s += wt[o * cin * k * k + c * k * k + ky * k + kx]
                                    * xc[yy + ky][xx + kx];
                            }
                        }
                    }
                    *cell = if s > 0.0 { s } else { 0.0 };
                }
            }
        }
        out
    }
    fn pool(x: &Map) -> Map {
        x.iter()
            .map(|p| {
                (0..p.len() / 2)
                    .map(|y| {
                        (0..p[0].len() / 2)
                            .map(|x| {
                                let v = [
                                    p[2 * y][2 * x],
                                    p[2 * y][2 * x + 1],
                                    p[2 * y + 1][2 * x],
                                    p[2 * y + 1][2 * x + 1],
                                ];
                                v.into_iter().fold(f64::NEG_INFINITY, f64::max)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
    let branch = |img: &MaskedImage<f64>| {
        let c = cfg.convs;
        let x = conv_relu(
            &from_image(img),
            &w.convs[0].weight,
            &w.convs[0].bias,
            c[0].filters,
            c[0].kernel,
        );
        let x = pool(&x);
        let x = conv_relu(
            &x,
            &w.convs[1].weight,
            &w.convs[1].bias,
            c[1].filters,
            c[1].kernel,
        );
        pool(&x)
    };
    let (fa, fb) = (branch(a), branch(b));
    let d: Map = fa
        .iter()
        .zip(&fb)
        .map(|(pa, pb)| {
            pa.iter()
                .zip(pb)
                .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x - y).collect())
                .collect()
        })
        .collect();
    let c = cfg.convs;
    let x = conv_relu(
        &d,
        &w.convs[2].weight,
        &w.convs[2].bias,
        c[2].filters,
        c[2].kernel,
    );
    let x = conv_relu(
        &x,
        &w.convs[3].weight,
        &w.convs[3].bias,
        c[3].filters,
        c[3].kernel,
    );
    let flat: Vec<f64> = x.into_iter().flatten().flatten().collect();
    (0..cfg.fc_width)
        .map(|o| {
            let s = w.fc.bias[o]
                + (0..flat.len())
                    .map(|i| w.fc.weight[o * flat.len() + i] * flat[i])
                    .sum::<f64>();
            s.max(0.0)
        })
        .collect()
}

#[test]
fn latent_matches_reference_forward() {
    let model = init_model::<f64>([3, 54, 64], ScbConfig::default(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (random_part(54, 64, &mut rng), random_part(54, 64, &mut rng));
    let fast = model.scb(2).forward(&a, &b);
    let slow = reference_latent(model.config(), &model.weights.parts[2], &a, &b);
    assert_eq!(fast.len(), 500);
    assert!(fast.iter().any(|&v| v > 0.0));
    for (x, y) in fast.iter().zip(&slow) {
        assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
    }
}

#[test]
fn loss_values() {
    assert!((loss([0.0f64, 0.0], 1) - std::f64::consts::LN_2).abs() < 1e-15);
    let l1 = loss([-10.0f64, 10.0], 1);
    assert!((l1 - (-20f64).exp().ln_1p()).abs() < 1e-20);
    assert!((l1 - 2.06e-9).abs() < 1e-11);
    let l0 = loss([-10.0f64, 10.0], 0);
    assert!((l0 - 20.0).abs() < 1e-8);
    assert!(loss([1000.0f64, -1000.0], 0) >= 0.0);
}

#[test]
fn similarity_is_a_probability() {
    let model = init_model::<f64>([3, 40, 42], small_config(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let (a, b) = (random_sil(120, 42, &mut rng), random_sil(120, 42, &mut rng));
        let p = model.forward(&a, &b).unwrap();
        let probs = layers::softmax2(p.logits);
        assert!((probs[0] + probs[1] - 1.0).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&p.sim));
    }
}

#[test]
fn wrong_input_size_is_rejected() {
    let model = init_model::<f64>([3, 40, 42], small_config(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (a, b) = (random_sil(120, 42, &mut rng), random_sil(123, 42, &mut rng));
    assert!(matches!(
        model.forward(&a, &b),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn gradients_match_finite_differences() {
    let mut model = init_model::<f64>([3, 40, 42], small_config(), 4).unwrap();
    // Nonzero biases keep units away from the ReLU kink at zero.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for t in model.weights.tensors_mut() {
        for v in t.iter_mut() {
            *v += 0.01 * (rng.random::<f64>() - 0.5);
        }
    }
    let sils: Vec<_> = (0..4).map(|_| random_sil(120, 42, &mut rng)).collect();
    let pairs = vec![
        LabeledPair {
            a: &sils[0],
            b: &sils[1],
            label: 1,
        },
        LabeledPair {
            a: &sils[2],
            b: &sils[3],
            label: 0,
        },
    ];
    let gamma = 0.01;
    let grads = model.objective_gradient(&pairs, gamma).unwrap();
    let names: Vec<String> = model.layout().iter().map(|s| s.name.clone()).collect();
    // Small enough that no ReLU or pooling switch falls inside the stencil.
    let h = 1e-6;
    let mut checked = 0;
    for (ti, name) in names.iter().enumerate() {
        let n = grads.tensors()[ti].len();
        for _ in 0..2 {
            let i = rng.random_range(0..n);
            let analytic = grads.tensors()[ti][i];
            let orig = model.weights.tensors()[ti][i];
            model.weights.tensors_mut()[ti][i] = orig + h;
            let up = model.objective(&pairs, gamma).unwrap();
            model.weights.tensors_mut()[ti][i] = orig - h;
            let down = model.objective(&pairs, gamma).unwrap();
            model.weights.tensors_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs());
            assert!(
                (analytic - numeric).abs() <= 1e-3 * scale || scale < 1e-8,
                "{name}[{i}]: analytic {analytic} numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 2 * names.len());
}

#[test]
fn switch_pattern_tracks_kinks() {
    let mut model = init_model::<f64>([3, 40, 42], small_config(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (a, b) = (random_sil(120, 42, &mut rng), random_sil(120, 42, &mut rng));
    let base = model.switch_pattern(&a, &b).unwrap();
    assert_eq!(base, model.switch_pattern(&a, &b).unwrap());
    model.weights.parts[0].convs[0].bias[0] += 1e-12;
    assert_eq!(base, model.switch_pattern(&a, &b).unwrap());
    model.weights.parts[0].convs[0].bias[0] -= 100.0;
    assert_ne!(base, model.switch_pattern(&a, &b).unwrap());
}

#[test]
fn absolute_difference_gradients() {
    let cfg = ScbConfig {
        absolute_difference: true,
        ..small_config()
    };
    let model = init_model::<f64>([3, 40, 42], cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (a, b) = (random_sil(120, 42, &mut rng), random_sil(120, 42, &mut rng));
    let pairs = [LabeledPair {
        a: &a,
        b: &b,
        label: 0,
    }];
    let grads = model.objective_gradient(&pairs, 0.0).unwrap();
    // conv1 of the head box: index 0 in the layout.
    let mut m = model.clone();
    let h = 1e-5;
    for i in [0, 7, 33] {
        let orig = m.weights.tensors()[0][i];
        m.weights.tensors_mut()[0][i] = orig + h;
        let up = m.objective(&pairs, 0.0).unwrap();
        m.weights.tensors_mut()[0][i] = orig - h;
        let down = m.objective(&pairs, 0.0).unwrap();
        m.weights.tensors_mut()[0][i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.tensors()[0][i];
        assert!((analytic - numeric).abs() <= 1e-3 * analytic.abs().max(numeric.abs()).max(1e-6));
    }
    assert!(model
        .scb(0)
        .difference(&a.image, &b.image)
        .data
        .iter()
        .all(|&v| v >= 0.0));
}

fn separable_pairs(
    n: usize,
    seed: u64,
) -> Vec<(NormalizedSilhouette<f32>, NormalizedSilhouette<f32>, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let base = random_sil(120, 42, &mut rng).cast::<f32>();
            if i % 2 == 0 {
                (base.clone(), base, 1)
            } else {
                let mut inv = base.image.clone();
                for (v, m) in inv.pixels.iter_mut().zip(base.image.mask.iter().cycle()) {
                    if *m {
                        *v = 1.0 - *v;
                    }
                }
                (
                    base.clone(),
                    NormalizedSilhouette::new(inv, "inv", 0).unwrap(),
                    0,
                )
            }
        })
        .collect()
}

#[test]
fn trainer_separates_identical_from_inverted_pairs() {
    let data = separable_pairs(200, 31);
    let pairs: Vec<LabeledPair<'_, f32>> = data
        .iter()
        .map(|(a, b, l)| LabeledPair { a, b, label: *l })
        .collect();
    let model = init_model::<f32>([3, 40, 42], small_config(), 1).unwrap();
    let cfg = TrainConfig {
        max_epochs: 50,
        seed: 2,
        ..TrainConfig::default()
    };
    let (model, report) = train(model, &pairs, &cfg).unwrap();
    let last = report.final_stats().unwrap();
    assert!(last.error_rate == 0.0, "{report:?}");
    assert!(report.epochs.len() <= 50);
    assert!(model.similarity(&data[0].0, &data[0].1).unwrap() > 0.5);
}

#[test]
fn trained_similarity_is_confident() {
    let data = separable_pairs(200, 31);
    let pairs: Vec<LabeledPair<'_, f32>> = data
        .iter()
        .map(|(a, b, l)| LabeledPair { a, b, label: *l })
        .collect();
    let model = init_model::<f32>([3, 40, 42], small_config(), 1).unwrap();
    // Only the loss threshold or the epoch cap may stop this run.
    let cfg = TrainConfig {
        max_epochs: 50,
        error_threshold: 0.0,
        seed: 2,
        ..TrainConfig::default()
    };
    let (model, _) = train(model, &pairs, &cfg).unwrap();
    for (a, b, label) in &data[..20] {
        let sim = model.similarity(a, b).unwrap();
        if *label == 1 {
            assert!(sim > 0.9, "identical pair sim {sim}");
        } else {
            assert!(sim < 0.1, "inverted pair sim {sim}");
        }
    }
}

#[test]
fn trainer_rejects_single_label_streams() {
    let data = separable_pairs(4, 1);
    let pairs: Vec<LabeledPair<'_, f32>> = data
        .iter()
        .map(|(a, b, _)| LabeledPair { a, b, label: 1 })
        .collect();
    let model = init_model::<f32>([3, 40, 42], small_config(), 1).unwrap();
    assert!(matches!(
        train(model, &pairs, &TrainConfig::default()),
        Err(Error::DegeneratePairs(1))
    ));
}

#[test]
fn training_is_deterministic() {
    let data = separable_pairs(12, 5);
    let pairs: Vec<LabeledPair<'_, f32>> = data
        .iter()
        .map(|(a, b, l)| LabeledPair { a, b, label: *l })
        .collect();
    let cfg = TrainConfig {
        max_epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let run = || {
        let model = init_model::<f32>([3, 40, 42], small_config(), 3).unwrap();
        train(model, &pairs, &cfg).unwrap()
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(m1.weights, m2.weights);
    assert_eq!(r1, r2);
}

#[test]
fn checkpoint_round_trip() {
    let data = separable_pairs(4, 5);
    let pairs: Vec<LabeledPair<'_, f32>> = data
        .iter()
        .map(|(a, b, l)| LabeledPair { a, b, label: *l })
        .collect();
    let cfg = TrainConfig {
        max_epochs: 1,
        ..TrainConfig::default()
    };
    let model = init_model::<f32>([3, 40, 42], small_config(), 3).unwrap();
    let (model, _) = train(model, &pairs, &cfg).unwrap();
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf).unwrap();
    let back = SiameseModel::<f32>::read_checkpoint(&buf[..]).unwrap();
    assert_eq!(back, model);
    let mut csv = Vec::new();
    back.training.as_ref().unwrap().write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .starts_with("epoch,loss,error_rate\n1,"));
    buf[0] = 0;
    assert!(SiameseModel::<f32>::read_checkpoint(&buf[..]).is_err());
}
