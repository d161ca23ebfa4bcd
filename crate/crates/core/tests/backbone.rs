use mcic::backbone::{
    loss_and_grad, loss_only, softmax, ArchConfig, DropoutMode, LossEvaluator, ParamSet, Tensor, TinyZoneNet,
};
use mcic::data::LabelMask;
use mcic::losses::{LossWeights, SupervisedObjective};
use mcic::rng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> ArchConfig {
    ArchConfig {
        input_size: 16,
        encoder_channels: [4, 6, 8],
        bottleneck_channels: 8,
        ..ArchConfig::default()
    }
}

fn input(n: usize, size: usize, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let d = (0..n * size * size).map(|_| r.random_range(-1.5..1.5)).collect();
    Tensor::from_vec(n, 1, size, size, d).unwrap()
}

fn labels(n: usize, size: usize) -> Vec<LabelMask> {
    (0..n)
        .map(|i| {
            let l = (0..size * size)
                .map(|p| {
                    let (r, c) = (p / size, p % size);
                    let d = (r as i64 - size as i64 / 2).abs() + (c as i64 - size as i64 / 2).abs();
                    if d < 3 {
                        2
                    } else if d < 5 + i as i64 {
                        1
                    } else {
                        0
                    }
                })
                .collect();
            LabelMask::new(size, size, l).unwrap()
        })
        .collect()
}

struct Const;

impl LossEvaluator for Const {
    fn evaluate(&self, logits: &Tensor) -> mcic::Result<(f64, Tensor)> {
        let (n, c, h, w) = logits.shape();
        Ok((1.5, Tensor::zeros(n, c, h, w)))
    }
}

fn no_rng() -> rng::StreamRng {
    rng::stream(0, &[99])
}

#[test]
fn init_is_deterministic_and_lora_b_is_zero() {
    let cfg = ArchConfig {
        use_lora_bottleneck: true,
        ..small_cfg()
    };
    let net = TinyZoneNet::new(cfg).unwrap();
    let a = net.init_params(7);
    assert_eq!(a, net.init_params(7));
    assert_ne!(a, net.init_params(8));
    for name in ["attn.q.lora_b", "attn.v.lora_b"] {
        assert!(a.find(name).unwrap().data.iter().all(|&v| v == 0.0));
    }
    assert!(a.find("attn.q.lora_a").unwrap().data.iter().any(|&v| v != 0.0));
}

#[test]
fn lora_freezes_most_parameters() {
    let base = TinyZoneNet::new(ArchConfig::default()).unwrap().init_params(0);
    let lora = TinyZoneNet::new(ArchConfig {
        use_lora_bottleneck: true,
        ..ArchConfig::default()
    })
    .unwrap()
    .init_params(0);
    assert_eq!(base.trainable_count(), base.total_count());
    assert!(lora.trainable_count() < base.trainable_count());
    for name in [
        "bottleneck.weight",
        "attn.q.weight",
        "attn.k.weight",
        "attn.v.weight",
        "attn.o.weight",
    ] {
        assert!(!lora.find(name).unwrap().trainable, "{name}");
    }
}

#[test]
fn lora_with_zero_b_matches_plain_network() {
    let cfg = small_cfg();
    let lcfg = ArchConfig {
        use_lora_bottleneck: true,
        ..cfg.clone()
    };
    let net = TinyZoneNet::new(cfg).unwrap();
    let lnet = TinyZoneNet::new(lcfg).unwrap();
    let lp = lnet.init_params(3);
    let stripped = ParamSet::new(
        lp.params()
            .iter()
            .filter(|p| !p.name.contains("lora"))
            .cloned()
            .map(|mut p| {
                p.trainable = true;
                p
            })
            .collect(),
    );
    let x = input(2, 16, 1);
    let y1 = net.forward(&stripped, &x, DropoutMode::Off, &mut no_rng()).unwrap();
    let y2 = lnet.forward(&lp, &x, DropoutMode::Off, &mut no_rng()).unwrap();
    assert_eq!(y1, y2);
}

#[test]
fn dropout_modes() {
    let net = TinyZoneNet::new(small_cfg()).unwrap();
    let p = net.init_params(1);
    let x = input(2, 16, 2);
    let off = net.forward(&p, &x, DropoutMode::Off, &mut no_rng()).unwrap();
    let s1 = net
        .forward(&p, &x, DropoutMode::Stochastic, &mut rng::stream(1, &[5]))
        .unwrap();
    let s2 = net
        .forward(&p, &x, DropoutMode::Stochastic, &mut rng::stream(1, &[5]))
        .unwrap();
    let s3 = net
        .forward(&p, &x, DropoutMode::Stochastic, &mut rng::stream(1, &[6]))
        .unwrap();
    assert_eq!(s1, s2);
    assert_ne!(s1, s3);
    assert_ne!(s1, off);

    let zero = TinyZoneNet::new(ArchConfig {
        dropout_rate: 0.0,
        ..small_cfg()
    })
    .unwrap();
    let z = zero
        .forward(&p, &x, DropoutMode::Stochastic, &mut rng::stream(1, &[5]))
        .unwrap();
    assert_eq!(z, off);
    // p = 0 draws nothing, so every MC pass equals the deterministic pass
    let mc = zero.mc_mean_probs(&p, &x, 5, &mut rng::stream(1, &[5])).unwrap();
    assert_eq!(mc.tensor(), softmax(&off).tensor());
}

#[test]
fn output_shapes_and_batch_independence() {
    for stride in [1, 2, 4] {
        let net = TinyZoneNet::new(ArchConfig {
            output_stride: stride,
            ..small_cfg()
        })
        .unwrap();
        let p = net.init_params(0);
        let x = input(3, 16, 5);
        let y = net.forward(&p, &x, DropoutMode::Off, &mut no_rng()).unwrap();
        assert_eq!(y.shape(), (3, 3, 16 / stride, 16 / stride));
        let single = net
            .forward(&p, &x.gather(&[1]), DropoutMode::Off, &mut no_rng())
            .unwrap();
        assert_eq!(single.sample(0), y.sample(1));
    }
    let net = TinyZoneNet::new(small_cfg()).unwrap();
    let p = net.init_params(0);
    assert!(net
        .forward(&p, &input(1, 24, 0), DropoutMode::Off, &mut no_rng())
        .is_err());
}

#[test]
fn constant_loss_has_zero_gradient() {
    let net = TinyZoneNet::new(small_cfg()).unwrap();
    let p = net.init_params(1);
    let g = loss_and_grad(&net, &p, &input(2, 16, 3), &Const, DropoutMode::Off, &mut no_rng()).unwrap();
    assert_eq!(g.loss, 1.5);
    assert!(g.grads.flat().iter().all(|&v| v == 0.0));
}

#[test]
fn frozen_parameters_have_no_gradients() {
    let net = TinyZoneNet::new(ArchConfig {
        use_lora_bottleneck: true,
        ..small_cfg()
    })
    .unwrap();
    let p = net.init_params(1);
    let lab = labels(2, 16);
    let obj = SupervisedObjective {
        labels: &lab,
        weights: LossWeights::default(),
    };
    let g = loss_and_grad(&net, &p, &input(2, 16, 3), &obj, DropoutMode::Off, &mut no_rng()).unwrap();
    for (i, param) in p.params().iter().enumerate() {
        assert_eq!(g.grads.for_param(i).is_some(), param.trainable, "{}", param.name);
    }
    // zero B: A gets no signal, B does
    let aq = p.params().iter().position(|x| x.name == "attn.q.lora_a").unwrap();
    let bq = p.params().iter().position(|x| x.name == "attn.q.lora_b").unwrap();
    assert!(g.grads.for_param(aq).unwrap().iter().all(|&v| v == 0.0));
    assert!(g.grads.for_param(bq).unwrap().iter().any(|&v| v != 0.0));
}

/// Central differences on a sample of coordinates in every trainable tensor.
fn finite_difference_check(cfg: ArchConfig, mode: DropoutMode, perturb_lora_b: bool) {
    let net = TinyZoneNet::new(cfg).unwrap();
    let mut p = net.init_params(11);
    if perturb_lora_b {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for param in p.params_mut() {
            if param.name.ends_with("lora_b") {
                param.data.iter_mut().for_each(|v| *v = r.random_range(-0.3..0.3));
            }
        }
    }
    let x = input(2, 16, 9);
    let lab = labels(2, net.config().output_size());
    let obj = SupervisedObjective {
        labels: &lab,
        weights: LossWeights::default(),
    };
    let seed_rng = rng::stream(5, &[7]);
    let analytic = loss_and_grad(&net, &p, &x, &obj, mode, &mut seed_rng.clone()).unwrap();

    let h = 1e-6;
    let mut pick = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (slot, &pi) in analytic.grads.indices.iter().enumerate() {
        let len = p.get(pi).len();
        for _ in 0..4 {
            let j = pick.random_range(0..len);
            let orig = p.get(pi).data[j];
            p.params_mut()[pi].data[j] = orig + h;
            let lp = loss_only(&net, &p, &x, &obj, mode, &mut seed_rng.clone()).unwrap();
            p.params_mut()[pi].data[j] = orig - h;
            let lm = loss_only(&net, &p, &x, &obj, mode, &mut seed_rng.clone()).unwrap();
            p.params_mut()[pi].data[j] = orig;
            let num = (lp - lm) / (2.0 * h);
            let an = analytic.grads.values[slot][j];
            let rel = (an - num).abs() / an.abs().max(num.abs()).max(1e-7);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{} [{j}]: analytic {an} numeric {num}", p.get(pi).name);
            checked += 1;
        }
    }
    assert!(checked >= 50, "checked {checked}");
    assert!(worst < 1e-4);
}

#[test]
fn gradients_match_finite_differences() {
    finite_difference_check(small_cfg(), DropoutMode::Off, false);
}

#[test]
fn gradients_match_finite_differences_with_dropout_masks() {
    finite_difference_check(small_cfg(), DropoutMode::Stochastic, false);
}

#[test]
fn gradients_match_finite_differences_lora_and_stride() {
    finite_difference_check(
        ArchConfig {
            use_lora_bottleneck: true,
            output_stride: 2,
            ..small_cfg()
        },
        DropoutMode::Off,
        true,
    );
}
