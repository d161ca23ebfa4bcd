//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. `MCIC_ACCEPTANCE=1,4` restricts the run to the
//! listed criteria.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mcic::backbone::{loss_and_grad, loss_only, ArchConfig, DropoutMode, LossEvaluator, ParamSet, Tensor, TinyZoneNet};
use mcic::data::LabelMask;
use mcic::engine::{
    deterministic_teacher_target, ema_update, mc_teacher_target, mixup, prepare_step, step_rng, train_step,
    unlabeled_pairing, Mode, StepBatch, TrainConfig, TrainState,
};
use mcic::losses::{ramp_weight, LossWeights, RampSchedule, SupervisedObjective};
use mcic::metrics::{dice_score, hd95, hd95_brute_force, percentile95};
use mcic::rng::{self, tag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- 1

fn formula_oracles() -> Outcome {
    let sched = RampSchedule {
        w_max: 0.1,
        ramp_epochs: 100,
    };
    for (tau, expect) in [(0.0, (-4.0f64).exp()), (0.5, (-1.0f64).exp()), (1.0, 1.0)] {
        let w = ramp_weight(tau * 100.0, &sched);
        check((w - 0.1 * expect).abs() < 1e-9, format!("ramp at tau={tau}: {w}"))?;
    }

    let theta = 1.7;
    let t0 = -0.4;
    let param = |v: f64| {
        ParamSet::new(vec![mcic::backbone::Param {
            name: "x".into(),
            shape: vec![1],
            trainable: true,
            data: vec![v],
        }])
    };
    let student = param(theta);
    let mut teacher = param(t0);
    for k in 1..=100 {
        ema_update(&mut teacher, &student, 0.99).map_err(|e| e.to_string())?;
        let gap = (teacher.get(0).data[0] - theta).abs();
        let expect = 0.99f64.powi(k) * (t0 - theta).abs();
        check((gap - expect).abs() < 1e-9, format!("ema step {k}: {gap} vs {expect}"))?;
    }

    let mut r = ChaCha8Rng::seed_from_u64(1);
    let u1 = Tensor::from_vec(2, 1, 4, 4, (0..32).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap();
    let u2 = Tensor::from_vec(2, 1, 4, 4, (0..32).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap();
    check(mixup(&u1, &u2, 1.0).unwrap() == u1, "mixup lambda=1 is not u1")?;
    check(mixup(&u1, &u2, 0.0).unwrap() == u2, "mixup lambda=0 is not u2")?;
    Ok("ramp, 100 EMA steps and mixup endpoints exact".into())
}

// ---------------------------------------------------------------- 2

fn random_mask(r: &mut ChaCha8Rng, n: usize) -> LabelMask {
    let mut labels = vec![0u8; n * n];
    for _ in 0..r.random_range(0..4) {
        let class = r.random_range(1..3u8);
        let (r0, c0) = (r.random_range(0..n), r.random_range(0..n));
        let (r1, c1) = (r.random_range(r0..n) + 1, r.random_range(c0..n) + 1);
        for row in r0..r1 {
            for col in c0..c1 {
                labels[row * n + col] = class;
            }
        }
    }
    // salt so boundaries are irregular
    for _ in 0..r.random_range(0..12) {
        let i = r.random_range(0..n * n);
        labels[i] = r.random_range(0..3);
    }
    LabelMask::new(n, n, labels).unwrap()
}

fn dice_oracle(a: &LabelMask, b: &LabelMask, class: u8) -> f64 {
    let sa: Vec<usize> = (0..a.labels().len()).filter(|&i| a.labels()[i] == class).collect();
    let sb: Vec<usize> = (0..b.labels().len()).filter(|&i| b.labels()[i] == class).collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.iter().filter(|i| sb.contains(i)).count();
    2.0 * inter as f64 / (sa.len() + sb.len()) as f64
}

/// Boundary by definition: a class pixel with a 4-neighbour outside the
/// class or outside the frame. Then all pairwise distances and the larger of
/// the two directed 95th percentiles.
fn hd95_oracle(a: &LabelMask, b: &LabelMask, class: u8) -> Option<f64> {
    let boundary = |m: &LabelMask| {
        let (h, w) = (m.height() as i64, m.width() as i64);
        let inside = |r: i64, c: i64| r >= 0 && c >= 0 && r < h && c < w && m.get(r as usize, c as usize) == class;
        let mut out = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if inside(r, c)
                    && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                        .iter()
                        .any(|(dr, dc)| !inside(r + dr, c + dc))
                {
                    out.push((r as f64, c as f64));
                }
            }
        }
        out
    };
    let (pa, pb) = (boundary(a), boundary(b));
    if pa.is_empty() || pb.is_empty() {
        return None;
    }
    let directed = |x: &[(f64, f64)], y: &[(f64, f64)]| -> Vec<f64> {
        x.iter()
            .map(|p| {
                y.iter()
                    .map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let ab = percentile95(&directed(&pa, &pb)).unwrap();
    let ba = percentile95(&directed(&pb, &pa)).unwrap();
    Some(ab.max(ba))
}

fn metric_oracles() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let (mut defined, mut undefined) = (0, 0);
    for pair in 0..200 {
        let a = random_mask(&mut r, 16);
        let b = random_mask(&mut r, 16);
        for class in [1u8, 2] {
            let d = dice_score(&a, &b, class).unwrap();
            let od = dice_oracle(&a, &b, class);
            check(
                (d - od).abs() < 1e-9,
                format!("pair {pair} class {class}: dice {d} vs {od}"),
            )?;
            let (ab, ba, brute, oracle) = (
                hd95(&a, &b, class).ok(),
                hd95(&b, &a, class).ok(),
                hd95_brute_force(&a, &b, class).ok(),
                hd95_oracle(&a, &b, class),
            );
            check(ab == ba, format!("pair {pair} class {class}: asymmetric {ab:?} {ba:?}"))?;
            match (ab, brute, oracle) {
                (Some(x), Some(y), Some(z)) => {
                    check(
                        (x - y).abs() < 1e-9 && (x - z).abs() < 1e-9,
                        format!("pair {pair}: hd95 {x} {y} {z}"),
                    )?;
                    defined += 1;
                }
                (None, None, None) => undefined += 1,
                other => return Err(format!("pair {pair} class {class}: definedness differs {other:?}")),
            }
        }
    }
    check(defined >= 200, format!("only {defined} defined hd95 cases"))?;
    Ok(format!(
        "200 pairs, {defined} defined / {undefined} undefined hd95 cases, symmetric"
    ))
}

// ---------------------------------------------------------------- 3

fn arch16(lora: bool) -> ArchConfig {
    ArchConfig {
        input_size: 16,
        use_lora_bottleneck: lora,
        ..ArchConfig::default()
    }
}

fn rand_tensor(r: &mut ChaCha8Rng, n: usize, size: usize) -> Tensor {
    Tensor::from_vec(
        n,
        1,
        size,
        size,
        (0..n * size * size).map(|_| r.random_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

fn ring_labels(n: usize, size: usize) -> Vec<LabelMask> {
    (0..n)
        .map(|i| {
            let c = size as i64 / 2;
            let l = (0..size * size)
                .map(|p| {
                    let d = (p as i64 / size as i64 - c).abs() + (p as i64 % size as i64 - c + i as i64).abs();
                    if d < 3 {
                        2
                    } else if d < 6 {
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

struct FdStats {
    checked: usize,
    passed: usize,
    worst: f64,
}

fn fd_check(net: &TinyZoneNet, params: &ParamSet, x: &Tensor, obj: &dyn LossEvaluator, seed: u64) -> FdStats {
    let dropout = rng::stream(seed, &[tag::STUDENT_DROPOUT]);
    let mode = DropoutMode::Stochastic;
    let an = loss_and_grad(net, params, x, obj, mode, &mut dropout.clone()).unwrap();
    // every trainable coordinate, flattened, then 200 drawn uniformly
    let coords: Vec<(usize, usize, usize)> = an
        .grads
        .indices
        .iter()
        .enumerate()
        .flat_map(|(slot, &pi)| (0..params.get(pi).len()).map(move |j| (slot, pi, j)))
        .collect();
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut p = params.clone();
    let h = 1e-4;
    let mut stats = FdStats {
        checked: 0,
        passed: 0,
        worst: 0.0,
    };
    for _ in 0..200 {
        let (slot, pi, j) = coords[pick.random_range(0..coords.len())];
        let orig = p.get(pi).data[j];
        p.params_mut()[pi].data[j] = orig + h;
        let lp = loss_only(net, &p, x, obj, mode, &mut dropout.clone()).unwrap();
        p.params_mut()[pi].data[j] = orig - h;
        let lm = loss_only(net, &p, x, obj, mode, &mut dropout.clone()).unwrap();
        p.params_mut()[pi].data[j] = orig;
        let num = (lp - lm) / (2.0 * h);
        let a = an.grads.values[slot][j];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
        stats.checked += 1;
        if rel < 1e-4 {
            stats.passed += 1;
        }
        stats.worst = stats.worst.max(rel);
        if rel >= 1e-4 && std::env::var("MCIC_FD_DEBUG").is_ok() {
            let small = (0..6)
                .map(|e| {
                    let hh = 10f64.powi(-(e + 3));
                    p.params_mut()[pi].data[j] = orig + hh;
                    let a1 = loss_only(net, &p, x, obj, mode, &mut dropout.clone()).unwrap();
                    p.params_mut()[pi].data[j] = orig - hh;
                    let a2 = loss_only(net, &p, x, obj, mode, &mut dropout.clone()).unwrap();
                    p.params_mut()[pi].data[j] = orig;
                    format!("{:.6e}", (a1 - a2) / (2.0 * hh))
                })
                .collect::<Vec<_>>()
                .join(" ");
            eprintln!(
                "  {} [{j}] analytic {a:.6e} numeric {num:.6e} rel {rel:.2e} | h=1e-3..1e-8: {small}",
                p.get(pi).name
            );
        }
    }
    stats
}

fn gradient_correctness() -> Outcome {
    let mut lines = Vec::new();
    for lora in [false, true] {
        let cfg = TrainConfig {
            mode: Mode::Mcic,
            arch: arch16(lora),
            seed: 7,
            ..TrainConfig::default()
        };
        let net = TinyZoneNet::new(cfg.arch.clone()).unwrap();
        let mut state = TrainState::new(&net, &cfg);
        if lora {
            // nonzero B so the A matrices carry gradient
            let mut r = ChaCha8Rng::seed_from_u64(3);
            for p in state.student.params_mut() {
                if p.name.ends_with("lora_b") {
                    p.data.iter_mut().for_each(|v| *v = r.random_range(-0.2..0.2));
                }
            }
        }
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let batch = StepBatch {
            labeled: rand_tensor(&mut r, 2, 16),
            labels: ring_labels(2, 16),
            unlabeled: Some(rand_tensor(&mut r, 4, 16)),
        };

        let sup = SupervisedObjective {
            labels: &batch.labels,
            weights: LossWeights::default(),
        };
        let s1 = fd_check(&net, &state.student, &batch.labeled, &sup, 1);

        // mid-ramp so the uncertainty mask is partial and the weight nonzero
        let prepared = prepare_step(&net, &cfg, &state, &batch, 60.0).unwrap();
        check(
            prepared.mask_frac > 0.0 && prepared.mask_frac < 1.0,
            format!("mask_frac {}", prepared.mask_frac),
        )?;
        let s2 = prepared.with_objective(|obj| fd_check(&net, &state.student, &prepared.inputs, obj, 2));

        for (name, s) in [("supervised", &s1), ("mcic total", &s2)] {
            let frac = s.passed as f64 / s.checked as f64;
            check(
                frac >= 0.99,
                format!(
                    "{name} lora={lora}: {}/{} within 1e-4 (worst {:.2e})",
                    s.passed, s.checked, s.worst
                ),
            )?;
            lines.push(format!(
                "{name}{}: {}/{}",
                if lora { "+lora" } else { "" },
                s.passed,
                s.checked
            ));
        }

        // frozen tensors get no gradient; the teacher only moves by EMA
        let g = prepared
            .with_objective(|obj| {
                loss_and_grad(
                    &net,
                    &state.student,
                    &prepared.inputs,
                    obj,
                    DropoutMode::Off,
                    &mut step_rng(&state, 0),
                )
            })
            .unwrap();
        for (i, p) in state.student.params().iter().enumerate() {
            check(
                g.grads.for_param(i).is_some() == p.trainable,
                format!("gradient presence for {}", p.name),
            )?;
        }
        let before = state.clone();
        train_step(&net, &cfg, &mut state, &batch, 60.0).unwrap();
        for (i, p) in state.teacher.params().iter().enumerate() {
            let (t0, s1) = (&before.teacher.get(i).data, &state.student.get(i).data);
            let ok = if p.trainable {
                (0..p.len()).all(|k| p.data[k] == cfg.ema_alpha * t0[k] + (1.0 - cfg.ema_alpha) * s1[k])
            } else {
                &p.data == t0 && s1 == &before.student.get(i).data
            };
            check(ok, format!("teacher/frozen update for {}", p.name))?;
        }
    }
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------- 4

fn mc_degeneracy() -> Outcome {
    let arch = ArchConfig {
        dropout_rate: 0.0,
        ..arch16(false)
    };
    let net = TinyZoneNet::new(arch.clone()).unwrap();
    let teacher = net.init_params(5);
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let u = rand_tensor(&mut r, 6, 16);
    let perm = unlabeled_pairing(6, &mut r).unwrap();
    for lambda in [0.0, 0.37, 1.0] {
        let (mc, _) = mc_teacher_target(
            &net,
            &teacher,
            &u,
            &u.gather(&perm),
            lambda,
            12,
            &mut rng::stream(1, &[1]),
        )
        .unwrap();
        let det = deterministic_teacher_target(&net, &teacher, &u, &perm, lambda, &mut rng::stream(1, &[2])).unwrap();
        check(
            mc.tensor() == det.tensor(),
            format!("mc target differs at lambda {lambda}"),
        )?;
    }

    let base = TrainConfig {
        arch,
        seed: 4,
        ..TrainConfig::default()
    };
    let batch = StepBatch {
        labeled: rand_tensor(&mut r, 2, 16),
        labels: ring_labels(2, 16),
        unlabeled: Some(u),
    };
    // at full ramp the entropy threshold admits every non-uniform pixel
    let progress = base.ramp.ramp_epochs as f64;
    let mut out = Vec::new();
    for mode in [Mode::Mcic, Mode::Ict] {
        let cfg = TrainConfig { mode, ..base.clone() };
        let net = TinyZoneNet::new(cfg.arch.clone()).unwrap();
        let mut state = TrainState::new(&net, &base);
        let mut logs = Vec::new();
        for _ in 0..3 {
            logs.push(train_step(&net, &cfg, &mut state, &batch, progress).unwrap());
        }
        out.push((logs, state));
    }
    let (mcic, ict) = (&out[0], &out[1]);
    for (k, (a, b)) in mcic.0.iter().zip(&ict.0).enumerate() {
        check(a.mask_frac == 1.0, format!("step {k}: mcic mask_frac {}", a.mask_frac))?;
        check(
            a.loss_con.to_bits() == b.loss_con.to_bits(),
            format!("step {k}: mcic L_con {} vs ict {}", a.loss_con, b.loss_con),
        )?;
    }
    check(mcic.1.student == ict.1.student, "student parameters diverged")?;
    Ok(format!(
        "targets bitwise equal; L_con equal over 3 steps ({:.6e})",
        mcic.0[2].loss_con
    ))
}

// ---------------------------------------------------------------- runs

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mcic")
}

fn run(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "mcic {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_json(path: &Path, v: serde_json::Value) -> PathBuf {
    fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path.to_path_buf()
}

fn synth(dir: &Path, name: &str, cfg: serde_json::Value) -> Result<PathBuf, String> {
    let c = write_json(&dir.join(format!("{name}.json")), cfg);
    let out = dir.join(name);
    run(&["synth", "--config", p(&c), "--out", p(&out)])?;
    Ok(out.join("manifest.json"))
}

fn train(dir: &Path, name: &str, cfg: serde_json::Value, manifest: &Path, extra: &[&str]) -> Result<PathBuf, String> {
    let c = write_json(&dir.join(format!("{name}.train.json")), cfg);
    let out = dir.join(name);
    let mut args = vec![
        "train",
        "--config",
        p(&c),
        "--manifest",
        p(manifest),
        "--out",
        p(&out),
        "--quiet",
    ];
    args.extend_from_slice(extra);
    run(&args)?;
    Ok(out)
}

fn final_dice(run_dir: &Path) -> (f64, f64) {
    let v: serde_json::Value = serde_json::from_slice(&fs::read(run_dir.join("reports/test.json")).unwrap()).unwrap();
    (
        v["per_class"]["pz"]["dice"].as_f64().unwrap(),
        v["per_class"]["tz"]["dice"].as_f64().unwrap(),
    )
}

// ---------------------------------------------------------------- 5

fn determinism(dir: &Path) -> Outcome {
    let manifest = synth(
        dir,
        "det",
        serde_json::json!({"num_labeled": 8, "num_unlabeled": 16, "num_test": 4, "image_size": 32, "seed": 1}),
    )?;
    let cfg = serde_json::json!({
        "mode": "mcic", "epochs": 20, "batch_labeled": 4, "batch_unlabeled": 4, "eval_every": 5,
        "seed": 3, "arch": {"input_size": 32}
    });
    let a = train(dir, "det-a", cfg.clone(), &manifest, &[])?;
    let b = train(dir, "det-b", cfg, &manifest, &[])?;
    let (ha, hb) = (
        fs::read(a.join("history.csv")).unwrap(),
        fs::read(b.join("history.csv")).unwrap(),
    );
    check(ha == hb, "history.csv differs between identical runs")?;
    let rows = ha.iter().filter(|&&c| c == b'\n').count() - 1;
    check(rows == 20, format!("{rows} history rows"))?;
    let (ca, cb) = (
        fs::read(a.join("checkpoints/final.ckpt")).unwrap(),
        fs::read(b.join("checkpoints/final.ckpt")).unwrap(),
    );
    check(ca == cb, "final checkpoints differ")?;
    Ok(format!(
        "20 epochs, history.csv identical ({} bytes), checkpoints identical",
        ha.len()
    ))
}

// ---------------------------------------------------------------- 6

fn learning(dir: &Path) -> Outcome {
    let manifest = synth(
        dir,
        "learn",
        serde_json::json!({"num_labeled": 20, "num_unlabeled": 80, "num_test": 20, "image_size": 64, "seed": 0}),
    )?;
    let cfg = serde_json::json!({
        "mode": "mcic", "epochs": 200, "batch_labeled": 4, "batch_unlabeled": 4, "eval_every": 50, "seed": 0
    });
    let r = train(dir, "learn-mcic", cfg, &manifest, &[])?;
    let (pz, tz) = final_dice(&r);
    check(pz >= 0.85 && tz >= 0.85, format!("dice pz={pz:.4} tz={tz:.4}"))?;
    Ok(format!("dice pz={pz:.4} tz={tz:.4}"))
}

// ---------------------------------------------------------------- 7

const TREND_EPOCHS: usize = 200;

fn trend(dir: &Path) -> Outcome {
    // same unlabeled and test slices as the learning run; only 5 labeled kept
    let manifest = synth(
        dir,
        "trend",
        serde_json::json!({"num_labeled": 20, "num_unlabeled": 80, "num_test": 20, "image_size": 64, "seed": 0}),
    )?;
    let modes = ["mcic", "ict", "supervised"];
    let mut mean = [[0.0; 2]; 3];
    let mut per_seed = Vec::new();
    for seed in 0..3u64 {
        for (m, mode) in modes.iter().enumerate() {
            let cfg = serde_json::json!({
                "mode": mode, "epochs": TREND_EPOCHS, "batch_labeled": 2, "batch_unlabeled": 8,
                "eval_every": 50, "seed": seed, "ramp": {"w_max": 0.3, "ramp_epochs": 100}
            });
            let r = train(
                dir,
                &format!("trend-{mode}-{seed}"),
                cfg,
                &manifest,
                &["--labeled-patients", "5"],
            )?;
            let (pz, tz) = final_dice(&r);
            per_seed.push(format!("{mode}/{seed}={pz:.3}/{tz:.3}"));
            mean[m][0] += pz / 3.0;
            mean[m][1] += tz / 3.0;
        }
    }
    eprintln!("  trend runs: {}", per_seed.join(" "));
    let [mc, ict, sup] = mean;
    let summary = format!(
        "mean pz/tz mcic={:.4}/{:.4} ict={:.4}/{:.4} sup={:.4}/{:.4}",
        mc[0], mc[1], ict[0], ict[1], sup[0], sup[1]
    );
    for z in 0..2 {
        check(
            mc[z] >= ict[z] && ict[z] >= sup[z],
            format!("ordering fails on zone {}: {summary}", z + 1),
        )?;
        check(
            mc[z] - sup[z] >= 0.02,
            format!("gap below 2 points on zone {}: {summary}", z + 1),
        )?;
    }
    Ok(summary)
}

// ---------------------------------------------------------------- 8

fn fine_tune(dir: &Path) -> Outcome {
    let a = synth(
        dir,
        "dist-a",
        serde_json::json!({"num_labeled": 20, "num_unlabeled": 80, "num_test": 20, "image_size": 64, "seed": 10}),
    )?;
    // B: rounder zones with a smaller, shifted core, brighter and noisier
    let b = synth(
        dir,
        "dist-b",
        serde_json::json!({
            "num_labeled": 20, "num_unlabeled": 80, "num_test": 20, "image_size": 64, "seed": 20,
            "noise_sigma": 0.5, "pz_intensity": 1.4, "tz_intensity": 2.6, "background_intensity": 0.3,
            "geometry": {"outer_radii": [0.26, 0.24], "inner_radii": [0.12, 0.11], "inner_offset": [0.03, 0.02]}
        }),
    )?;
    let pre = train(
        dir,
        "ft-pretrain",
        serde_json::json!({"mode": "mcic", "epochs": 40, "batch_labeled": 4, "batch_unlabeled": 4, "eval_every": 40}),
        &a,
        &[],
    )?;
    let ckpt = pre.join("checkpoints/final.ckpt");
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let cfg = serde_json::json!({
            "mode": "mcic", "epochs": FT_EPOCHS, "batch_labeled": 2, "batch_unlabeled": 4,
            "eval_every": FT_EPOCHS, "seed": seed
        });
        let labeled = ["--labeled-patients", "5"];
        let scratch = train(dir, &format!("ft-scratch-{seed}"), cfg.clone(), &b, &labeled)?;
        let mut ft_args = labeled.to_vec();
        ft_args.extend(["--init-from", p(&ckpt), "--reset-optimizer"]);
        let tuned = train(dir, &format!("ft-tuned-{seed}"), cfg, &b, &ft_args)?;
        let (s, t) = (final_dice(&scratch), final_dice(&tuned));
        let (sm, tm) = ((s.0 + s.1) / 2.0, (t.0 + t.1) / 2.0);
        if tm > sm {
            wins += 1;
        }
        lines.push(format!("seed {seed}: tuned {tm:.4} vs scratch {sm:.4}"));
    }
    check(wins >= 2, format!("{wins}/3 wins; {}", lines.join("; ")))?;
    Ok(format!("{wins}/3 wins; {}", lines.join("; ")))
}

const FT_EPOCHS: usize = 15;

// ---------------------------------------------------------------- 9

fn invariant_suites() -> Outcome {
    // The property suites live in the unit and integration tests of both
    // crates; run every non-acceptance target so this line reflects them.
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let manifest = concat!(env!("CARGO_MANIFEST_DIR"), "/../../Cargo.toml");
    let targets = ["invariants", "backbone", "cli", "ffi"];
    let mut args = vec!["test", "--manifest-path", manifest, "--workspace", "--lib", "--bins"];
    for t in &targets {
        args.extend(["--test", t]);
    }
    let out = Command::new(cargo).args(&args).output().map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    let results: Vec<&str> = text.lines().filter(|l| l.starts_with("test result:")).collect();
    eprintln!("  nested suites:\n    {}", results.join("\n    "));
    let passed: usize = results
        .iter()
        .filter_map(|l| l.strip_prefix("test result: ok. "))
        .filter_map(|l| l.split(' ').next()?.parse::<usize>().ok())
        .sum();
    check(
        out.status.success(),
        format!(
            "property suites failed:\n{}",
            text.lines()
                .filter(|l| l.contains("FAILED"))
                .collect::<Vec<_>>()
                .join("\n")
        ),
    )?;
    Ok(format!("{passed} tests passed across {} suites", results.len()))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("MCIC_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let work = tempfile::tempdir().expect("tempdir");
    let dir = work.path();
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "formula oracles", Box::new(formula_oracles)),
        (2, "metric oracle equivalence", Box::new(metric_oracles)),
        (3, "gradient correctness", Box::new(gradient_correctness)),
        (4, "MC degeneracy", Box::new(mc_degeneracy)),
        (5, "determinism", Box::new(|| determinism(dir))),
        (6, "learning at desk scale", Box::new(|| learning(dir))),
        (7, "low-label trend", Box::new(|| trend(dir))),
        (8, "fine-tune workflow", Box::new(|| fine_tune(dir))),
        (9, "invariant suites", Box::new(invariant_suites)),
    ];
    let mut failed = 0;
    for (n, name, f) in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(n)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
