//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any line fails.

use std::time::Instant;

use dcff_core::autodiff::Graph;
use dcff_core::backbone::{forward_branch, FusionInputs};
use dcff_core::config::Role;
use dcff_core::heads::{assign_targets, decode_box};
use dcff_core::kernels::{conv2d, depthwise_xcorr, ConvSpec};
use dcff_core::losses::{iou_loss, logistic_loss, softmax_cross_entropy};
use dcff_core::{gradsuite, Ablation, BBox, ModelConfig, RegVector, Tensor};
use dcff_track::{ope_evaluate, Tracker, TrackerConfig};
use dcff_train::checkpoint::Checkpoint;
use dcff_train::synth::SynthSpec;
use dcff_train::{Dataset, TrainConfig, Trainer};
use dcffnet::harness::{ablation_study, moving_average_rises, overfit, AblationRow, OverfitProtocol};
use dcffnet::inspect::{ablation_counts, counts_agree, report};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: impl Into<String>) -> Line {
    Line {
        pass,
        detail: detail.into(),
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).unwrap()
}

fn geometry_fidelity() -> Line {
    let start = Instant::now();
    let full = ModelConfig::reference();
    let table = |role| full.shape_table(role).unwrap();
    let hw = |s: [usize; 3]| (s[1], s[2]);
    let (search, template) = (table(Role::Search), table(Role::Template));
    let tables_ok = hw(search.get("after_conv3").unwrap()) == (87, 87)
        && hw(search.get("after_block2").unwrap()) == (44, 44)
        && hw(template.get("after_conv3").unwrap()) == (23, 23)
        && hw(template.get("after_block2").unwrap()) == (12, 12);

    // Spatial sizes do not depend on channel counts, so a thin copy runs fast.
    let thin = full.with_uniform_channels(2);
    let params = dcff_core::init_params(&thin, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = g.input(random_tensor(&[3, 127, 127], &mut rng));
    let t = forward_branch(&mut g, &thin, &params, z, Role::Template, &FusionInputs::default()).unwrap();
    let x = g.input(random_tensor(&[3, 255, 255], &mut rng));
    let fusion = FusionInputs {
        after_conv3: Some(t.after_conv3),
        after_block2: Some(t.after_block2),
    };
    let s = forward_branch(&mut g, &thin, &params, x, Role::Search, &fusion).unwrap();
    let shape = |n| {
        let v = g.value(n).shape();
        (v[1], v[2])
    };
    let run_ok = shape(s.after_conv3) == (87, 87)
        && shape(s.after_block2) == (44, 44)
        && shape(t.after_conv3) == (23, 23)
        && shape(t.after_block2) == (12, 12);
    let secs = start.elapsed().as_secs_f64();
    line(
        tables_ok && run_ok && secs < 1.0,
        format!(
            "search {:?}/{:?}, template {:?}/{:?} in a forward pass; {secs:.2}s",
            shape(s.after_conv3),
            shape(s.after_block2),
            shape(t.after_conv3),
            shape(t.after_block2)
        ),
    )
}

/// Channel-outermost, then the window row-major, from zero; bias last.
fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Vec<f64> {
    let (c, h, wd) = x.dims3().unwrap();
    let oh = (h + 2 * spec.padding - spec.kernel_h) / spec.stride + 1;
    let ow = (wd + 2 * spec.padding - spec.kernel_w) / spec.stride + 1;
    let mut out = Vec::new();
    for co in 0..spec.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..c {
                    for ky in 0..spec.kernel_h {
                        for kx in 0..spec.kernel_w {
                            let iy = (oy * spec.stride + ky) as i64 - spec.padding as i64;
                            let ix = (ox * spec.stride + kx) as i64 - spec.padding as i64;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                let xv = x.data()[(ci * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * c + ci) * spec.kernel_h + ky) * spec.kernel_w + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                }
                out.push(acc + b.data()[co]);
            }
        }
    }
    out
}

fn naive_xcorr(s: &Tensor, t: &Tensor) -> Vec<f64> {
    let (c, hs, ws) = s.dims3().unwrap();
    let (_, ht, wt) = t.dims3().unwrap();
    let mut out = Vec::new();
    for ch in 0..c {
        for y in 0..=hs - ht {
            for x in 0..=ws - wt {
                let mut acc = 0.0;
                for ky in 0..ht {
                    for kx in 0..wt {
                        acc += s.data()[(ch * hs + y + ky) * ws + x + kx] * t.data()[(ch * ht + ky) * wt + kx];
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn kernel_oracles() -> Line {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let odd = |r: &mut ChaCha8Rng| 2 * r.gen_range(0..3) + 1;
    let mut conv_bad = 0;
    for _ in 0..120 {
        let spec = ConvSpec {
            kernel_h: odd(&mut rng),
            kernel_w: odd(&mut rng),
            stride: rng.gen_range(1..4),
            padding: rng.gen_range(0..3),
            in_channels: rng.gen_range(1..5),
            out_channels: rng.gen_range(1..5),
        };
        let h = rng.gen_range(spec.kernel_h..14);
        let w = rng.gen_range(spec.kernel_w..14);
        let x = random_tensor(&[spec.in_channels, h, w], &mut rng);
        let wt = random_tensor(&spec.weight_shape(), &mut rng);
        let b = random_tensor(&[spec.out_channels], &mut rng);
        let got = conv2d(&x, &wt, &b, &spec).unwrap();
        conv_bad += usize::from(got.data() != naive_conv(&x, &wt, &b, &spec).as_slice());
    }
    let mut xcorr_bad = 0;
    for _ in 0..120 {
        let c = rng.gen_range(1..6);
        let (ht, wt) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let s = random_tensor(&[c, ht + rng.gen_range(0..10), wt + rng.gen_range(0..10)], &mut rng);
        let t = random_tensor(&[c, ht, wt], &mut rng);
        xcorr_bad += usize::from(depthwise_xcorr(&s, &t).unwrap().data() != naive_xcorr(&s, &t).as_slice());
    }
    let secs = start.elapsed().as_secs_f64();
    line(
        conv_bad == 0 && xcorr_bad == 0 && secs < 10.0,
        format!("120 conv2d and 120 depthwise_xcorr shapes, mismatches {conv_bad}/{xcorr_bad}; {secs:.2}s"),
    )
}

fn gradient_suite() -> Line {
    let start = Instant::now();
    let reports = gradsuite::run(None).unwrap();
    let worst = reports.iter().map(|r| r.max_rel_err()).fold(0.0, f64::max);
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !(r.max_rel_err() < 1e-4))
        .map(|r| r.op.as_str())
        .collect();
    let secs = start.elapsed().as_secs_f64();
    line(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} checks, worst relative error {worst:.2e}, failing {failed:?}; {secs:.2}s",
            reports.len()
        ),
    )
}

fn loss_fixed_points() -> Line {
    let ln2 = std::f64::consts::LN_2;
    let labels = Tensor::from_fn(&[1, 3, 3], |i| if i % 3 == 0 { 1.0 } else { -1.0 }).unwrap();
    let logistic = logistic_loss(&Tensor::zeros(&[1, 3, 3]).unwrap(), &labels).unwrap();
    let positive: Vec<bool> = (0..9).map(|i| i % 4 == 0).collect();
    let ce = softmax_cross_entropy(&Tensor::zeros(&[2, 3, 3]).unwrap(), &positive, true).unwrap();
    let field = Tensor::from_fn(&[4, 2, 2], |i| 1.0 + i as f64 * 0.75).unwrap();
    let same = iou_loss(&field, &field, &[true; 4]).unwrap().value;
    // a 4×2 box inside a 4×4 box sharing the anchor: IoU 8/16
    let pred = Tensor::new(&[4, 1, 1], vec![2.0, 2.0, 2.0, 0.0]).unwrap();
    let target = Tensor::new(&[4, 1, 1], vec![2.0, 2.0, 2.0, 2.0]).unwrap();
    let half = iou_loss(&pred, &target, &[true]).unwrap().value;
    let pass =
        (logistic - ln2).abs() <= 1e-9 && (ce - ln2).abs() <= 1e-9 && same.abs() <= 1e-9 && (half - ln2).abs() <= 1e-6;
    line(
        pass,
        format!("logistic {logistic:.12}, balanced CE {ce:.12}, IoU(p=t) {same:.1e}, IoU=0.5 fixture {half:.12}"),
    )
}

fn target_round_trip() -> Line {
    let geometry = ModelConfig::reference().head_geometry().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut positives, mut empty) = (0.0f64, 0usize, 0usize);
    for _ in 0..1000 {
        let (w, h) = (rng.gen_range(2.0..200.0), rng.gen_range(2.0..200.0));
        let (x0, y0) = (rng.gen_range(-20.0..240.0), rng.gen_range(-20.0..240.0));
        let gt = BBox::new(x0, y0, x0 + w, y0 + h);
        let targets = assign_targets(&geometry, &gt).unwrap();
        let plane = geometry.height * geometry.width;
        empty += usize::from(targets.no_positives);
        for i in (0..plane).filter(|&i| targets.positive[i]) {
            let d = targets.reg.data();
            let reg = RegVector::from_array([d[i], d[plane + i], d[2 * plane + i], d[3 * plane + i]]);
            let b = decode_box(
                i % geometry.width,
                i / geometry.width,
                reg,
                geometry.stride,
                geometry.offset,
            );
            for (a, e) in [(b.x0, gt.x0), (b.y0, gt.y0), (b.x1, gt.x1), (b.y1, gt.y1)] {
                worst = worst.max((a - e).abs());
            }
            positives += 1;
        }
    }
    line(
        worst <= 1e-9 && positives > 0,
        format!("{positives} positive locations over 1000 boxes ({empty} without any), max corner error {worst:.1e}"),
    )
}

fn parameter_freeness() -> Line {
    let reference = ablation_counts(&ModelConfig::reference());
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    let mut loaded = Vec::new();
    for ablation in [Ablation::Baseline, Ablation::CfDouble] {
        let model = ModelConfig::reference().with_ablation(ablation);
        let path = dir.path().join(format!("{}.ckpt", ablation.name()));
        Trainer::new(model, TrainConfig::default())
            .unwrap()
            .checkpoint()
            .save(&path)
            .unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        loaded.push((
            ck.params.names().map(String::from).collect::<Vec<_>>(),
            ck.params.scalar_count(),
        ));
        paths.push(path);
    }
    let text = report(&paths).unwrap();
    let inspect_ok = text.matches("parameter counts identical across ablations: yes").count() == 2
        && text.contains("checkpoints have identical parameter counts: yes");
    let pass = counts_agree(&reference) && loaded[0] == loaded[1] && inspect_ok;
    line(
        pass,
        format!(
            "{} scalars in each of {}; `dcff inspect` agrees: {inspect_ok}",
            reference[0].scalars,
            reference
                .iter()
                .map(|c| c.ablation.name())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn synthetic_data() -> (Dataset, dcff_train::FrameSequence) {
    let seq = SynthSpec::default().generate().unwrap();
    (
        Dataset {
            sequences: vec![seq.clone()],
        },
        seq,
    )
}

fn overfit_criterion() -> Line {
    let start = Instant::now();
    let (data, _) = synthetic_data();
    let run = overfit(&ModelConfig::toy(), &data, &OverfitProtocol::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ratio = run.final_loss() / run.initial_loss();
    let rises = moving_average_rises(&run.history, 20);
    let finite = run.history.iter().all(|v| v.is_finite());
    line(
        finite && ratio <= 0.1 && rises == 0 && secs < 300.0,
        format!(
            "loss {:.4} -> {:.4} (ratio {ratio:.4}); 20-step moving average rose in {rises} of {} windows; {secs:.1}s",
            run.initial_loss(),
            run.final_loss(),
            run.history.len() - 20
        ),
    )
}

fn closed_loop() -> (Line, Vec<AblationRow>) {
    let start = Instant::now();
    let (_, seq) = synthetic_data();
    let rows = ablation_study(
        &ModelConfig::toy(),
        &[Ablation::Baseline, Ablation::CfDouble],
        &seq,
        &OverfitProtocol::default(),
        TrackerConfig::default(),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (base, cf) = (&rows[0].result, &rows[1].result);
    let pass = cf.mean_iou >= 0.5 && cf.precision_at == 1.0 && cf.mean_iou >= base.mean_iou && secs < 120.0;
    let detail = format!(
        "cf-double mean IoU {:.3} P@20 {:.3}; baseline mean IoU {:.3} P@20 {:.3}; {secs:.1}s",
        cf.mean_iou, cf.precision_at, base.mean_iou, base.precision_at
    );
    (line(pass, detail), rows)
}

/// The two update oracles on the trained CF-double model, decoded boxes
/// taken as they are.
fn update_oracles(row: &AblationRow) -> [Line; 2] {
    let raw = TrackerConfig {
        window_influence: 0.0,
        size_smoothing: 1.0,
        ..TrackerConfig::default()
    };
    let model = ModelConfig::toy().with_ablation(row.ablation);
    let tracker = Tracker::new(model, row.run.params.clone(), raw).unwrap();
    let half_stride = tracker.geometry().stride as f64 / 2.0;
    let seq = SynthSpec {
        length: 2,
        step_x: 10.0,
        ..SynthSpec::default()
    }
    .generate()
    .unwrap();
    let gt = &seq.groundtruth;

    let mut state = tracker.init(&seq.frames[0], &gt[0]).unwrap();
    let iou = tracker.update(&mut state, &seq.frames[0]).unwrap().bbox.iou(&gt[0]);
    let mut state = tracker.init(&seq.frames[0], &gt[0]).unwrap();
    let moved = tracker.update(&mut state, &seq.frames[1]).unwrap().bbox;
    let (dx, dy) = (moved.center().0 - gt[0].center().0, moved.center().1 - gt[0].center().1);
    [
        line(iou >= 0.9, format!("static frame, no window: IoU {iou:.3} (needs 0.9)")),
        line(
            (dx - 10.0).abs() <= half_stride && dy.abs() <= half_stride,
            format!("+10 px shift: center moved ({dx:.2}, {dy:.2}), tolerance {half_stride} px"),
        ),
    ]
}

fn determinism() -> Line {
    let config = TrainConfig {
        seed: 9,
        batch_size: 2,
        epoch_divisor: 1000,
        steps_per_epoch: 2,
        ..TrainConfig::default()
    };
    let data = Dataset {
        sequences: vec![SynthSpec {
            length: 12,
            ..SynthSpec::default()
        }
        .generate()
        .unwrap()],
    };
    let straight = || {
        let mut t = Trainer::new(ModelConfig::toy(), config.clone()).unwrap();
        t.run_all(&data).unwrap();
        t.checkpoint()
    };
    let (a, b) = (straight(), straight());
    let same_seed = a.encode() == b.encode();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    a.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let round_trip = back.encode() == a.encode() && std::fs::read(&path).unwrap() == a.encode() && back == a;

    let resumed = dir.path().join("resumed.ckpt");
    Trainer::new(ModelConfig::toy(), config.clone())
        .unwrap()
        .checkpoint()
        .save(&resumed)
        .unwrap();
    let mut stages = 0;
    loop {
        let mut t = Trainer::from_checkpoint(Checkpoint::load(&resumed).unwrap(), config.clone()).unwrap();
        if t.finished() {
            break;
        }
        t.run_stage(&data).unwrap();
        t.checkpoint().save(&resumed).unwrap();
        stages += 1;
    }
    let resume = std::fs::read(&resumed).unwrap() == a.encode();
    line(
        same_seed && round_trip && resume,
        format!("same seed bitwise {same_seed}; save/load bitwise {round_trip}; resumed after each of {stages} stages bitwise {resume}"),
    )
}

fn metric_fixtures() -> Line {
    let gt = vec![BBox::new(0.0, 0.0, 10.0, 10.0); 3];
    let pred = vec![gt[0], BBox::new(0.0, 0.0, 10.0, 5.0), BBox::new(0.0, 0.0, 10.0, 2.0)];
    let r = ope_evaluate(&pred, &gt).unwrap();
    // thresholds 0.00..=0.20 keep both scored frames, 0.21..=0.50 keep one
    let manual = (21.0 * 2.0 + 30.0 * 1.0) / (101.0 * 2.0);
    let fixture = (r.auc - manual).abs() <= 1e-9 && r.precision_at == 1.0;

    let boxes = (-20.0f64..100.0, -20.0f64..100.0, 0.5f64..60.0, 0.5f64..60.0)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h));
    let mut runner = TestRunner::new(PropConfig {
        cases: 256,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let property = runner.run(&prop::collection::vec((boxes.clone(), boxes), 2..30), |pairs| {
        let (p, g): (Vec<BBox>, Vec<BBox>) = pairs.into_iter().unzip();
        let r = ope_evaluate(&p, &g).unwrap();
        prop_assert!(r.success.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.precision.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(r.success.iter().chain(&r.precision).all(|v| (0.0..=1.0).contains(v)));
        Ok(())
    });
    line(
        fixture && property.is_ok(),
        format!(
            "fixture AUC {:.12} vs manual {manual:.12}; monotonicity over 256 random sequences: {}",
            r.auc,
            if property.is_ok() { "holds" } else { "violated" }
        ),
    )
}

fn main() {
    let mut lines: Vec<(String, Line)> = Vec::new();
    let mut record = |name: &str, l: Line| {
        println!("{} {name}: {}", if l.pass { "PASS" } else { "FAIL" }, l.detail);
        lines.push((name.to_string(), l));
    };
    record("1 geometry fidelity", geometry_fidelity());
    record("2 kernel oracles", kernel_oracles());
    record("3 gradient suite", gradient_suite());
    record("4 loss fixed points", loss_fixed_points());
    record("5 target assignment round trip", target_round_trip());
    record("6 CF parameter-freeness", parameter_freeness());
    record("7 toy overfit", overfit_criterion());
    let (eight, rows) = closed_loop();
    record("8 closed-loop tracking", eight);
    record("9 determinism and persistence", determinism());
    record("10 metric fixtures", metric_fixtures());

    println!("-- update oracles on the trained cf-double model");
    let [stat, shift] = update_oracles(&rows[1]);
    record("static frame", stat);
    record("shifted target", shift);

    let failed: Vec<&str> = lines.iter().filter(|(_, l)| !l.pass).map(|(n, _)| n.as_str()).collect();
    println!("{} of {} checks passed", lines.len() - failed.len(), lines.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join("; "));
        std::process::exit(1);
    }
}
