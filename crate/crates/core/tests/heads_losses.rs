use dcff_core::bbox::BBox;
use dcff_core::config::{HeadGeometry, ModelConfig};
use dcff_core::heads::{self, assign_targets, decode_box};
use dcff_core::losses;
use dcff_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reg_at(t: &Tensor, i: usize) -> dcff_core::RegVector {
    let plane = t.numel() / 4;
    let d = t.data();
    dcff_core::RegVector::from_array([d[i], d[plane + i], d[2 * plane + i], d[3 * plane + i]])
}

#[test]
fn decode_inverts_assignment_on_random_boxes() {
    let geo = ModelConfig::toy().head_geometry().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut positives = 0;
    for _ in 0..1000 {
        let (x0, y0) = (rng.gen_range(-10.0..60.0), rng.gen_range(-10.0..60.0));
        let gt = BBox::new(x0, y0, x0 + rng.gen_range(1.0..40.0), y0 + rng.gen_range(1.0..40.0));
        let t = assign_targets(&geo, &gt).unwrap();
        for (i, &p) in t.positive.iter().enumerate() {
            if p {
                positives += 1;
                let b = decode_box(i % geo.width, i / geo.width, reg_at(&t.reg, i), geo.stride, geo.offset);
                for (a, e) in [(b.x0, gt.x0), (b.y0, gt.y0), (b.x1, gt.x1), (b.y1, gt.y1)] {
                    assert!((a - e).abs() <= 1e-9, "{b:?} vs {gt:?}");
                }
            }
        }
    }
    assert!(positives > 1000);
}

/// 3×3 map, two positives, written out term by term.
#[test]
fn hand_fixture_total_loss() {
    let geo = HeadGeometry {
        height: 3,
        width: 3,
        stride: 8,
        offset: 4.0,
    };
    // points: 4, 12, 20 on each axis; the box covers (12,12) and (20,12)
    let gt = BBox::new(10.0, 8.0, 24.0, 16.0);
    let targets = assign_targets(&geo, &gt).unwrap();
    let pos: Vec<usize> = (0..9).filter(|&i| targets.positive[i]).collect();
    assert_eq!(pos, vec![4, 5]);

    let bg: [f64; 9] = [0.3, -0.2, 0.1, 0.5, 0.0, -0.4, 0.2, 0.7, -0.1];
    let fg: [f64; 9] = [-0.5, 0.4, 0.0, 0.1, 1.2, 0.9, -0.3, 0.2, 0.6];
    let cls = Tensor::new(&[2, 3, 3], bg.iter().chain(&fg).copied().collect()).unwrap();

    let nll = |i: usize, target_fg: bool| {
        let (a, b) = (bg[i], fg[i]);
        let z = a.exp() + b.exp();
        -(if target_fg { b.exp() / z } else { a.exp() / z }).ln()
    };
    let pos_mean = (nll(4, true) + nll(5, true)) / 2.0;
    let neg_mean = [0, 1, 2, 3, 6, 7, 8].iter().map(|&i| nll(i, false)).sum::<f64>() / 7.0;
    let expect_cls = 0.5 * pos_mean + 0.5 * neg_mean;

    // predictions at the positives, as boxes around their anchor points
    let preds = [(4usize, [1.0, 3.0, 10.0, 5.0]), (5usize, [9.0, 4.0, 3.0, 4.0])];
    let mut reg = vec![1.0; 36];
    for (i, d) in preds {
        for k in 0..4 {
            reg[k * 9 + i] = d[k];
        }
    }
    let reg = Tensor::new(&[4, 3, 3], reg).unwrap();
    let anchors = [(12.0, 12.0), (20.0, 12.0)];
    let expect_reg = preds
        .iter()
        .zip(anchors)
        .map(|((_, [l, t, r, b]), (x, y))| -BBox::new(x - l, y - t, x + r, y + b).iou(&gt).ln())
        .sum::<f64>()
        / 2.0;

    let got = heads::total_loss(&cls, &reg, &targets, true).unwrap();
    assert!((got.cls - expect_cls).abs() < 1e-9, "{} vs {expect_cls}", got.cls);
    assert!((got.reg - expect_reg).abs() < 1e-9, "{} vs {expect_reg}", got.reg);
    assert!((got.total - expect_cls - expect_reg).abs() < 1e-9);
    assert!(!got.reg_skipped);
}

#[test]
fn perfect_outputs_drive_total_loss_to_zero() {
    let geo = ModelConfig::toy().head_geometry().unwrap();
    let gt = BBox::new(20.0, 20.0, 44.0, 40.0);
    let t = assign_targets(&geo, &gt).unwrap();
    let plane = geo.height * geo.width;
    let cls = Tensor::from_fn(&[2, geo.height, geo.width], |i| {
        let fg = i >= plane;
        let p = t.positive[i % plane];
        if fg == p {
            30.0
        } else {
            -30.0
        }
    })
    .unwrap();
    let l = heads::total_loss(&cls, &t.reg, &t, true).unwrap();
    assert!(l.total < 1e-12, "{l:?}");
}

proptest! {
    #[test]
    fn softmax_ce_is_shift_invariant(
        logits in proptest::collection::vec(-5.0f64..5.0, 18),
        shifts in proptest::collection::vec(-20.0f64..20.0, 9),
        mask in proptest::collection::vec(any::<bool>(), 9),
    ) {
        let a = Tensor::new(&[2, 3, 3], logits.clone()).unwrap();
        let shifted: Vec<f64> = logits.iter().enumerate().map(|(i, v)| v + shifts[i % 9]).collect();
        let b = Tensor::new(&[2, 3, 3], shifted).unwrap();
        for balanced in [true, false] {
            let la = losses::softmax_cross_entropy(&a, &mask, balanced).unwrap();
            let lb = losses::softmax_cross_entropy(&b, &mask, balanced).unwrap();
            prop_assert!((la - lb).abs() <= 1e-12 * la.abs().max(1.0));
        }
    }

    #[test]
    fn losses_are_finite_and_non_negative(v in proptest::collection::vec(-800.0f64..800.0, 9)) {
        let r = Tensor::new(&[1, 3, 3], v).unwrap();
        let labels = Tensor::from_fn(&[1, 3, 3], |i| if i % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        let l = losses::logistic_loss(&r, &labels).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }
}
