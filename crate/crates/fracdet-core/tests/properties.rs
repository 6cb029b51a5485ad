//! Property tests for the operator invariants that hold on all inputs.

use fracdet_core::detector::{iou, BoundingBox};
use fracdet_core::dfa::{build_rel_pos, Branch, DfaConfig};
use fracdet_core::ops::{self, PoolMode, PoolWindow};
use fracdet_core::tensor::Tensor;
use proptest::prelude::*;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(data in prop::collection::vec(-15.0f64..15.0, 24)) {
        // Strict (0,1) bounds hold for moderate logit spreads; beyond ~36
        // the dominant output saturates to 1.0 in f64, which is the
        // expected finite-precision limit rather than an operator bug.
        let x = Tensor::new(&[4, 6], data).unwrap();
        let y = ops::softmax(&x, 1).unwrap();
        for row in y.data().chunks(6) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn softmax_is_shift_invariant(data in finite_vec(8), shift in -100.0f64..100.0) {
        let x = Tensor::new(&[8], data.clone()).unwrap();
        let shifted = Tensor::new(&[8], data.iter().map(|v| v + shift).collect()).unwrap();
        let a = ops::softmax(&x, 0).unwrap();
        let b = ops::softmax(&shifted, 0).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn l2_normalize_slices_have_unit_norm_or_stay_tiny(data in finite_vec(15)) {
        let x = Tensor::new(&[3, 5], data).unwrap();
        let y = ops::l2_normalize(&x, 1, 1e-12).unwrap();
        for (orig, out) in x.data().chunks(5).zip(y.data().chunks(5)) {
            let in_norm: f64 = orig.iter().map(|v| v * v).sum::<f64>().sqrt();
            let out_norm: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            if in_norm > 1e-12 {
                prop_assert!((out_norm - 1.0).abs() < 1e-10);
            } else {
                prop_assert!(out_norm <= in_norm * 1.0001 + 1e-300);
            }
        }
    }

    #[test]
    fn delta_kernel_conv_is_identity(
        data in finite_vec(2 * 5 * 7),
        k in prop::sample::select(vec![1usize, 3, 5]),
    ) {
        let x = Tensor::new(&[1, 2, 5, 7], data).unwrap();
        let mut kernel = Tensor::zeros(&[2, 2, k, k]);
        for c in 0..2 {
            let idx = kernel.idx4(c, c, k / 2, k / 2);
            kernel.data_mut()[idx] = 1.0;
        }
        let y = ops::conv2d(&x, &kernel, None, 1, ops::Padding::Same).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn global_avg_bounded_by_max(data in finite_vec(2 * 4 * 4)) {
        let x = Tensor::new(&[1, 2, 4, 4], data).unwrap();
        let avg = ops::global_pool(&x, PoolMode::Avg).unwrap();
        let max = ops::global_pool(&x, PoolMode::Max).unwrap();
        for (a, m) in avg.data().iter().zip(max.data().iter()) {
            prop_assert!(a <= &(m + 1e-12));
        }
    }

    #[test]
    fn gather_scatter_are_adjoint(
        x_data in finite_vec(12),
        y_data in finite_vec(5),
        idx in prop::collection::vec(0usize..12, 5),
    ) {
        // <gather(x, idx), y> == <x, scatter_add(y, idx)>
        let x = Tensor::new(&[12], x_data).unwrap();
        let y = Tensor::new(&[5], y_data).unwrap();
        let gx = ops::gather(&x, &idx).unwrap();
        let sy = ops::scatter_add(&y, &idx, 12).unwrap();
        let lhs: f64 = gx.data().iter().zip(y.data().iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(sy.data().iter()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn rel_pos_components_bounded(
        h in 1usize..12,
        w in 1usize..12,
        ratio in 1usize..5,
    ) {
        let mut cfg = DfaConfig::new(4);
        cfg.global_pool_ratio = ratio;
        for branch in [Branch::Local, Branch::Global] {
            let table = build_rel_pos(h, w, branch, &cfg);
            prop_assert!(table.offsets.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        }
        // Exactly zero iff the coordinates coincide (local branch).
        let table = build_rel_pos(h, w, Branch::Local, &cfg);
        let t = h * w;
        for q in 0..t {
            for k in 0..t {
                let o = (q * t + k) * 2;
                let zero = table.offsets[o] == 0.0 && table.offsets[o + 1] == 0.0;
                let same = (q / w == k / w || h == 1) && (q % w == k % w || w == 1);
                prop_assert_eq!(zero, same);
            }
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        ax in 0.0f64..50.0, ay in 0.0f64..50.0, aw in 0.1f64..30.0, ah in 0.1f64..30.0,
        bx in 0.0f64..50.0, by in 0.0f64..50.0, bw in 0.1f64..30.0, bh in 0.1f64..30.0,
    ) {
        let a = BoundingBox::new(ax, ay, ax + aw, ay + ah);
        let b = BoundingBox::new(bx, by, bx + bw, by + bh);
        let ab = iou(&a, &b);
        let ba = iou(&b, &a);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_partitions_mass(data in finite_vec(40), p in 0.0f64..0.9) {
        use fracdet_core::rng::Rng;
        let x = Tensor::new(&[40], data).unwrap();
        let mut rng = Rng::seeded(7);
        let y = ops::dropout(&x, p, &mut rng, true).unwrap();
        let keep = 1.0 / (1.0 - p);
        for (a, b) in x.data().iter().zip(y.data().iter()) {
            // Every element is either dropped or scaled by 1/(1-p).
            prop_assert!(*b == 0.0 || (b - a * keep).abs() < 1e-12);
        }
    }
}
