use super::*;
use layers::seeded_rng;
use ndarray::{array, Array2};
use proptest::prelude::*;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeded_rng(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn affine_identity_passthrough() {
    let mut l = Affine::zeros(3, 3);
    for i in 0..3 {
        l.w.values_mut()[i * 3 + i] = 1.0;
    }
    let stack = LayerStack::new(vec![Layer::Affine(l)]);
    let x = random_matrix(4, 3, 1);
    let (y, _) = stack.forward(&x).unwrap();
    assert_eq!(y, x);
}

#[test]
fn affine_zero_input_yields_bias() {
    let mut l = Affine::zeros(2, 3);
    l.b.values_mut().copy_from_slice(&[0.5, -1.5]);
    let (y, _) = l.forward(&Array2::zeros((1, 3))).unwrap();
    assert_eq!(y, array![[0.5, -1.5]]);
}

#[test]
fn affine_gradient_check() {
    let mut rng = seeded_rng(2);
    let mut stack = LayerStack::new(vec![Layer::Affine(Affine::random(5, 7, 0.8, &mut rng))]);
    let x = random_matrix(3, 7, 3);
    let err = grad_check(&mut stack, &x, 1e-5, 10).unwrap();
    assert!(err < 1e-6, "affine grad error {err}");
}

#[test]
fn complex_affine_identity() {
    let mut l = ComplexAffine::zeros(3, 3);
    for i in 0..3 {
        l.w_re.values_mut()[i * 3 + i] = 1.0;
    }
    let x = random_matrix(2, 6, 4);
    let (y, _) = l.forward(&x).unwrap();
    for (a, b) in y.iter().zip(x.iter()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn complex_affine_matches_beamformer() {
    use crate::beamform::{apply_beamformer, realify_snapshot};
    use num_complex::Complex64;
    let mut rng = seeded_rng(5);
    let m = 6;
    let w: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let x: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();

    // One output pair whose weight row holds w^H, i.e. conjugated weights.
    let mut l = ComplexAffine::zeros(1, m);
    for (i, wi) in w.iter().enumerate() {
        l.w_re.values_mut()[i] = wi.re;
        l.w_im.values_mut()[i] = -wi.im;
    }
    let input = Array2::from_shape_vec((1, 2 * m), realify_snapshot(&x)).unwrap();
    let (y, _) = l.forward(&input).unwrap();
    let reference = apply_beamformer(&w, &x).unwrap();
    assert!((y[(0, 0)] - reference.re).abs() < 1e-12);
    assert!((y[(0, 1)] - reference.im).abs() < 1e-12);
}

#[test]
fn complex_affine_rejects_odd_input() {
    let l = Layer::ComplexAffine(ComplexAffine::zeros(2, 3));
    assert!(l.forward(&Array2::zeros((1, 5))).is_err());
}

#[test]
fn complex_affine_gradient_check() {
    let mut rng = seeded_rng(6);
    let mut stack = LayerStack::new(vec![Layer::ComplexAffine(ComplexAffine::random(
        4, 6, 0.7, &mut rng,
    ))]);
    let x = random_matrix(3, 12, 7);
    let err = grad_check(&mut stack, &x, 1e-5, 11).unwrap();
    assert!(err < 1e-6, "complex affine grad error {err}");
}

#[test]
fn block_complex_affine_matches_dense_complex_affine() {
    // A block bank with K=1 is exactly a complex affine.
    let mut rng = seeded_rng(8);
    let block = BlockComplexAffine::random(1, 3, 4, 0.5, &mut rng);
    let mut dense = ComplexAffine::zeros(3, 4);
    dense
        .w_re
        .values_mut()
        .copy_from_slice(block.w_re.values());
    dense
        .w_im
        .values_mut()
        .copy_from_slice(block.w_im.values());
    let x = random_matrix(2, 8, 9);
    let (ya, _) = block.forward(&x).unwrap();
    let (yb, _) = dense.forward(&x).unwrap();
    for (a, b) in ya.iter().zip(yb.iter()) {
        assert!((a - b).abs() < 1e-13);
    }
}

#[test]
fn block_complex_affine_gradient_check() {
    let mut rng = seeded_rng(9);
    let mut stack = LayerStack::new(vec![Layer::BlockComplexAffine(BlockComplexAffine::random(
        3, 2, 2, 0.6, &mut rng,
    ))]);
    let x = random_matrix(2, 12, 10);
    let err = grad_check(&mut stack, &x, 1e-5, 12).unwrap();
    assert!(err < 1e-6, "block affine grad error {err}");
}

#[test]
fn block_dense_materialization_is_block_diagonal() {
    let mut rng = seeded_rng(10);
    let block = BlockComplexAffine::random(4, 2, 3, 0.5, &mut rng);
    let (re, im) = block.to_dense();
    for r in 0..8 {
        for c in 0..12 {
            let same_block = r / 2 == c / 3;
            if !same_block {
                assert_eq!(re[(r, c)], 0.0);
                assert_eq!(im[(r, c)], 0.0);
            }
        }
    }
}

#[test]
fn pow_pairs_values() {
    let l = PowPairs::new(1);
    let (y, _) = l.forward(&array![[3.0, 4.0]]).unwrap();
    assert_eq!(y, array![[25.0]]);
    let (y, _) = l.forward(&array![[0.0, 0.0]]).unwrap();
    assert_eq!(y, array![[0.0]]);
    let l2 = PowPairs::new(2);
    let (y, _) = l2.forward(&array![[1.0, -1.0, 2.0, 2.0]]).unwrap();
    assert_eq!(y, array![[2.0, 8.0]]);
}

#[test]
fn pow_pairs_rejects_odd_input() {
    let l = Layer::PowPairs(PowPairs::new(2));
    assert!(l.forward(&Array2::zeros((1, 3))).is_err());
}

#[test]
fn pow_pairs_gradient_check() {
    let mut stack = LayerStack::new(vec![Layer::PowPairs(PowPairs::new(5))]);
    let x = random_matrix(3, 10, 13);
    let err = grad_check(&mut stack, &x, 1e-5, 14).unwrap();
    assert!(err < 1e-7, "pow_pairs grad error {err}");
}

#[test]
fn maxpool_basics_and_tie_rule() {
    let l = MaxPoolGroups::new(3, 1);
    let (y, _) = l.forward(&array![[2.0, 5.0, 3.0]]).unwrap();
    assert_eq!(y, array![[5.0]]);

    let l2 = MaxPoolGroups::new(2, 1);
    let (y, cache) = l2.forward(&array![[4.0, 4.0]]).unwrap();
    assert_eq!(y, array![[4.0]]);
    let dx = l2.backward(&array![[1.0]], &cache).unwrap();
    assert_eq!(dx, array![[1.0, 0.0]], "tie routes to the lowest index");
}

#[test]
fn maxpool_gradient_check_excluding_ties() {
    let (d, k) = (12, 127);
    let mut x = random_matrix(2, d * k, 15);
    // Push each group's max clear of the runner-up so finite differences
    // never cross a tie.
    for t in 0..2 {
        for g in 0..k {
            let base = g * d;
            let mut best = base;
            for j in base + 1..base + d {
                if x[(t, j)] > x[(t, best)] {
                    best = j;
                }
            }
            x[(t, best)] += 0.01;
        }
    }
    let mut stack = LayerStack::new(vec![Layer::MaxPoolGroups(MaxPoolGroups::new(d, k))]);
    let err = grad_check(&mut stack, &x, 1e-5, 16).unwrap();
    assert!(err < 1e-6, "maxpool grad error {err}");
}

#[test]
fn relu_and_log_floor_values() {
    let relu = Relu::new(2);
    let (y, _) = relu.forward(&array![[-1.0, 2.0]]).unwrap();
    assert_eq!(y, array![[0.0, 2.0]]);

    let lf = LogFloor::new(2, 1e-7);
    let (y, cache) = lf
        .forward(&array![[std::f64::consts::E, 0.0]])
        .unwrap();
    assert!((y[(0, 0)] - 1.0).abs() < 1e-12);
    assert!((y[(0, 1)] - (1e-7f64).ln()).abs() < 1e-12);
    // Clamped region has zero gradient.
    let dx = lf.backward(&array![[1.0, 1.0]], &cache).unwrap();
    assert!((dx[(0, 0)] - 1.0 / std::f64::consts::E).abs() < 1e-12);
    assert_eq!(dx[(0, 1)], 0.0);
}

#[test]
fn relu_log_gradient_checks() {
    // Keep points away from the kinks at 0 and the log floor.
    let mut x = random_matrix(3, 6, 17);
    x.mapv_inplace(|v| if v.abs() < 0.1 { v + 0.2 } else { v });
    let mut stack = LayerStack::new(vec![Layer::Relu(Relu::new(6))]);
    assert!(grad_check(&mut stack, &x, 1e-5, 18).unwrap() < 1e-7);

    let xp = x.mapv(|v| v.abs() + 0.05);
    let mut stack = LayerStack::new(vec![Layer::LogFloor(LogFloor::new(6, 1e-7))]);
    assert!(grad_check(&mut stack, &xp, 1e-5, 19).unwrap() < 1e-6);
}

#[test]
fn lstm_zero_parameters_yield_zero_output() {
    let l = Lstm::zeros(4, 3);
    let x = random_matrix(5, 3, 20);
    let (y, _) = l.forward(&x).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_single_step_matches_cell_oracle() {
    let mut rng = seeded_rng(21);
    let l = Lstm::random(3, 2, 0.5, &mut rng);
    let x = random_matrix(1, 2, 22);
    let (y, _) = l.forward(&x).unwrap();

    // Hand-written single cell step with zero initial state.
    let h = 3;
    let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
    for j in 0..h {
        let pre = |gate: usize| -> f64 {
            let mut z = l.b.values()[gate * h + j];
            for q in 0..2 {
                z += l.w_x.values()[(gate * h + j) * 2 + q] * x[(0, q)];
            }
            z // h_prev is zero
        };
        let i = sigmoid(pre(0));
        let g = pre(2).tanh();
        let o = sigmoid(pre(3));
        let c = i * g;
        let expected = o * c.tanh();
        assert!((y[(0, j)] - expected).abs() < 1e-12);
    }
}

#[test]
fn lstm_gradient_check() {
    let mut rng = seeded_rng(23);
    let mut stack = LayerStack::new(vec![Layer::Lstm(Lstm::random(8, 5, 0.4, &mut rng))]);
    let x = random_matrix(4, 5, 24);
    let err = grad_check(&mut stack, &x, 1e-5, 25).unwrap();
    assert!(err < 1e-5, "lstm grad error {err}");
}

#[test]
fn lstm_forget_bias_initializes_to_one() {
    let mut rng = seeded_rng(26);
    let l = Lstm::random(4, 3, 0.2, &mut rng);
    for j in 0..4 {
        assert_eq!(l.b.values()[4 + j], 1.0); // forget block is rows H..2H
    }
}

#[test]
fn softmax_uniform_loss_is_log_c() {
    let (loss, grad) = softmax_xent(&[0.0; 8], 3).unwrap();
    assert!((loss - (8f64).ln()).abs() < 1e-12);
    for (j, g) in grad.iter().enumerate() {
        let expected = if j == 3 { 0.125 - 1.0 } else { 0.125 };
        assert!((g - expected).abs() < 1e-12);
    }
}

#[test]
fn softmax_saturated_loss_is_zero() {
    let mut logits = vec![0.0; 5];
    logits[2] = 1e6;
    let (loss, _) = softmax_xent(&logits, 2).unwrap();
    assert!(loss.abs() < 1e-9);
}

#[test]
fn softmax_rejects_bad_label() {
    assert!(softmax_xent(&[0.0, 0.0], 2).is_err());
    assert!(softmax_xent(&[0.0], 0).is_err());
}

#[test]
fn softmax_gradient_check() {
    let mut rng = seeded_rng(27);
    let logits: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (_, analytic) = softmax_xent(&logits, 4).unwrap();
    let eps = 1e-6;
    for j in 0..10 {
        let mut lp = logits.clone();
        lp[j] += eps;
        let mut lm = logits.clone();
        lm[j] -= eps;
        let numeric =
            (softmax_xent(&lp, 4).unwrap().0 - softmax_xent(&lm, 4).unwrap().0) / (2.0 * eps);
        assert!(
            relative_error(analytic[j], numeric) < 1e-7,
            "logit {j}: {} vs {numeric}",
            analytic[j]
        );
    }
}

#[test]
fn zero_upstream_gradient_propagates_zero() {
    let mut rng = seeded_rng(28);
    let stack = LayerStack::new(vec![
        Layer::Affine(Affine::random(6, 4, 0.5, &mut rng)),
        Layer::Relu(Relu::new(6)),
        Layer::Lstm(Lstm::random(3, 6, 0.4, &mut rng)),
    ]);
    let x = random_matrix(4, 4, 29);
    let (y, caches) = stack.forward(&x).unwrap();
    let mut store = GradStore::for_stack(&stack);
    let dx = stack
        .backward(&Array2::zeros(y.raw_dim()), &caches, &mut store)
        .unwrap();
    assert!(dx.iter().all(|&v| v == 0.0));
    assert!(store.bufs.iter().all(|b| b.iter().all(|&g| g == 0.0)));
}

#[test]
fn gradients_accumulate_across_backward_calls() {
    let mut rng = seeded_rng(30);
    let stack = LayerStack::new(vec![Layer::Affine(Affine::random(3, 2, 0.5, &mut rng))]);
    let x = random_matrix(2, 2, 31);
    let (y, caches) = stack.forward(&x).unwrap();
    let gy = Array2::from_elem(y.raw_dim(), 1.0);
    let mut once = GradStore::for_stack(&stack);
    stack.backward(&gy, &caches, &mut once).unwrap();
    let mut twice = GradStore::for_stack(&stack);
    stack.backward(&gy, &caches, &mut twice).unwrap();
    stack.backward(&gy, &caches, &mut twice).unwrap();
    for (a, b) in once.bufs.iter().zip(twice.bufs.iter()) {
        for (ai, bi) in a.iter().zip(b.iter()) {
            assert!((2.0 * ai - bi).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = seeded_rng(32);
    let stack = LayerStack::new(vec![
        Layer::ComplexAffine(ComplexAffine::random(3, 4, 0.5, &mut rng)),
        Layer::PowPairs(PowPairs::new(3)),
        Layer::LogFloor(LogFloor::new(3, 1e-7)),
    ]);
    let x = random_matrix(5, 8, 33);
    let (y1, _) = stack.forward(&x).unwrap();
    let (y2, _) = stack.forward(&x).unwrap();
    assert_eq!(y1, y2);
}

#[test]
fn tensor_rejects_non_finite_values() {
    assert!(DiffTensor::from_values(&[2], vec![1.0, f64::NAN]).is_err());
    assert!(DiffTensor::from_values(&[2], vec![1.0]).is_err());
}

proptest! {
    #[test]
    fn pow_pairs_output_is_non_negative(
        xs in proptest::collection::vec(-100.0f64..100.0, 2..20)
    ) {
        let n = xs.len() / 2;
        let x = Array2::from_shape_vec((1, 2 * n), xs[..2 * n].to_vec()).unwrap();
        let (y, _) = PowPairs::new(n).forward(&x).unwrap();
        prop_assert!(y.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn maxpool_dominates_group_members(
        xs in proptest::collection::vec(-50.0f64..50.0, 6..30)
    ) {
        let g = 3;
        let n_groups = xs.len() / g;
        let x = Array2::from_shape_vec((1, g * n_groups), xs[..g * n_groups].to_vec()).unwrap();
        let (y, _) = MaxPoolGroups::new(g, n_groups).forward(&x).unwrap();
        for group in 0..n_groups {
            for j in 0..g {
                prop_assert!(y[(0, group)] >= x[(0, group * g + j)]);
            }
        }
    }
}
