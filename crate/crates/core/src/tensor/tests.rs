use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::error::Error;
use crate::testutil::rand_tensor;

fn t(shape: &[usize], data: &[f64]) -> NdTensor {
    NdTensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Weighted sum with fixed pseudo-random weights, so that gradients are not
/// all equal.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> crate::Result<Var> {
    let w = tape.constant(rand_tensor(tape.shape(y), seed));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

#[test]
fn add_and_mul_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2], &[3.0, 4.0]));
    let c = tape.add(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[4.0, 6.0]);

    let x = tape.constant(rand_tensor(&[3, 2], 1));
    let zero = tape.constant(NdTensor::scalar(0.0));
    let z = tape.mul(x, zero).unwrap();
    assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
}

#[test]
fn exp_matches_high_precision_value() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1], &[0.55]));
    let y = tape.exp(x).unwrap();
    // e^0.55 = 1.7332530178673952368...
    assert!((tape.value(y).data()[0] - 1.733_253_017_867_395_2).abs() < 1e-15);
}

#[test]
fn elementwise_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(NdTensor::zeros(&[2, 3]));
    let b = tape.constant(NdTensor::zeros(&[3, 2]));
    match tape.add(a, b) {
        Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![3, 2]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
    let neg = tape.constant(t(&[2], &[1.0, -1.0]));
    assert!(matches!(tape.sqrt(neg), Err(Error::Domain { .. })));
    assert!(matches!(tape.powf(neg, 0.5), Err(Error::Domain { .. })));
    assert!(tape.powf(neg, 2.0).is_ok());
}

#[test]
fn non_finite_values_abort_with_op_name() {
    let mut tape = Tape::new();
    tape.set_check_finite(true);
    let x = tape.constant(t(&[1], &[1000.0]));
    assert_eq!(tape.exp(x), Err(Error::NonFinite { op: "exp" }));
}

#[test]
fn elementwise_gradients() {
    let x = rand_tensor(&[3, 4], 7).map(|v| v + 1.5); // positive for sqrt/pow
    let y = rand_tensor(&[3, 4], 8);
    let checks: Vec<(&str, f64)> = vec![
        ("sub", finite_diff_check_many(|tp, v| { let r = tp.sub(v[0], v[1])?; weighted_sum(tp, r, 1) }, &[x.clone(), y.clone()], 1e-5, None).unwrap().max_rel_err),
        ("mul", finite_diff_check_many(|tp, v| { let r = tp.mul(v[0], v[1])?; weighted_sum(tp, r, 2) }, &[x.clone(), y.clone()], 1e-5, None).unwrap().max_rel_err),
        ("scale", finite_diff_check(|tp, v| { let r = tp.scale(v, -2.5)?; weighted_sum(tp, r, 3) }, &x, 1e-5).unwrap()),
        ("abs", finite_diff_check(|tp, v| { let r = tp.abs(v)?; weighted_sum(tp, r, 4) }, &y, 1e-5).unwrap()),
        ("exp", finite_diff_check(|tp, v| { let r = tp.exp(v)?; weighted_sum(tp, r, 5) }, &y, 1e-5).unwrap()),
        ("sqrt", finite_diff_check(|tp, v| { let r = tp.sqrt(v)?; weighted_sum(tp, r, 6) }, &x, 1e-5).unwrap()),
        ("power", finite_diff_check(|tp, v| { let r = tp.powf(v, 2.7)?; weighted_sum(tp, r, 7) }, &x, 1e-5).unwrap()),
        ("gelu", finite_diff_check(|tp, v| { let r = tp.gelu(v)?; weighted_sum(tp, r, 8) }, &y, 1e-5).unwrap()),
    ];
    for (name, err) in checks {
        assert!(err < 1e-6, "{name}: rel err {err}");
    }
}

#[test]
fn scalar_broadcast_gradient() {
    let x = rand_tensor(&[2, 3], 3);
    let c = t(&[1], &[0.7]);
    let r = finite_diff_check_many(
        |tp, v| {
            let p = tp.mul(v[0], v[1])?;
            let q = tp.add(p, v[1])?;
            weighted_sum(tp, q, 9)
        },
        &[x, c],
        1e-5,
        None,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-7, "{r:?}");
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let x = rand_tensor(&[3, 5], 11);
    let i = tape.constant(NdTensor::eye(3));
    let xv = tape.constant(x.clone());
    let y = tape.matmul(i, xv).unwrap();
    assert_eq!(tape.value(y), &x);

    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(t(&[2, 1], &[1.0, 1.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c), &t(&[2, 1], &[3.0, 7.0]));

    let bad = tape.constant(NdTensor::zeros(&[3, 1]));
    assert!(matches!(tape.matmul(a, bad), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn matmul_gradients() {
    let a = rand_tensor(&[4, 5], 21);
    let b = rand_tensor(&[5, 3], 22);
    let r = finite_diff_check_many(|tp, v| { let c = tp.matmul(v[0], v[1])?; weighted_sum(tp, c, 23) }, &[a, b], 1e-5, None).unwrap();
    assert!(r.max_rel_err < 1e-6, "{r:?}");

    // batched a·bᵀ
    let a = rand_tensor(&[2, 3, 4], 24);
    let b = rand_tensor(&[2, 5, 4], 25);
    let r = finite_diff_check_many(|tp, v| { let c = tp.matmul_nt(v[0], v[1])?; weighted_sum(tp, c, 26) }, &[a, b], 1e-5, None).unwrap();
    assert!(r.max_rel_err < 1e-6, "{r:?}");
}

#[test]
fn matmul_nt_equals_explicit_transpose() {
    let a = rand_tensor(&[2, 3, 4], 31);
    let b = rand_tensor(&[2, 5, 4], 32);
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a), tape.constant(b.clone()));
    let c1 = tape.matmul_nt(av, bv).unwrap();
    let bt = tape.constant(b.permute(&[0, 2, 1]).unwrap());
    let c2 = tape.matmul(av, bt).unwrap();
    for (x, y) in tape.value(c1).data().iter().zip(tape.value(c2).data()) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(NdTensor::zeros(&[3]));
    let y = tape.softmax(x, 0).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = tape.constant(t(&[2], &[1000.0, 0.0]));
    let y = tape.softmax(x, 0).unwrap();
    let d = tape.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-15 && d[1] < 1e-300);
    assert!(matches!(tape.softmax(x, 1), Err(Error::Shape { .. })));
}

#[test]
fn softmax_gradient_both_axes() {
    let x = rand_tensor(&[2, 4], 41);
    for axis in 0..2 {
        let err = finite_diff_check(|tp, v| { let y = tp.softmax(v, axis)?; weighted_sum(tp, y, 42) }, &x, 1e-5).unwrap();
        assert!(err < 1e-6, "axis {axis}: {err}");
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(NdTensor::full(&[2, 4], 3.0));
    let g1 = tape.constant(NdTensor::ones(&[4]));
    let b0 = tape.constant(NdTensor::zeros(&[4]));
    let y = tape.layer_norm(x, g1, b0, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let xr = tape.constant(rand_tensor(&[2, 4], 5));
    let g0 = tape.constant(NdTensor::zeros(&[4]));
    let b5 = tape.constant(NdTensor::full(&[4], 5.0));
    let y = tape.layer_norm(xr, g0, b5, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 5.0));

    assert!(matches!(tape.layer_norm(xr, g1, b0, 0.0), Err(Error::Param(_))));
}

#[test]
fn layer_norm_normalizes_and_differentiates() {
    let x = rand_tensor(&[2, 3, 4], 51);
    let g = rand_tensor(&[4], 52);
    let b = rand_tensor(&[4], 53);
    let mut tape = Tape::new();
    let (xv, gv, bv) = (tape.constant(x.clone()), tape.constant(NdTensor::ones(&[4])), tape.constant(NdTensor::zeros(&[4])));
    let y = tape.layer_norm(xv, gv, bv, 1e-12).unwrap();
    for row in tape.value(y).data().chunks(4) {
        let mean: f64 = row.iter().sum::<f64>() / 4.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }
    let r = finite_diff_check_many(|tp, v| { let y = tp.layer_norm(v[0], v[1], v[2], 1e-5)?; weighted_sum(tp, y, 54) }, &[x, g, b], 1e-5, None).unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn conv1x1_examples() {
    let x = rand_tensor(&[3, 4, 5], 61);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(NdTensor::eye(5));
    let b = tape.constant(NdTensor::zeros(&[5]));
    let y = tape.conv1x1(xv, w, Some(b)).unwrap();
    assert_eq!(tape.value(y), &x);

    // 1×1 spatial input is a plain vector-matrix product
    let v = tape.constant(t(&[1, 1, 2], &[1.0, 2.0]));
    let w2 = tape.constant(t(&[2, 3], &[1.0, 0.0, 2.0, 0.0, 1.0, 3.0]));
    let y = tape.conv1x1(v, w2, None).unwrap();
    assert_eq!(tape.value(y), &t(&[1, 1, 3], &[1.0, 2.0, 8.0]));

    let bad = tape.constant(NdTensor::zeros(&[4, 2]));
    assert!(matches!(tape.conv1x1(xv, bad, None), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn conv1x1_equals_matmul_on_flattened_pixels() {
    let x = rand_tensor(&[4, 3, 6], 71);
    let w = rand_tensor(&[6, 5], 72);
    let bias = rand_tensor(&[5], 73);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(bias.clone()));
    let y = tape.conv1x1(xv, wv, Some(bv)).unwrap();
    let flat = tape.constant(x.reshape(&[12, 6]).unwrap());
    let prod = tape.matmul(flat, wv).unwrap();
    let expect: Vec<f64> = tape.value(prod).data().chunks(5).flat_map(|row| row.iter().zip(bias.data()).map(|(a, b)| a + b)).collect();
    for (a, b) in tape.value(y).data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
    let r = finite_diff_check_many(|tp, v| { let y = tp.conv1x1(v[0], v[1], Some(v[2]))?; weighted_sum(tp, y, 74) }, &[x, w, bias], 1e-5, None).unwrap();
    assert!(r.max_rel_err < 1e-6, "{r:?}");
}

#[test]
fn movement_ops_round_trip_and_differentiate() {
    let x = rand_tensor(&[4, 6, 3], 81);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let r0 = tape.roll(xv, &[0, 0, 0]).unwrap();
    assert_eq!(tape.value(r0), &x);
    let rf = tape.roll(xv, &[4, 6, 0]).unwrap();
    assert_eq!(tape.value(rf), &x);
    let r = tape.roll(xv, &[-3, 2, 0]).unwrap();
    let back = tape.roll(r, &[3, -2, 0]).unwrap();
    assert_eq!(tape.value(back), &x);

    let checks: Vec<(&str, f64)> = vec![
        ("reshape", finite_diff_check(|tp, v| { let y = tp.reshape(v, &[24, 3])?; weighted_sum(tp, y, 1) }, &x, 1e-5).unwrap()),
        ("permute", finite_diff_check(|tp, v| { let y = tp.permute(v, &[2, 0, 1])?; weighted_sum(tp, y, 2) }, &x, 1e-5).unwrap()),
        ("roll", finite_diff_check(|tp, v| { let y = tp.roll(v, &[1, -2, 0])?; weighted_sum(tp, y, 3) }, &x, 1e-5).unwrap()),
        ("slice", finite_diff_check(|tp, v| { let y = tp.slice(v, &[1..3, 0..6, 1..2])?; weighted_sum(tp, y, 4) }, &x, 1e-5).unwrap()),
        ("pad zero", finite_diff_check(|tp, v| { let y = tp.pad(v, &[(1, 2), (0, 1), (0, 0)], PadMode::Zero)?; weighted_sum(tp, y, 5) }, &x, 1e-5).unwrap()),
        ("pad reflect", finite_diff_check(|tp, v| { let y = tp.pad(v, &[(2, 3), (1, 1), (0, 0)], PadMode::Reflect)?; weighted_sum(tp, y, 6) }, &x, 1e-5).unwrap()),
        ("concat", finite_diff_check(|tp, v| { let s = tp.scale(v, 2.0)?; let y = tp.concat(&[v, s, v], 1)?; weighted_sum(tp, y, 7) }, &x, 1e-5).unwrap()),
    ];
    for (name, err) in checks {
        assert!(err < 1e-7, "{name}: {err}");
    }
    assert!(matches!(tape.slice(xv, &[0..5, 0..1, 0..1]), Err(Error::Bounds { .. })));
}

#[test]
fn select_routes_gradient() {
    let a = rand_tensor(&[6], 91);
    let b = rand_tensor(&[6], 92);
    let mask = vec![true, false, true, true, false, false];
    let mut tape = Tape::new();
    let (av, bv) = (tape.param(a), tape.param(b));
    let s = tape.select(mask.clone(), av, bv).unwrap();
    let l = tape.sum(s).unwrap();
    tape.backward(l).unwrap();
    let ga = tape.grad(av).unwrap();
    let gb = tape.grad(bv).unwrap();
    for (j, &m) in mask.iter().enumerate() {
        assert_eq!(ga.data()[j], if m { 1.0 } else { 0.0 });
        assert_eq!(gb.data()[j], if m { 0.0 } else { 1.0 });
    }
}

#[test]
fn backward_examples() {
    let x = rand_tensor(&[3, 2], 101);
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let s = tape.sum(xv).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(xv).unwrap().data().iter().all(|&g| g == 1.0));
    assert!(matches!(tape.backward(s), Err(Error::State(_))));
    tape.reset_grads();
    tape.backward(s).unwrap();

    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let sq = tape.mul(xv, xv).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    let g = tape.grad(xv).unwrap();
    for (g, x) in g.data().iter().zip(x.data()) {
        assert_eq!(*g, 2.0 * x);
    }

    assert!(matches!(tape.backward(sq), Err(Error::Shape { .. })));

    // three-op chain: mean(exp(0.5 x) * x)
    let err = finite_diff_check(
        |tp, v| {
            let h = tp.scale(v, 0.5)?;
            let e = tp.exp(h)?;
            let p = tp.mul(e, v)?;
            tp.mean(p)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(NdTensor::ones(&[2]));
    let p = tape.param(NdTensor::ones(&[2]));
    let y = tape.mul(c, p).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert!(tape.grad(p).is_some());
}

#[test]
fn finite_diff_check_of_linear_function_is_exact() {
    let x = rand_tensor(&[5, 3], 111);
    let err = finite_diff_check(|tp, v| tp.sum(v), &x, 1e-5).unwrap();
    assert!(err < 1e-10, "{err}");
    assert!(matches!(finite_diff_check(|tp, v| tp.scale(v, 1.0), &x, 1e-5), Err(Error::Shape { .. })));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(seed in 0u64..1000, rows in 1usize..5, cols in 1usize..9, scale in 0.1f64..50.0) {
            let x = rand_tensor(&[rows, cols], seed).map(|v| v * scale);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let y = tape.softmax(xv, 1).unwrap();
            for row in tape.value(y).data().chunks(cols) {
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn movement_round_trips_are_bit_exact(seed in 0u64..1000, h in 1usize..6, w in 1usize..6, dy in -10isize..10, dx in -10isize..10) {
            let x = rand_tensor(&[h, w, 2], seed);
            prop_assert_eq!(&x.roll(&[dy, dx, 0]).unwrap().roll(&[-dy, -dx, 0]).unwrap(), &x);
            prop_assert_eq!(&x.permute(&[2, 0, 1]).unwrap().permute(&[1, 2, 0]).unwrap(), &x);
            prop_assert_eq!(&x.reshape(&[h * w * 2]).unwrap().reshape(&[h, w, 2]).unwrap(), &x);
        }

        #[test]
        fn sum_gradient_is_all_ones(dims in proptest::collection::vec(1usize..4, 1..4)) {
            let mut tape = Tape::new();
            let x = tape.param(NdTensor::zeros(&dims));
            let s = tape.sum(x).unwrap();
            tape.backward(s).unwrap();
            prop_assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
        }
    }
}
